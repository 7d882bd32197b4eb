"""SGD training loop that logs a per-epoch Maximum Gain curve.

After every epoch the loop evaluates train/validation loss and error, saves
a bit-exact snapshot, probes the snapshot with a preprocessed impulse image,
and appends one CSV row.  Everything is a pure function of (config, data),
so identical configs reproduce identical logs byte for byte.

CSV schema (one row per completed epoch):
    epoch,train_loss,train_err,val_loss,val_err,max_gain_db,snapshot_path
Floats are written with repr() so they re-read exactly; snapshot paths are
relative to the run directory.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import network as N
from .errors import ConfigError, DivergenceError
from .layers import logloss_batch, softmax_forward
from .spectral import ProbeConfig, impulse_image, mean_gain, probe

CSV_HEADER = "epoch,train_loss,train_err,val_loss,val_err,max_gain_db,snapshot_path"
EVAL_BATCH = 500


@dataclass(frozen=True)
class TrainConfig:
    arch: str
    dataset: str
    lr: float
    epochs: int
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 100
    seed: int = 0
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_err: float
    val_loss: float
    val_err: float
    max_gain_db: float
    snapshot_path: str


@dataclass
class GainCurve:
    """Per-epoch Maximum Gain sequence with aligned loss/error series."""

    records: list[EpochRecord]
    config: dict = field(default_factory=dict)
    diverged: bool = False
    source: str = ""

    def __post_init__(self):
        epochs = [r.epoch for r in self.records]
        if any(b - a != 1 for a, b in zip(epochs, epochs[1:])):
            raise ConfigError(f"epoch indices must be consecutive, got {epochs}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records])

    @property
    def gains(self) -> np.ndarray:
        return np.array([r.max_gain_db for r in self.records])

    @property
    def val_loss(self) -> np.ndarray:
        return np.array([r.val_loss for r in self.records])

    @property
    def val_err(self) -> np.ndarray:
        return np.array([r.val_err for r in self.records])

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    @property
    def train_err(self) -> np.ndarray:
        return np.array([r.train_err for r in self.records])


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(
    net: N.Network,
    batch: tuple[np.ndarray, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    state: list | None,
) -> tuple[N.Network, list]:
    """One SGD update: v <- momentum*v - lr*(grad + wd*w); w <- w + v.

    Gradients are averaged over the batch.  Raises DivergenceError on any
    non-finite gradient.
    """
    images, labels = batch
    n = images.shape[3]
    if n < 1:
        raise ConfigError("empty batch")
    trace = N.forward(net, images)
    z = softmax_forward(trace.output)
    # Gradient of the mean log loss with respect to the logits: z - onehot.
    # Algebraically identical to chaining logloss_backward through
    # softmax_backward, but stays finite when the softmax saturates.
    grad = z.copy()
    grad[labels, np.arange(n)] -= 1.0
    back = N.backward_projected(net, trace, grad / n)

    if state is None:
        state = [
            (np.zeros_like(s.weights), np.zeros_like(s.bias)) if s.has_params else None
            for s in net.layers
        ]
    new_layers = []
    new_state = []
    for spec, derivs, vel in zip(net.layers, back.param_derivatives, state):
        if not spec.has_params:
            new_layers.append(spec)
            new_state.append(None)
            continue
        dw, db = derivs
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise DivergenceError("non-finite gradient; aborting step")
        vw, vb = vel
        vw = momentum * vw - lr * (dw + weight_decay * spec.weights)
        vb = momentum * vb - lr * (db + weight_decay * spec.bias)
        new_layers.append(dataclasses.replace(spec, weights=spec.weights + vw, bias=spec.bias + vb))
        new_state.append((vw, vb))
    return net.with_layers(new_layers), new_state


def evaluate(net: N.Network, ds: D.Dataset) -> tuple[float, float]:
    """Mean log loss and misclassification rate over the whole dataset."""
    total_loss = 0.0
    wrong = 0
    for start in range(0, ds.size, EVAL_BATCH):
        images = ds.images[:, :, :, start:start + EVAL_BATCH]
        labels = ds.labels[start:start + EVAL_BATCH]
        logits = N.forward(net, np.ascontiguousarray(images)).output
        losses, _ = logloss_batch(softmax_forward(logits), labels)
        total_loss += float(losses.sum())
        wrong += int((logits.argmax(axis=0) != labels).sum())
    return total_loss / ds.size, wrong / ds.size


# ---------------------------------------------------------------------------
# training loop


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_row(r: EpochRecord) -> str:
    return ",".join([
        str(r.epoch), _fmt(r.train_loss), _fmt(r.train_err),
        _fmt(r.val_loss), _fmt(r.val_err), _fmt(r.max_gain_db), r.snapshot_path,
    ])


def train(
    config: TrainConfig,
    train_ds: D.Dataset,
    val_ds: D.Dataset,
    out_dir,
    log=print,
) -> GainCurve:
    """Run the full training protocol and return the gain curve.

    Divergence (non-finite loss or gradient) stops the run, is noted in
    run.log and a DIVERGED marker file, and yields a curve with the rows
    completed so far rather than an exception.
    """
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    log_path = out / "run.log"

    def logline(msg: str) -> None:
        with open(log_path, "a") as f:
            f.write(msg + "\n")
        if log is not None:
            log(msg)

    net = N.init_weights(config.arch, config.seed)
    mean = D.mean_image(train_ds)
    train_p = D.preprocess(train_ds, mean)
    val_p = D.preprocess(val_ds, mean)
    net = dataclasses.replace(
        net,
        mean_image=mean,
        meta={**net.meta, "dataset": config.dataset, "probe": dataclasses.asdict(config.probe)},
    )
    h, w, c = net.input_shape
    impulse = impulse_image(h, w, c, config.probe.impulse_amplitude) - mean

    with open(csv_path, "w") as f:
        f.write(CSV_HEADER + "\n")

    records: list[EpochRecord] = []
    state = None
    diverged = False
    for epoch in range(1, config.epochs + 1):
        t0 = time.time()
        try:
            for batch in D.shuffled_batches(train_p, config.batch_size, config.seed, epoch):
                net, state = sgd_step(
                    net, batch, config.lr, config.momentum, config.weight_decay, state
                )
            train_loss, train_err = evaluate(net, train_p)
            val_loss, val_err = evaluate(net, val_p)
            if not np.isfinite([train_loss, val_loss]).all():
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
        except DivergenceError as e:
            diverged = True
            (out / "DIVERGED").write_text(str(e) + "\n")
            logline(f"epoch {epoch}: diverged ({e})")
            break

        net = dataclasses.replace(net, meta={**net.meta, "epoch": epoch})
        snap_rel = f"snapshots/epoch_{epoch:03d}.snap"
        N.save_snapshot(net, out / snap_rel)
        gain = mean_gain(probe(net, impulse, config.probe))
        rec = EpochRecord(epoch, train_loss, train_err, val_loss, val_err, gain, snap_rel)
        records.append(rec)
        with open(csv_path, "a") as f:
            f.write(csv_row(rec) + "\n")
        logline(
            f"epoch {epoch}/{config.epochs}: train loss {train_loss:.4f} err {train_err:.4f} "
            f"| val loss {val_loss:.4f} err {val_err:.4f} | gain {gain:+.2f} dB "
            f"({time.time() - t0:.1f}s)"
        )

    return GainCurve(
        records=records,
        config=dataclasses.asdict(config),
        diverged=diverged,
        source=str(csv_path),
    )


def load_gain_curve(csv_path) -> GainCurve:
    """Re-read a metrics.csv written by train()."""
    path = Path(csv_path)
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: not a metrics CSV (bad header)")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 7:
            raise ConfigError(f"{path}: malformed row {line!r}")
        records.append(EpochRecord(
            epoch=int(parts[0]),
            train_loss=float(parts[1]),
            train_err=float(parts[2]),
            val_loss=float(parts[3]),
            val_err=float(parts[4]),
            max_gain_db=float(parts[5]),
            snapshot_path=parts[6],
        ))
    return GainCurve(records=records, diverged=(path.parent / "DIVERGED").exists(),
                     source=str(path))
