"""Command-line entry point.

Subcommands: toy, train, probe, diagnose, sweep.  Every run writes a
manifest.txt echoing the fully resolved configuration into its output
directory, so any run can be replayed with `--config manifest.txt`.
Flags beat config-file values, which beat built-in defaults.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 diverged run.
The environment variable SPECTRAL_GAIN_DATA names the default dataset root
(a directory with mnist/ and cifar10/ subdirectories, or the files directly).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data as D
from . import diagnostics as G
from . import network as N
from . import report as R
from . import spectral as S
from . import training as T
from .errors import ConfigError, DataFormatError, DivergenceError

ENV_DATA = "SPECTRAL_GAIN_DATA"

_DEFAULTS = {
    "arch": "lenet-mnist",
    "dataset": "mnist",
    "dataset_dir": "",
    "lr": 0.001,
    "epochs": 20,
    "momentum": 0.9,
    "weight_decay": 5e-4,
    "batch_size": 100,
    "seed": 0,
    "probe_window": "on",
    "norm_mode": "inv-score",
    "limit_train": 0,
    "limit_val": 0,
    "multipliers": "1",
    "out_dir": "",
    "image": "",
}

_TYPES = {
    "lr": float, "momentum": float, "weight_decay": float,
    "epochs": int, "batch_size": int, "seed": int,
    "limit_train": int, "limit_val": int,
}


# ---------------------------------------------------------------------------
# config files and manifests


def read_config(path) -> dict:
    """Parse a key=value config file (# starts a comment)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key != "command" and key not in _DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _resolve(ns: argparse.Namespace, command: str) -> dict:
    """Merge defaults, config file, and explicit flags into one dict."""
    merged = dict(_DEFAULTS)
    if getattr(ns, "config", None):
        file_values = read_config(ns.config)
        if file_values.get("command", command) != command:
            raise ConfigError(
                f"config file is for command {file_values['command']!r}, not {command!r}"
            )
        file_values.pop("command", None)
        merged.update(file_values)
    for key in _DEFAULTS:
        flag = getattr(ns, key, None)
        if flag is not None:
            merged[key] = flag
    for key, conv in _TYPES.items():
        try:
            merged[key] = conv(merged[key])
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {merged[key]!r}") from e
    return merged


def write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    lines = [f"command={command}"]
    lines += [f"{k}={resolved[k]}" for k in sorted(resolved)]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _out_dir(resolved: dict, command: str) -> Path:
    name = resolved.get("out_dir") or f"runs/{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out = Path(name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _probe_config(resolved: dict) -> S.ProbeConfig:
    if resolved["probe_window"] not in ("on", "off"):
        raise ConfigError(f"--probe-window must be on or off, got {resolved['probe_window']!r}")
    return S.ProbeConfig(window=resolved["probe_window"] == "on",
                         norm_mode=resolved["norm_mode"])


def _train_config(resolved: dict) -> T.TrainConfig:
    return T.TrainConfig(
        arch=resolved["arch"],
        dataset=resolved["dataset"],
        lr=resolved["lr"],
        epochs=resolved["epochs"],
        momentum=resolved["momentum"],
        weight_decay=resolved["weight_decay"],
        batch_size=resolved["batch_size"],
        seed=resolved["seed"],
        probe=_probe_config(resolved),
    )


def _load_datasets(resolved: dict) -> tuple[D.Dataset, D.Dataset]:
    dataset = resolved["dataset"]
    candidates = []
    if resolved["dataset_dir"]:
        candidates.append(Path(resolved["dataset_dir"]))
    env = os.environ.get(ENV_DATA)
    if env:
        candidates += [Path(env) / dataset, Path(env)]
    if not candidates:
        raise DataFormatError(
            f"no dataset directory: pass --dataset-dir or set {ENV_DATA}"
        )
    last_error = None
    for root in candidates:
        try:
            if dataset == "mnist":
                train, val = D.resolve_mnist(root)
            elif dataset == "cifar10":
                train, val = D.resolve_cifar10(root)
            else:
                raise ConfigError(f"unknown dataset {dataset!r}")
            break
        except DataFormatError as e:
            last_error = e
    else:
        raise DataFormatError(f"could not load {dataset}: {last_error}")
    if resolved["limit_train"]:
        train = D.take(train, range(min(resolved["limit_train"], train.size)))
    if resolved["limit_val"]:
        val = D.take(val, range(min(resolved["limit_val"], val.size)))
    return train, val


# ---------------------------------------------------------------------------
# shared output helpers


def _write_response_files(out: Path, name: str, resp: S.SpectralResponse) -> None:
    R.save_matrix(out / f"{name}_derivative.txt", resp.derivative)
    R.save_grayscale(out / f"{name}_derivative.png", resp.derivative)
    R.save_matrix(out / f"{name}_spectrum_db.txt", resp.amplitude_db)
    R.save_grayscale(out / f"{name}_spectrum_db.png", R.center_dc(resp.amplitude_db))
    R.save_response_figure(out / f"{name}.png", resp.derivative, resp.amplitude_db,
                           title=f"{name}: max gain {resp.max_gain_db:+.2f} dB")


# ---------------------------------------------------------------------------
# toy


def synthetic_photo(height: int = 224, width: int = 224) -> np.ndarray:
    """Deterministic smooth color test image (stand-in for a photograph)."""
    rng = np.random.default_rng(7)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    img = np.zeros((height, width, 3))
    for ch in range(3):
        img[:, :, ch] = 0.35 + 0.3 * (xx * (ch + 1) + yy * (3 - ch)) / 3.0
        for _ in range(8):
            cy, cx = rng.uniform(0.1, 0.9, 2)
            sig = rng.uniform(0.04, 0.18)
            amp = rng.uniform(-0.45, 0.6)
            img[:, :, ch] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255.0)


def cmd_toy(ns: argparse.Namespace) -> int:
    resolved = _resolve(ns, "toy")
    out = _out_dir(resolved, "toy")
    cfg = _probe_config(resolved)

    if resolved["image"]:
        photo = D.read_pnm(resolved["image"])
    else:
        photo = synthetic_photo()
    red = photo[:, :, 0]
    x = (red - red.mean())[:, :, np.newaxis]
    h, w = red.shape
    net = N.toy_network(h, w)
    trace = N.forward(net, x)
    conv_map = trace.activations[1][:, :, 0]
    z = trace.activations[2][:, :, 0]

    R.save_matrix(out / "input.txt", x[:, :, 0])
    R.save_grayscale(out / "input.png", x[:, :, 0])
    R.save_matrix(out / "conv_map.txt", conv_map)
    R.save_grayscale(out / "conv_map.png", conv_map)
    R.save_matrix(out / "output.txt", z)
    R.save_grayscale(out / "output.png", z)

    gains: list[tuple[str, float]] = []

    def backprop_case(name: str, p2d: np.ndarray) -> None:
        back = N.backward_projected(net, trace, p2d[:, :, np.newaxis])
        resp = S.response_from_derivative(back.input_derivative[:, :, 0], cfg)
        _write_response_files(out, name, resp)
        gains.append((name, resp.max_gain_db))

    # projection at one live output unit: (150, 100) when valid, else the argmax
    r, c = (150, 100) if (h > 160 and w > 110 and z[150, 100] > 0) else \
        np.unravel_index(int(z.argmax()), z.shape)
    point = np.zeros_like(z)
    point[r, c] = 1.0
    backprop_case(f"point_{r}_{c}", point)

    # projection at a dead (rectified-to-zero) unit, if one exists
    dead = np.argwhere(z == 0.0)
    if dead.size:
        dr, dc = dead[len(dead) // 2]
        dead_p = np.zeros_like(z)
        dead_p[dr, dc] = 1.0
        backprop_case(f"dead_{dr}_{dc}", dead_p)

    # projection of ones over the whole output map
    backprop_case("ones", np.ones_like(z))

    # impulse image through the same net, projected with ones
    imp = S.impulse_image(h, w, 1, cfg.impulse_amplitude)
    imp_trace = N.forward(net, imp)
    R.save_matrix(out / "impulse_output.txt", imp_trace.output[:, :, 0])
    R.save_grayscale(out / "impulse_output.png", imp_trace.output[:, :, 0])
    back = N.backward_projected(net, imp_trace, np.ones_like(imp_trace.output))
    resp = S.response_from_derivative(back.input_derivative[:, :, 0], cfg)
    _write_response_files(out, "impulse_ones", resp)
    gains.append(("impulse_ones", resp.max_gain_db))

    with open(out / "gains.txt", "w") as f:
        for name, gain in gains:
            f.write(f"{name} {gain!r}\n")
    write_manifest(out, "toy", resolved)
    print(f"toy outputs written to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(ns: argparse.Namespace) -> int:
    resolved = _resolve(ns, "train")
    config = _train_config(resolved)
    train_ds, val_ds = _load_datasets(resolved)
    out = _out_dir(resolved, "train")
    write_manifest(out, "train", resolved)
    curve = T.train(config, train_ds, val_ds, out)
    if len(curve):
        R.save_training_figure(out / "curves.png", [curve], [f"lr={config.lr:g}"])
    if curve.diverged:
        print(f"run diverged; partial results in {out}")
        return 3
    print(f"run complete: {out}/metrics.csv")
    return 0


# ---------------------------------------------------------------------------
# probe


def cmd_probe(ns: argparse.Namespace) -> int:
    resolved = _resolve(ns, "probe")
    net = N.load_snapshot(ns.snapshot)
    stored = net.meta.get("probe", {})
    cfg = S.ProbeConfig(
        impulse_amplitude=stored.get("impulse_amplitude", 255.0),
        window=(resolved["probe_window"] == "on") if ns.probe_window is not None
        else stored.get("window", True),
        floor=stored.get("floor", 1e-12),
        norm_mode=resolved["norm_mode"] if ns.norm_mode is not None
        else stored.get("norm_mode", "inv-score"),
    )
    h, w, c = net.input_shape
    if ns.image == "impulse":
        x = S.impulse_image(h, w, c, cfg.impulse_amplitude)
    else:
        x = D.read_pnm(ns.image)
        if x.shape != (h, w, c):
            raise DataFormatError(f"image shape {x.shape} != network input {(h, w, c)}")
    if net.mean_image is not None:
        x = x - net.mean_image

    out = _out_dir(resolved, "probe")
    responses = S.probe(net, x, cfg)
    with open(out / "gains.csv", "w") as f:
        f.write("channel,class_index,score,max_gain_db\n")
        for resp in responses:
            _write_response_files(out, f"channel{resp.channel}", resp)
            f.write(f"{resp.channel},{resp.class_index},{resp.score!r},{resp.max_gain_db!r}\n")
        f.write(f"mean,,,{S.mean_gain(responses)!r}\n")
    write_manifest(out, "probe", {**resolved, "snapshot": str(ns.snapshot), "image": ns.image})
    print(f"probe outputs written to {out} (mean gain {S.mean_gain(responses):+.2f} dB)")
    return 0


# ---------------------------------------------------------------------------
# diagnose


def _thresholds_from_flags(ns: argparse.Namespace) -> G.Thresholds:
    base = G.Thresholds()
    return G.Thresholds(
        window=ns.window if ns.window is not None else base.window,
        rise=ns.rise if ns.rise is not None else base.rise,
        low=ns.low if ns.low is not None else base.low,
        high=ns.high if ns.high is not None else base.high,
        ratio=ns.ratio if ns.ratio is not None else base.ratio,
        eps=ns.eps if ns.eps is not None else base.eps,
    )


def cmd_diagnose(ns: argparse.Namespace) -> int:
    thresholds = _thresholds_from_flags(ns)
    curves, labels = [], []
    for csv_path in ns.csv:
        curve = T.load_gain_curve(csv_path)
        label = Path(csv_path).parent.name or str(csv_path)
        rep = G.classify(curve, thresholds)
        run_dir = Path(csv_path).parent
        text = G.report_text(rep, label)
        (run_dir / "diagnostics.txt").write_text(text + "\n")
        (run_dir / "diagnostics.record").write_text(G.report_record(rep, label) + "\n")
        R.save_diagnosis_figure(run_dir / "diagnosis.png", curve, rep, label)
        print(text)
        curves.append(curve)
        labels.append(label)
    if len(curves) >= 2:
        ranking = G.compare_runs(curves, labels, thresholds)
        print("\n" + ranking.text)
    return 0


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(ns: argparse.Namespace) -> int:
    resolved = _resolve(ns, "sweep")
    try:
        multipliers = [float(tok) for tok in str(resolved["multipliers"]).split(",") if tok]
    except ValueError as e:
        raise ConfigError(f"bad multiplier list {resolved['multipliers']!r}") from e
    if not multipliers:
        raise ConfigError("need at least one learning-rate multiplier")
    train_ds, val_ds = _load_datasets(resolved)
    out = _out_dir(resolved, "sweep")
    write_manifest(out, "sweep", resolved)

    base_lr = resolved["lr"]
    curves, labels = [], []
    for m in multipliers:
        label = f"x{m:g}"
        sub = dict(resolved)
        sub["lr"] = base_lr * m
        sub_dir = out / label
        sub_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(sub_dir, "train", {**sub, "out_dir": str(sub_dir), "multipliers": "1"})
        print(f"--- {label}: lr {sub['lr']:g}")
        curve = T.train(_train_config(sub), train_ds, val_ds, sub_dir)
        curves.append(curve)
        labels.append(label)

    complete = [(c, l) for c, l in zip(curves, labels) if len(c) == resolved["epochs"]]
    skipped = [l for c, l in zip(curves, labels) if len(c) != resolved["epochs"]]
    if skipped:
        print(f"excluded from ranking (diverged/incomplete): {', '.join(skipped)}")
    if len(complete) >= 2:
        done_labels = [l for _, l in complete]
        base_idx = done_labels.index("x1") if "x1" in done_labels else 0
        thresholds = G.calibrate_thresholds(complete[base_idx][0])
        ranking = G.compare_runs([c for c, _ in complete], done_labels, thresholds)
        (out / "ranking.txt").write_text(ranking.text + "\n")
        print(ranking.text)
    if complete:
        R.save_training_figure(out / "curves.png", [c for c, _ in complete],
                               [l for _, l in complete])
    return 0 if complete else 3


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-gain",
        description="Linearized-CNN frequency response probes and training diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, train_flags: bool) -> None:
        p.add_argument("--config", help="key=value config file (flags override it)")
        p.add_argument("--out-dir", dest="out_dir", help="output directory for this run")
        p.add_argument("--probe-window", dest="probe_window", choices=["on", "off"],
                       help="apply a Hann window before the FFT (default on)")
        p.add_argument("--norm-mode", dest="norm_mode", choices=["inv-score", "score"],
                       help="projection normalization (default inv-score)")
        if train_flags:
            p.add_argument("--arch", choices=sorted(N.ARCHITECTURES))
            p.add_argument("--dataset", choices=["mnist", "cifar10"])
            p.add_argument("--dataset-dir", dest="dataset_dir",
                           help=f"dataset directory (default ${ENV_DATA})")
            p.add_argument("--lr", type=float)
            p.add_argument("--epochs", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--batch-size", dest="batch_size", type=int)
            p.add_argument("--momentum", type=float)
            p.add_argument("--weight-decay", dest="weight_decay", type=float)
            p.add_argument("--limit-train", dest="limit_train", type=int,
                           help="use only the first N training examples")
            p.add_argument("--limit-val", dest="limit_val", type=int,
                           help="use only the first N validation examples")

    p_toy = sub.add_parser("toy", help="Gaussian-conv + relu demonstration probes")
    p_toy.add_argument("--image", help="optional PNM (P5/P6) input image")
    add_common(p_toy, train_flags=False)
    p_toy.set_defaults(func=cmd_toy)

    p_train = sub.add_parser("train", help="train a model, logging gain per epoch")
    add_common(p_train, train_flags=True)
    p_train.set_defaults(func=cmd_train)

    p_probe = sub.add_parser("probe", help="probe a saved snapshot")
    p_probe.add_argument("--snapshot", required=True)
    p_probe.add_argument("--image", default="impulse",
                         help='"impulse" (default) or a PNM image path')
    add_common(p_probe, train_flags=False)
    p_probe.set_defaults(func=cmd_probe)

    p_diag = sub.add_parser("diagnose", help="classify logged gain curves")
    p_diag.add_argument("csv", nargs="+", help="metrics.csv files from training runs")
    p_diag.add_argument("--window", type=int)
    p_diag.add_argument("--rise", type=float)
    p_diag.add_argument("--low", type=float)
    p_diag.add_argument("--high", type=float)
    p_diag.add_argument("--ratio", type=float)
    p_diag.add_argument("--eps", type=float)
    p_diag.set_defaults(func=cmd_diagnose)

    p_sweep = sub.add_parser("sweep", help="train at several learning-rate multiples")
    p_sweep.add_argument("--multipliers", help="comma-separated, e.g. 1,2,3,4")
    add_common(p_sweep, train_flags=True)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return ns.func(ns)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
