"""Sequential network composition, projected backprop, and snapshots.

A Network is an immutable ordered chain of LayerSpecs plus enough metadata
to rebuild and re-probe it later: the architecture blueprint, the input
shape, and (when trained) the training-set mean image used to preprocess
probe inputs.  forward() records every intermediate activation so that
backward_projected() can thread a projection tensor back through the chain
and return the derivative of the projected output with respect to the input.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .errors import DataFormatError, ShapeError
from .tensor import argmax_flat

SNAPSHOT_MAGIC = b"SGSNAP01"


@dataclass(frozen=True)
class Network:
    layers: tuple[L.LayerSpec, ...]
    input_shape: tuple[int, int, int]
    num_classes: int | None = None
    arch: tuple[dict, ...] = ()          # serializable layer blueprints
    meta: dict = field(default_factory=dict)
    mean_image: np.ndarray | None = None

    def with_layers(self, new_layers) -> "Network":
        return replace(self, layers=tuple(new_layers))


@dataclass
class ForwardTrace:
    """All intermediate activations x_0 ... x_L plus the prediction.

    A classifier chain ends at its logits; the prediction is the (argmax,
    score) of their softmax.  For other networks it is the argmax and value
    of the raw output.  prediction is None for batched passes.
    """

    activations: list[np.ndarray]
    prediction: tuple[int, float] | None

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class BackwardTrace:
    input_derivative: np.ndarray
    param_derivatives: list[tuple[np.ndarray, np.ndarray] | None]


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    """Run the layers in order, keeping every intermediate activation."""
    if x.shape[:3] != tuple(net.input_shape) or x.ndim not in (3, 4):
        raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")
    activations = [np.asarray(x, dtype=np.float64)]
    for i, spec in enumerate(net.layers):
        try:
            activations.append(L.layer_forward(activations[-1], spec))
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({spec.kind}): {e}") from e
    out = activations[-1]
    prediction = None
    if out.ndim == 1 or (out.ndim == 2 and out.shape[1] == 1):
        scores = L.softmax_forward(out.reshape(-1)) if net.num_classes is not None else out
        idx, score = argmax_flat(scores)
        prediction = (idx, score)
    return ForwardTrace(activations, prediction)


def backward_projected(net: Network, trace: ForwardTrace, p: np.ndarray) -> BackwardTrace:
    """Thread the projection tensor back through the chain.

    Returns the derivative of <p, f(x)> with respect to the input, plus the
    per-layer parameter derivatives that an optimizer would consume.
    """
    if p.shape != trace.output.shape:
        raise ShapeError(f"projection shape {p.shape} != output shape {trace.output.shape}")
    param_derivatives: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.layers)
    p_cur = np.asarray(p, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        try:
            res = L.layer_backward(trace.activations[i], trace.activations[i + 1], p_cur, spec)
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({spec.kind}): {e}") from e
        if spec.has_params:
            param_derivatives[i] = (res.weight_derivative, res.bias_derivative)
        p_cur = res.input_derivative
    return BackwardTrace(p_cur, param_derivatives)


# ---------------------------------------------------------------------------
# architecture blueprints and initialization

ARCHITECTURES: dict[str, dict] = {
    # Three conv layers and one fully-connected layer, interspersed with two
    # max pools and a relu; 28x28 grayscale in, 10 logits out.
    "lenet-mnist": {
        "input_shape": (28, 28, 1),
        "num_classes": 10,
        "layers": [
            {"kind": "conv", "size": [5, 5, 1, 20], "stride": 1, "pad": 0},
            {"kind": "maxpool", "window": 2, "stride": 2, "pad": 0},
            {"kind": "conv", "size": [5, 5, 20, 50], "stride": 1, "pad": 0},
            {"kind": "maxpool", "window": 2, "stride": 2, "pad": 0},
            {"kind": "conv", "size": [4, 4, 50, 500], "stride": 1, "pad": 0},
            {"kind": "relu"},
            {"kind": "fc", "size": [500, 10]},
        ],
    },
    # Four conv layers, one max pool, two average pools, four relus, and one
    # fully-connected layer; 32x32 color in, 10 logits out.  Pools carry
    # symmetric zero padding of 1 so the extents chain 32 -> 16 -> 8 -> 4 -> 1.
    "lenet-cifar": {
        "input_shape": (32, 32, 3),
        "num_classes": 10,
        "layers": [
            {"kind": "conv", "size": [5, 5, 3, 32], "stride": 1, "pad": 2},
            {"kind": "maxpool", "window": 3, "stride": 2, "pad": 1},
            {"kind": "relu"},
            {"kind": "conv", "size": [5, 5, 32, 32], "stride": 1, "pad": 2},
            {"kind": "relu"},
            {"kind": "avgpool", "window": 3, "stride": 2, "pad": 1},
            {"kind": "conv", "size": [5, 5, 32, 64], "stride": 1, "pad": 2},
            {"kind": "relu"},
            {"kind": "avgpool", "window": 3, "stride": 2, "pad": 1},
            {"kind": "conv", "size": [4, 4, 64, 64], "stride": 1, "pad": 0},
            {"kind": "relu"},
            {"kind": "fc", "size": [64, 10]},
        ],
    },
}


# Fan-balanced uniform init, scaled down by 10x: the datasets feed raw 0..255
# mean-subtracted pixels (no rescaling), and at full Glorot scale that input
# magnitude makes gradient steps at the standard learning rates (0.001..0.05)
# orders of magnitude larger than the weights, so training at the reference
# rates blows up.  The reduced scale matches the small-gaussian convention of
# the classic training stacks these rates were tuned for.
INIT_SCALE = 0.1


def _spec_from_blueprint(bp: dict, rng: np.random.Generator | None) -> L.LayerSpec:
    kind = bp["kind"]
    if kind == "conv":
        kh, kw, cin, cout = bp["size"]
        a = INIT_SCALE * np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
        w = rng.uniform(-a, a, size=(kh, kw, cin, cout)) if rng is not None \
            else np.zeros((kh, kw, cin, cout))
        return L.conv(w, stride=bp.get("stride", 1), pad=bp.get("pad", 0))
    if kind == "fc":
        din, dout = bp["size"]
        a = INIT_SCALE * np.sqrt(6.0 / (din + dout))
        w = rng.uniform(-a, a, size=(din, dout)) if rng is not None else np.zeros((din, dout))
        return L.fc(w)
    if kind == "maxpool":
        return L.maxpool(bp["window"], bp.get("stride"), bp.get("pad", 0))
    if kind == "avgpool":
        return L.avgpool(bp["window"], bp.get("stride"), bp.get("pad", 0))
    if kind == "relu":
        return L.relu()
    if kind == "softmax":
        return L.softmax()
    raise ShapeError(f"unknown blueprint kind {kind!r}")


def init_weights(arch: str, seed: int) -> Network:
    """Build a named architecture with fan-scaled uniform weights, zero biases.

    Weights are drawn layer by layer from uniform(-a, a) with
    a = INIT_SCALE * sqrt(6 / (fan_in + fan_out)); the result is a pure
    function of seed.
    """
    if arch not in ARCHITECTURES:
        raise ShapeError(f"unknown architecture {arch!r}; have {sorted(ARCHITECTURES)}")
    desc = ARCHITECTURES[arch]
    rng = np.random.default_rng(seed)
    specs = tuple(_spec_from_blueprint(bp, rng) for bp in desc["layers"])
    net = Network(
        layers=specs,
        input_shape=tuple(desc["input_shape"]),
        num_classes=desc["num_classes"],
        arch=tuple(desc["layers"]),
        meta={"arch": arch, "seed": int(seed)},
    )
    _check_chain(net)
    return net


def _check_chain(net: Network) -> None:
    """Shape-check the whole chain once by running a zero input through it."""
    trace = forward(net, np.zeros(net.input_shape))
    if net.num_classes is not None and trace.output.shape != (net.num_classes,):
        raise ShapeError(
            f"network emits {trace.output.shape}, expected ({net.num_classes},) class scores"
        )


# ---------------------------------------------------------------------------
# toy network (Gaussian smoothing conv + relu)


def gaussian_kernel(size: int = 7, sigma: float = 1.0) -> np.ndarray:
    """Symmetric unit-sum 2-D Gaussian, sampled on an odd-sized grid."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def toy_network(height: int, width: int, size: int = 7, sigma: float = 1.0) -> Network:
    """Single-channel Gaussian conv (same-size padding) followed by relu."""
    k = gaussian_kernel(size, sigma)
    spec = L.conv(k[:, :, np.newaxis, np.newaxis], pad=size // 2)
    return Network(
        layers=(spec, L.relu()),
        input_shape=(height, width, 1),
        meta={"arch": "toy-gaussian-relu", "sigma": sigma, "size": size},
    )


# ---------------------------------------------------------------------------
# snapshots
#
# Byte layout (see docs/snapshot-format.md):
#   magic "SGSNAP01" | uint32 LE header length | UTF-8 JSON header |
#   concatenated float64 LE arrays in header order | 32-byte SHA-256 trailer
# The trailer hashes everything before it; doubles round-trip bit-exactly.


def _array_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_snapshot(net: Network, path) -> None:
    header: dict = {
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "meta": net.meta,
        "layers": [],
        "arrays": [],
    }
    blobs: list[bytes] = []

    def add_array(owner: str, name: str, a: np.ndarray) -> None:
        header["arrays"].append({"owner": owner, "name": name, "shape": list(a.shape)})
        blobs.append(_array_bytes(a))

    for i, spec in enumerate(net.layers):
        bp = {"kind": spec.kind}
        if spec.kind in ("conv", "maxpool", "avgpool"):
            bp["stride"] = spec.stride
            bp["pad"] = spec.pad
        if spec.kind in ("maxpool", "avgpool"):
            bp["window"] = spec.window
        header["layers"].append(bp)
        if spec.has_params:
            add_array(f"layer{i}", "weights", spec.weights)
            add_array(f"layer{i}", "bias", spec.bias)
    if net.mean_image is not None:
        add_array("net", "mean_image", net.mean_image)

    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = SNAPSHOT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    with open(path, "wb") as f:
        f.write(body)
        f.write(hashlib.sha256(body).digest())


def load_snapshot(path) -> Network:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(SNAPSHOT_MAGIC) + 4 + 32:
        raise DataFormatError(f"{path}: truncated snapshot")
    if raw[:6] != SNAPSHOT_MAGIC[:6]:
        raise DataFormatError(f"{path}: not a snapshot file (bad magic)")
    if raw[:8] != SNAPSHOT_MAGIC:
        raise DataFormatError(f"{path}: unsupported snapshot version {raw[6:8]!r}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch")
    (head_len,) = struct.unpack("<I", body[8:12])
    try:
        header = json.loads(body[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad snapshot header: {e}") from e

    offset = 12 + head_len
    arrays: dict[tuple[str, str], np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataFormatError(f"{path}: truncated array payload")
        arrays[(entry["owner"], entry["name"])] = np.frombuffer(
            chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise DataFormatError(f"{path}: trailing bytes after arrays")

    specs = []
    blueprints = []
    for i, bp in enumerate(header["layers"]):
        kind = bp["kind"]
        blueprint = dict(bp)
        if kind == "conv":
            w = arrays[(f"layer{i}", "weights")]
            b = arrays[(f"layer{i}", "bias")]
            specs.append(L.conv(w, b, stride=bp.get("stride", 1), pad=bp.get("pad", 0)))
            blueprint["size"] = list(w.shape)
        elif kind == "fc":
            w = arrays[(f"layer{i}", "weights")]
            b = arrays[(f"layer{i}", "bias")]
            specs.append(L.fc(w, b))
            blueprint["size"] = list(w.shape)
        else:
            specs.append(_spec_from_blueprint(bp, None))
        blueprints.append(blueprint)

    return Network(
        layers=tuple(specs),
        input_shape=tuple(header["input_shape"]),
        num_classes=header["num_classes"],
        arch=tuple(blueprints),
        meta=header.get("meta", {}),
        mean_image=arrays.get(("net", "mean_image")),
    )


def networks_equal(a: Network, b: Network) -> bool:
    """Field-by-field equality with bit-exact parameter comparison."""
    if (a.input_shape, a.num_classes, a.meta) != (b.input_shape, b.num_classes, b.meta):
        return False
    if len(a.layers) != len(b.layers):
        return False
    for sa, sb in zip(a.layers, b.layers):
        if (sa.kind, sa.stride, sa.pad, sa.window) != (sb.kind, sb.stride, sb.pad, sb.window):
            return False
        for pa, pb in ((sa.weights, sb.weights), (sa.bias, sb.bias)):
            if (pa is None) != (pb is None):
                return False
            if pa is not None and (pa.shape != pb.shape or pa.tobytes() != pb.tobytes()):
                return False
    ma, mb = a.mean_image, b.mean_image
    if (ma is None) != (mb is None):
        return False
    if ma is not None and (ma.shape != mb.shape or ma.tobytes() != mb.tobytes()):
        return False
    return True
