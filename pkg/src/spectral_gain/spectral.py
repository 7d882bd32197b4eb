"""Frequency response of a linearized network and the Maximum Gain metric.

The pipeline: run a forward pass, build a projection tensor that selects the
winning class (scaled by 1/score so runs with different confidences stay
comparable), push it back through the network to get the input data
derivative, then per input channel taper with a Hann window, zero-pad to a
power of two, take the 2-D FFT, and convert to a dB amplitude surface.  The
surface maximum is the Maximum Gain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .network import ForwardTrace, Network, backward_projected, forward

SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class ProbeConfig:
    impulse_amplitude: float = 255.0
    window: bool = True
    floor: float = 1e-12          # amplitude floor applied before the log
    norm_mode: str = "inv-score"  # "inv-score" (default) or "score"

    def __post_init__(self):
        if self.floor <= 0:
            raise ShapeError("amplitude floor must be positive")
        if self.norm_mode not in ("inv-score", "score"):
            raise ShapeError(f"unknown norm mode {self.norm_mode!r}")


@dataclass
class SpectralResponse:
    """Windowed data derivative of one input channel and its dB spectrum."""

    derivative: np.ndarray      # dz/dx for this channel, (h, w)
    windowed: np.ndarray        # derivative * hann2d (or unchanged if window off)
    amplitude_db: np.ndarray    # 20*log10(|FFT|), padded to powers of two
    max_gain_db: float
    class_index: int | None = None
    score: float | None = None
    channel: int = 0


def impulse_image(height: int, width: int, channels: int, amplitude: float = 255.0) -> np.ndarray:
    """Single bright pixel at the center of every channel, zero elsewhere.

    Its flat spectrum makes the probe frequency-neutral.
    """
    if height < 1 or width < 1 or channels < 1:
        raise ShapeError("extents must all be >= 1")
    img = np.zeros((height, width, channels))
    img[height // 2, width // 2, :] = amplitude
    return img


def make_projection(trace: ForwardTrace, mode: str = "inv-score") -> np.ndarray:
    """One-hot tensor at the winning class, scaled by 1/score (or score)."""
    if trace.prediction is None:
        raise ShapeError("projection needs a single-sample forward trace")
    idx, score = trace.prediction
    if mode not in ("inv-score", "score"):
        raise ShapeError(f"unknown norm mode {mode!r}")
    value = 1.0 / max(score, SCORE_FLOOR) if mode == "inv-score" else score
    p = np.zeros_like(trace.output)
    p.reshape(-1)[idx] = value
    return p


def hann2d(height: int, width: int) -> np.ndarray:
    """Separable raised-cosine taper w(r)*w(c), zero at the borders."""
    if height < 2 or width < 2:
        raise ShapeError("hann window needs extents >= 2")

    def axis(m: int) -> np.ndarray:
        n = np.arange(m)
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (m - 1)))

    return np.outer(axis(height), axis(width))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey DFT along the last axis (length 2^k)."""
    n = a.shape[-1]
    levels = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(levels):
        rev |= ((np.arange(n) >> b) & 1) << (levels - 1 - b)
    y = np.asarray(a, dtype=np.complex128)[..., rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        y = y.reshape(y.shape[:-1] + (n // size, size))
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(y.shape[:-2] + (n,))
        size *= 2
    return y


def fft2d(x: np.ndarray, pad_to_pow2: bool = True) -> np.ndarray:
    """Unnormalized 2-D DFT after zero-padding each axis to the next power of two.

    Zero padding only interpolates the spectrum, so the sampled surface
    maximum cannot drop below what the unpadded grid would show.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"fft2d takes a 2-D array, got shape {x.shape}")
    h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("fft2d needs extents >= 1")
    ph = next_pow2(h) if pad_to_pow2 else h
    pw = next_pow2(w) if pad_to_pow2 else w
    if not pad_to_pow2 and (ph & (ph - 1) or pw & (pw - 1)):
        raise ShapeError(f"extents {(h, w)} are not powers of two")
    padded = np.zeros((ph, pw))
    padded[:h, :w] = x
    rows = _fft_pow2(padded)           # transform along width
    return _fft_pow2(rows.T).T         # then along height


def amplitude_db(spectrum: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """20*log10(|spectrum|) with a floor keeping dead bins finite."""
    if floor <= 0:
        raise ShapeError("amplitude floor must be positive")
    return 20.0 * np.log10(np.maximum(np.abs(spectrum), floor))


def response_from_derivative(
    derivative: np.ndarray,
    config: ProbeConfig = ProbeConfig(),
    class_index: int | None = None,
    score: float | None = None,
    channel: int = 0,
) -> SpectralResponse:
    """Window, transform, and summarize one channel of a data derivative."""
    if derivative.ndim != 2:
        raise ShapeError(f"expected a 2-D derivative channel, got {derivative.shape}")
    windowed = derivative * hann2d(*derivative.shape) if config.window else derivative.copy()
    surface = amplitude_db(fft2d(windowed), config.floor)
    return SpectralResponse(
        derivative=derivative,
        windowed=windowed,
        amplitude_db=surface,
        max_gain_db=float(surface.max()),
        class_index=class_index,
        score=score,
        channel=channel,
    )


def probe(net: Network, x: np.ndarray, config: ProbeConfig = ProbeConfig()) -> list[SpectralResponse]:
    """Forward, project at the winning class, backprop, and transform.

    Returns one SpectralResponse per input channel of x.
    """
    trace = forward(net, x)
    p = make_projection(trace, config.norm_mode)
    back = backward_projected(net, trace, p)
    dzdx = back.input_derivative
    idx, score = trace.prediction
    return [
        response_from_derivative(dzdx[:, :, ch], config, idx, score, ch)
        for ch in range(dzdx.shape[2])
    ]


def mean_gain(responses: list[SpectralResponse]) -> float:
    """Average the per-channel Maximum Gains (in the dB domain)."""
    if not responses:
        raise ValueError("mean_gain of an empty response list")
    return float(np.mean([r.max_gain_db for r in responses]))
