"""Frequency-response probes for CNNs and Maximum Gain training diagnostics.

The package linearizes a network around an input by threading a projection
tensor backward through its layers, takes the 2-D amplitude spectrum of the
resulting input derivative, and tracks the surface maximum (Maximum Gain)
across training epochs to diagnose learning-rate problems and overfitting
without a validation set.
"""

from .diagnostics import Thresholds, classify, compare_runs, variability
from .network import (
    ARCHITECTURES,
    Network,
    backward_projected,
    forward,
    init_weights,
    load_snapshot,
    save_snapshot,
    toy_network,
)
from .spectral import (
    ProbeConfig,
    SpectralResponse,
    amplitude_db,
    fft2d,
    hann2d,
    impulse_image,
    make_projection,
    mean_gain,
    probe,
)
from .training import GainCurve, TrainConfig, evaluate, load_gain_curve, sgd_step, train

__all__ = [
    "ARCHITECTURES",
    "GainCurve",
    "Network",
    "ProbeConfig",
    "SpectralResponse",
    "Thresholds",
    "TrainConfig",
    "amplitude_db",
    "backward_projected",
    "classify",
    "compare_runs",
    "evaluate",
    "fft2d",
    "forward",
    "hann2d",
    "impulse_image",
    "init_weights",
    "load_gain_curve",
    "load_snapshot",
    "make_projection",
    "mean_gain",
    "probe",
    "save_snapshot",
    "sgd_step",
    "toy_network",
    "train",
    "variability",
]

__version__ = "0.1.0"
