"""Classify Maximum Gain curves into training diagnoses.

The taxonomy:
  - lr-too-high:    high variability across all epochs;
  - still-learning: smooth gradual rise continuing at the end of the run;
  - converging:     a rise followed by a smooth flattening;
  - overfit-onset:  smooth flat behavior followed by persistently high
                    variability, with the change point located;
  - inconclusive:   none of the above patterns is established.

Variability is the standard deviation of the first differences of the gain
curve over a trailing window, so every statistic here is offset-free: adding
a constant dB shift to a whole curve changes nothing.  What counts as "high"
variability is empirical; thresholds are exposed and can be calibrated from
a trusted baseline run of the same dataset/architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

VERDICTS = ("lr-too-high", "still-learning", "converging", "overfit-onset", "inconclusive")

# Rank used when ordering runs: healthier first.
_PREFERENCE = {"converging": 0, "still-learning": 1, "overfit-onset": 2,
               "inconclusive": 3, "lr-too-high": 4}


@dataclass(frozen=True)
class Thresholds:
    window: int = 5      # epochs per trailing variability window
    rise: float = 0.05   # dB/epoch: slopes above this count as "still rising"
    low: float = 0.25    # dB: variability at or below this counts as smooth
    high: float = 1.0    # dB: median variability above this means lr too high
    ratio: float = 3.0   # late/early variability blow-up factor for overfit
    eps: float = 0.01    # dB: guards the ratio when early variability is ~0


@dataclass
class DiagnosticReport:
    verdict: str
    onset_epoch: int | None
    variability: np.ndarray       # v_t series
    variability_epochs: np.ndarray  # epoch of each window end, aligned with v_t
    early_slope: float
    late_slope: float
    early_variability: float      # median v over the early half
    late_variability: float       # median v over the late half
    median_variability: float     # median v over all windows
    final_train_err: float | None
    thresholds: Thresholds


def _gains_epochs(curve) -> tuple[np.ndarray, np.ndarray, float | None]:
    if hasattr(curve, "gains"):
        g = np.asarray(curve.gains, dtype=np.float64)
        e = np.asarray(curve.epochs, dtype=np.int64)
        terr = float(curve.train_err[-1]) if len(curve) else None
        return g, e, terr
    g = np.asarray(curve, dtype=np.float64)
    return g, np.arange(1, len(g) + 1), None


def variability(curve, window: int = 5) -> np.ndarray:
    """Std of gain first-differences over a trailing window of `window` epochs.

    v_t is defined for t = window .. len-1 (0-based) and uses the `window`
    differences ending at t, i.e. the points g[t-window..t].
    """
    g, _, _ = _gains_epochs(curve)
    if len(g) < window + 1:
        raise ConfigError(f"curve of length {len(g)} too short for window {window}")
    d = np.diff(g)
    return np.array([d[t - window:t].std() for t in range(window, len(g))])


def classify(curve, thresholds: Thresholds = Thresholds()) -> DiagnosticReport:
    """Apply the decision procedure to one gain curve.

    Order of tests: (a) overall median variability above `high` means the
    learning rate is too high; (b) a smooth late-window rise means the model
    is still learning; (c) smooth early behavior with a late variability
    blow-up means overfit onset, locating the first window past the blow-up
    threshold; (d) a rise that flattened out smoothly means converging;
    (e) otherwise inconclusive.
    """
    th = thresholds
    g, epochs, final_train_err = _gains_epochs(curve)
    if len(g) < 2 * th.window:
        raise ConfigError(f"curve of length {len(g)} too short to classify (need {2 * th.window})")

    v = variability(g, th.window)
    v_epochs = epochs[th.window:]
    half = len(v) // 2
    early_v = float(np.median(v[:len(v) - half]))
    late_v = float(np.median(v[half:]))
    med_v = float(np.median(v))

    mid = len(g) // 2
    early_slope = float((g[mid] - g[0]) / mid)
    late_slope = float((g[-1] - g[-1 - th.window]) / th.window)

    verdict = "inconclusive"
    onset = None
    blowup = th.ratio * (early_v + th.eps)
    if med_v > th.high:
        verdict = "lr-too-high"
    elif late_slope > th.rise and late_v <= th.low:
        verdict = "still-learning"
    elif early_v <= th.low and late_v > blowup:
        verdict = "overfit-onset"
        onset = int(v_epochs[np.argmax(v > blowup)])
    elif early_slope > th.rise and late_slope <= th.rise and late_v <= th.low:
        verdict = "converging"

    return DiagnosticReport(
        verdict=verdict,
        onset_epoch=onset,
        variability=v,
        variability_epochs=v_epochs,
        early_slope=early_slope,
        late_slope=late_slope,
        early_variability=early_v,
        late_variability=late_v,
        median_variability=med_v,
        final_train_err=final_train_err,
        thresholds=th,
    )


def calibrate_thresholds(baseline_curve, base: Thresholds = Thresholds()) -> Thresholds:
    """Scale the variability thresholds from a trusted baseline run.

    The floors keep thresholds sane when the baseline is nearly noiseless.
    """
    v = variability(baseline_curve, base.window)
    scale = float(np.median(v))
    return replace(
        base,
        low=max(3.0 * scale, base.low),
        high=max(8.0 * scale, base.high),
    )


# ---------------------------------------------------------------------------
# run comparison


@dataclass
class RankedRun:
    label: str
    verdict: str
    onset_epoch: int | None
    median_variability: float
    final_train_err: float | None
    note: str


@dataclass
class RankingReport:
    ranking: list[RankedRun]
    thresholds: Thresholds

    @property
    def text(self) -> str:
        lines = [f"{'rank':<5}{'run':<24}{'verdict':<16}{'median var (dB)':<17}"
                 f"{'onset':<7}{'train err':<11}note"]
        for i, r in enumerate(self.ranking, start=1):
            terr = f"{r.final_train_err:.4f}" if r.final_train_err is not None else "-"
            onset = str(r.onset_epoch) if r.onset_epoch is not None else "-"
            lines.append(f"{i:<5}{r.label:<24}{r.verdict:<16}"
                         f"{r.median_variability:<17.4f}{onset:<7}{terr:<11}{r.note}")
        return "\n".join(lines)


_NOTES = {
    "still-learning": "would keep improving; train longer",
    "overfit-onset": "stop training at the onset epoch",
    "lr-too-high": "reduce the learning rate",
}


def compare_runs(curves, labels=None, thresholds: Thresholds | None = None) -> RankingReport:
    """Order runs from healthiest to least healthy gain behavior.

    Runs that are not lr-too-high come first, then by verdict preference
    (converging, still-learning, overfit-onset), then by lower median
    variability.  Thresholds default to a calibration from the first run.
    Training error is surfaced because gain alone cannot flag underfitting.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ConfigError("need at least two runs to compare")
    spans = [tuple(_gains_epochs(c)[1]) for c in curves]
    if len(set(spans)) != 1:
        raise ConfigError(f"runs cover different epoch spans: {sorted(set(len(s) for s in spans))}")
    labels = list(labels) if labels is not None else [f"run{i}" for i in range(len(curves))]
    th = thresholds if thresholds is not None else calibrate_thresholds(curves[0])

    entries = []
    for label, curve in zip(labels, curves):
        rep = classify(curve, th)
        entries.append(RankedRun(
            label=label,
            verdict=rep.verdict,
            onset_epoch=rep.onset_epoch,
            median_variability=rep.median_variability,
            final_train_err=rep.final_train_err,
            note=_NOTES.get(rep.verdict, ""),
        ))
    order = sorted(
        range(len(entries)),
        key=lambda i: (entries[i].verdict == "lr-too-high",
                       _PREFERENCE[entries[i].verdict],
                       entries[i].median_variability),
    )
    return RankingReport(ranking=[entries[i] for i in order], thresholds=th)


def report_text(report: DiagnosticReport, label: str = "") -> str:
    head = f"diagnosis{f' for {label}' if label else ''}: {report.verdict}"
    lines = [head]
    if report.onset_epoch is not None:
        lines.append(f"  overfit onset at epoch {report.onset_epoch}")
    lines.append(f"  slopes (dB/epoch): early {report.early_slope:+.4f}, late {report.late_slope:+.4f}")
    lines.append(
        f"  variability (dB): early {report.early_variability:.4f}, "
        f"late {report.late_variability:.4f}, median {report.median_variability:.4f}"
    )
    th = report.thresholds
    lines.append(
        f"  thresholds: window {th.window}, rise {th.rise}, low {th.low}, "
        f"high {th.high}, ratio {th.ratio}, eps {th.eps}"
    )
    if report.final_train_err is not None:
        lines.append(f"  final train error: {report.final_train_err:.4f}"
                     " (gain does not detect underfitting; check this too)")
    return "\n".join(lines)


def report_record(report: DiagnosticReport, label: str = "") -> str:
    """Machine-readable one-line record: key=value pairs."""
    parts = [
        f"label={label}",
        f"verdict={report.verdict}",
        f"onset_epoch={report.onset_epoch if report.onset_epoch is not None else ''}",
        f"early_slope={report.early_slope!r}",
        f"late_slope={report.late_slope!r}",
        f"early_variability={report.early_variability!r}",
        f"late_variability={report.late_variability!r}",
        f"median_variability={report.median_variability!r}",
    ]
    return " ".join(parts)
