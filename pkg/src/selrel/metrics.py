"""Evaluation criteria: motion precision against optical flow, selectivity
ratios, inter-method agreement, and the wall-clock overhead harness.

Supports are epsilon-thresholded rather than literal "> 0": a relative
epsilon on relevance and an absolute epsilon on flow keep the indicator
sets stable against solver noise. Every metric is a percentage in [0,100].
"""

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyRelevanceError, InputError
from .validation import volume_data

REL_EPS_FRACTION = 1e-3  # default relevance support cut: 1e-3 * max|R|
FLOW_EPS = 1e-2  # default flow support cut, pixels/frame


def support_threshold(data: np.ndarray, eps_r: float | None) -> float:
    """Realized support threshold: explicit absolute value, or relative default."""
    if eps_r is None:
        peak = float(np.abs(data).max())
        return REL_EPS_FRACTION * peak
    if eps_r < 0:
        raise InputError(f"epsilon must be >= 0, got {eps_r}")
    return float(eps_r)


def positive_support(data: np.ndarray, eps_r: float | None) -> np.ndarray:
    return data > support_threshold(data, eps_r)


def motion_precision(relevance, flow_mag, eps_r: float | None = None, eps_o: float = FLOW_EPS) -> float:
    """Percentage of relevant voxels that also carry flow above eps_o."""
    r = volume_data(relevance)
    o = volume_data(flow_mag)
    if r.shape != o.shape:
        raise InputError(f"relevance {r.shape} and flow {o.shape} dims differ")
    if eps_o < 0:
        raise InputError(f"epsilon must be >= 0, got {eps_o}")
    i_r = positive_support(r, eps_r)
    hits = int(i_r.sum())
    if hits == 0:
        raise EmptyRelevanceError("empty-relevance: precision undefined (no voxel above threshold)")
    both = int((i_r & (o > eps_o)).sum())
    return 100.0 * both / hits


def selectivity_ratios(selected, baseline, eps_r: float | None = None) -> tuple:
    """(area %, mass %) of the baseline explanation retained by the filtered one.

    The support threshold comes from the baseline so both volumes are cut
    at the same absolute level.
    """
    sel = volume_data(selected)
    base = volume_data(baseline)
    if sel.shape != base.shape:
        raise InputError(f"volumes have mismatched dims {sel.shape} vs {base.shape}")
    thr = support_threshold(base, eps_r)
    base_keep = base > thr
    n_base = int(base_keep.sum())
    if n_base == 0:
        raise EmptyRelevanceError("empty-relevance: baseline support is empty")
    sel_keep = sel > thr
    area = 100.0 * int(sel_keep.sum()) / n_base
    base_mass = float(base[base_keep].sum(dtype=np.float64))
    sel_mass = float(sel[sel_keep].sum(dtype=np.float64))
    return area, 100.0 * sel_mass / base_mass


def agreement(rel_a, rel_b, eps_r: float | None = None, mode: str = "iou") -> float:
    """Percentage overlap of two relevance supports.

    iou: |A∩B| / |A∪B| (symmetric, the default); directional: |A∩B| / |A|.
    """
    a = volume_data(rel_a)
    b = volume_data(rel_b)
    if a.shape != b.shape:
        raise InputError(f"volumes have mismatched dims {a.shape} vs {b.shape}")
    if mode not in ("iou", "directional"):
        raise InputError(f"unknown agreement mode {mode!r}")
    sup_a = positive_support(a, eps_r)
    sup_b = positive_support(b, eps_r)
    inter = int((sup_a & sup_b).sum())
    if mode == "iou":
        union = int((sup_a | sup_b).sum())
        if union == 0:
            raise EmptyRelevanceError("empty-relevance: both supports are empty")
        return 100.0 * inter / union
    n_a = int(sup_a.sum())
    if n_a == 0:
        raise EmptyRelevanceError("empty-relevance: reference support is empty")
    return 100.0 * inter / n_a


# --- aggregation and reports --------------------------------------------------


@dataclass
class MetricsReport:
    """Per-clip metric values; None marks metrics that were not computed."""

    precision_pct: float | None = None
    selectivity_area_pct: float | None = None
    selectivity_mass_pct: float | None = None
    agreement_pct: float | None = None
    agreement_mode: str = "iou"

    def __post_init__(self):
        for name in ("precision_pct", "selectivity_area_pct", "selectivity_mass_pct", "agreement_pct"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise InputError(f"{name} out of [0,100]: {value}")


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    method: str
    mean: float
    std: float  # population std over clips
    count: int


_METRIC_FIELDS = (
    ("precision", "precision_pct"),
    ("selectivity_area", "selectivity_area_pct"),
    ("selectivity_mass", "selectivity_mass_pct"),
    ("agreement", "agreement_pct"),
)


def aggregate(reports, method: str = "") -> list:
    """Per-clip-then-average: mean and population std of each metric."""
    summaries = []
    for metric, attr in _METRIC_FIELDS:
        values = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        if not values:
            continue
        arr = np.asarray(values, dtype=np.float64)
        summaries.append(
            MetricSummary(metric, method, float(arr.mean()), float(arr.std()), len(values))
        )
    return summaries


def render_text(summaries, title: str = "metrics") -> str:
    lines = [f"# {title}", f"{'metric':<18} {'method':<22} {'avg':>9} {'std':>9} {'n':>5}"]
    for s in summaries:
        lines.append(f"{s.metric:<18} {s.method:<22} {s.mean:>9.2f} {s.std:>9.2f} {s.count:>5d}")
    return "\n".join(lines) + "\n"


def render_csv(summaries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "method", "avg", "std", "count"])
    for s in summaries:
        writer.writerow([s.metric, s.method, f"{s.mean:.6f}", f"{s.std:.6f}", s.count])
    return buf.getvalue()


# --- overhead benchmark --------------------------------------------------------


@dataclass(frozen=True)
class TimingReport:
    label: str
    avg_ms: float
    std_ms: float
    repetitions: int
    warmup: int
    samples_ms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.repetitions < 1:
            raise InputError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.avg_ms < 0:
            raise InputError("negative average time")


def benchmark(fn, repetitions: int, warmup: int = 3, label: str = "task") -> TimingReport:
    """Wall-clock the task body only; warmup runs are untimed.

    Must run on a single worker with nothing else timed concurrently.
    """
    if repetitions < 1:
        raise InputError(f"repetitions must be >= 1, got {repetitions}")
    if warmup < 0:
        raise InputError(f"warmup must be >= 0, got {warmup}")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    arr = np.asarray(samples, dtype=np.float64)
    return TimingReport(label, float(arr.mean()), float(arr.std()), repetitions, warmup, tuple(samples))


def overhead_ms(combined: TimingReport, baseline: TimingReport) -> float:
    """Cost of the selective step on top of a baseline explanation."""
    return combined.avg_ms - baseline.avg_ms


def render_timing_text(reports, overhead: float | None = None) -> str:
    lines = ["# timing", f"{'task':<26} {'avg_ms':>12} {'std_ms':>12} {'reps':>6} {'warmup':>7}"]
    for r in reports:
        lines.append(f"{r.label:<26} {r.avg_ms:>12.4f} {r.std_ms:>12.4f} {r.repetitions:>6d} {r.warmup:>7d}")
    if overhead is not None:
        lines.append(f"overhead_ms={overhead:.4f}")
    return "\n".join(lines) + "\n"


def render_timing_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["task", "avg_ms", "std_ms", "repetitions", "warmup"])
    for r in reports:
        writer.writerow([r.label, f"{r.avg_ms:.6f}", f"{r.std_ms:.6f}", r.repetitions, r.warmup])
    return buf.getvalue()
