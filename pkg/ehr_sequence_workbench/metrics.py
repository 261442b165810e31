# ============================================================================
# METRICS MODULE
# ============================================================================
# Discrimination (AUROC, AUPRC) and calibration (Brier) metrics with
# percentile bootstrap confidence intervals

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

MAX_REDRAWS = 1000


def _as_arrays(labels, scores):
    y = np.asarray(labels).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError(f"labels and scores differ in length: {y.size} vs {s.size}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y, s


# ============================================================================
# POINT METRICS
# ============================================================================
def auroc(labels, scores):
    """
    Probability that a random positive outranks a random negative.

    Ties count one half (Mann-Whitney U with average ranks).
    """
    y, s = _as_arrays(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes")
    ranks = pd.Series(s).rank(method="average").to_numpy()
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(labels, scores):
    """
    Average precision: sum over distinct thresholds (descending) of
    precision times the recall increment. Tied scores form one threshold.
    """
    y, s = _as_arrays(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("auprc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    seen = np.arange(1, y.size + 1)
    # last index of every run of equal scores
    boundaries = np.r_[np.nonzero(np.diff(s_sorted))[0], y.size - 1]
    precision = tp[boundaries] / seen[boundaries]
    recall = tp[boundaries] / n_pos
    increments = np.diff(np.r_[0.0, recall])
    return float(np.sum(increments * precision))


def brier(labels, probs):
    y, p = _as_arrays(labels, probs)
    if y.size == 0:
        raise ValueError("brier needs at least one case")
    if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
        raise ValueError("brier needs probabilities in [0, 1]")
    return float(np.mean((p - y) ** 2))


METRICS = {"auprc": auprc, "auroc": auroc, "brier": brier}


# ============================================================================
# BOOTSTRAP
# ============================================================================
def bootstrap_ci(metric_fn, labels, scores, iters=1000, level=0.95, seed=0, require_both_classes=True):
    """
    Percentile bootstrap interval of metric_fn.

    Every iteration draws from its own SeedSequence child of ``seed`` so serial
    and parallel evaluation agree. Single-class resamples are redrawn.

    Returns:
        (lo, hi)
    """
    if iters < 1:
        raise ValueError(f"bootstrap needs iters >= 1, got {iters}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    y, s = _as_arrays(labels, scores)
    n = y.size
    stats = np.empty(iters)
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(iters)):
        rng = np.random.default_rng(child)
        for _ in range(MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            yk = y[idx]
            if not require_both_classes or 0 < yk.sum() < n:
                break
        else:
            raise ValueError(f"no two-class resample after {MAX_REDRAWS} draws")
        stats[k] = metric_fn(yk, s[idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


# ============================================================================
# EVALUATION REPORT
# ============================================================================
@dataclass
class MetricCI:
    point: float
    ci_lo: float
    ci_hi: float


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    n: int = 0
    n_positive: int = 0
    seed: int = 0
    level: float = 0.95

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["metrics"] = {name: MetricCI(**m) for name, m in data["metrics"].items()}
        return cls(**data)

    def to_row(self):
        """Flat CSV row: <metric>, <metric>_lo, <metric>_hi for each metric."""
        row = {"n": self.n, "n_positive": self.n_positive}
        for name, m in self.metrics.items():
            row[name] = m.point
            row[f"{name}_lo"] = m.ci_lo
            row[f"{name}_hi"] = m.ci_hi
        return row


def evaluate(labels, probs, iters=1000, level=0.95, seed=0):
    """AUPRC, AUROC and Brier with bootstrap intervals."""
    y, p = _as_arrays(labels, probs)
    report = EvalReport(n=int(y.size), n_positive=int(y.sum()), seed=seed, level=level)
    for name, fn in METRICS.items():
        lo, hi = bootstrap_ci(fn, y, p, iters=iters, level=level, seed=seed)
        report.metrics[name] = MetricCI(point=fn(y, p), ci_lo=lo, ci_hi=hi)
    return report
