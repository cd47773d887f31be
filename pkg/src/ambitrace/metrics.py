"""Agreement measures and losses: Pearson, CCC, CCC loss and SDA."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

#: Below this denominator the concordance coefficient is treated as
#: degenerate (both signals flat with equal means) and reported as 0.
CCC_DENOM_GUARD = 1e-12


def _pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two samples")
    return x, y


def pearson(x, y):
    x, y = _pair(x, y)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def ccc(x, y):
    """Concordance correlation coefficient (population moments).

    2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2), with a
    small-denominator guard returning 0 for flat equal-mean signals.
    """
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    cov = ((x - mx) * (y - my)).mean()
    denom = x.var() + y.var() + (mx - my) ** 2
    if denom < CCC_DENOM_GUARD:
        return 0.0
    return float(2.0 * cov / denom)


def ccc_loss(pred, target):
    """Training loss 1 - ccc(pred, target); ranges over [0, 2]."""
    return 1.0 - ccc(pred, target)


def sda(x, y):
    """Signed differential agreement of two equally long signals.

    Compares the signs of consecutive first differences: +1 per step
    when the signs match (two zero differences also match), -1
    otherwise, averaged over the N-1 steps.  Only direction matters, so
    the score is invariant under strictly increasing transforms.
    """
    x, y = _pair(x, y)
    sx = np.sign(np.diff(x))
    sy = np.sign(np.diff(y))
    return float(np.where(sx == sy, 1.0, -1.0).mean())


@dataclass
class MetricReport:
    """One Tables-style result row: CCC and SDA for mu and sigma channels."""

    ccc_mu: float
    ccc_sigma: float
    sda_mu: float
    sda_sigma: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_record(self) -> str:
        return "\n".join(f"{k}={v:.17g}" for k, v in self.as_dict().items())

    @classmethod
    def from_record(cls, text: str) -> "MetricReport":
        values = {}
        for line in text.strip().splitlines():
            key, _, value = line.partition("=")
            values[key.strip()] = float(value)
        return cls(**values)


def report(pred_mu, pred_sigma, true_mu, true_sigma) -> MetricReport:
    """Evaluate both channels of one predicted sequence pair."""
    return MetricReport(
        ccc_mu=ccc(pred_mu, true_mu),
        ccc_sigma=ccc(pred_sigma, true_sigma),
        sda_mu=sda(pred_mu, true_mu),
        sda_sigma=sda(pred_sigma, true_sigma),
    )


def aggregate(reports) -> tuple[MetricReport, MetricReport]:
    """Mean and population std of metric values across folds."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    names = [f.name for f in fields(MetricReport)]
    stacked = {k: np.array([getattr(r, k) for r in reports]) for k in names}
    mean = MetricReport(**{k: float(v.mean()) for k, v in stacked.items()})
    std = MetricReport(**{k: float(v.std()) for k, v in stacked.items()})
    return mean, std
