"""Bjontegaard delta rate between two rate/PSNR curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RateDistortionCurve", "bd_rate"]


@dataclass(frozen=True)
class RateDistortionCurve:
    rates: tuple
    psnrs: tuple

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64)
        p = np.asarray(self.psnrs, dtype=np.float64)
        if r.shape != p.shape or r.ndim != 1:
            raise ValueError("rates and PSNRs must be equal-length 1-D sequences")
        if r.size < 4:
            raise ValueError("a BD-rate curve needs at least 4 points")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))) or np.any(r <= 0):
            raise ValueError("rates must be positive and all values finite")
        order = np.argsort(r, kind="stable")
        r, p = r[order], p[order]
        if np.any(np.diff(r) <= 0):
            raise ValueError("rates must be strictly increasing")
        object.__setattr__(self, "rates", tuple(r.tolist()))
        object.__setattr__(self, "psnrs", tuple(p.tolist()))

    @classmethod
    def from_points(cls, points) -> "RateDistortionCurve":
        pts = list(points)
        return cls(tuple(r for r, _ in pts), tuple(q for _, q in pts))


def _as_curve(c) -> RateDistortionCurve:
    return c if isinstance(c, RateDistortionCurve) else RateDistortionCurve.from_points(c)


def bd_rate(anchor, test) -> float:
    """Average rate difference of ``test`` vs ``anchor`` in percent (negative = savings).

    Log-rate is fitted as a cubic in PSNR for each curve and both fits are
    integrated over the common PSNR interval.
    """
    a, t = _as_curve(anchor), _as_curve(test)
    pa, pt = np.asarray(a.psnrs), np.asarray(t.psnrs)
    lo = max(pa.min(), pt.min())
    hi = min(pa.max(), pt.max())
    if not hi > lo:
        raise ValueError("the two curves have no overlapping PSNR range")
    # fitting on PSNR offsets from the interval start keeps the cubic well conditioned
    fa = np.polyfit(pa - lo, np.log(a.rates), 3)
    ft = np.polyfit(pt - lo, np.log(t.rates), 3)
    avg = np.polyval(np.polyint(np.polysub(ft, fa)), hi - lo) / (hi - lo)
    return float((np.exp(avg) - 1.0) * 100.0)
