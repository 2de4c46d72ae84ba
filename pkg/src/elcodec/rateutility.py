"""Rate-utility selection of the model to signal.

Costs are evaluated in exact rational arithmetic (``fractions.Fraction``),
so J is an exact sum of per-frame costs and the argmin does not depend on
floating-point summation order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .baselayer import FrameGroup
from .errors import DimensionError
from .modelcodec import ModelCodec, compression_ratio, original_model_bits
from .network import ModelCheckpoint, enhance_frame

__all__ = [
    "NO_EL",
    "frame_cost",
    "group_cost",
    "metrics",
    "CandidateEvaluation",
    "SelectionResult",
    "evaluate_baseline",
    "evaluate_candidate",
    "choose",
    "select",
]

NO_EL = "NO_EL"


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("cost terms must be finite")
    return Fraction(x)


def frame_cost(d, lam, r_frame, r_model, n: int) -> Fraction:
    """J_i = D_i + lambda_i * (R_i + R_model / N), exactly."""
    if n < 1:
        raise ValueError("group size N must be at least 1")
    d, lam, r_frame, r_model = (_exact(v) for v in (d, lam, r_frame, r_model))
    if d < 0 or r_frame < 0 or r_model < 0:
        raise ValueError("distortion and rates must be non-negative")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return d + lam * (r_frame + r_model / n)


def group_cost(costs) -> Fraction:
    costs = list(costs)
    if not costs:
        raise ValueError("cannot cost an empty group")
    return sum((_exact(c) for c in costs), Fraction(0))


def metrics(orig, recon) -> tuple[int, float]:
    """(SSE, PSNR in dB) of two 8-bit planes; PSNR is ``inf`` when SSE is 0."""
    a = np.asarray(orig)
    b = np.asarray(recon)
    if a.shape != b.shape:
        raise DimensionError(f"frame sizes differ: {a.shape} vs {b.shape}")
    d = a.astype(np.int64) - b.astype(np.int64)
    sse = int(np.sum(d * d))
    if sse == 0:
        return 0, math.inf
    return sse, 10.0 * math.log10(255.0**2 * a.size / sse)


def frames_digest(frames) -> str:
    h = hashlib.sha256()
    for f in frames:
        h.update(np.ascontiguousarray(f, dtype=np.uint8).tobytes())
    return h.hexdigest()


@dataclass
class CandidateEvaluation:
    id: str
    epoch: int
    r_model: int
    sse: list
    psnr: list
    costs: list
    j: Fraction
    frames: list = field(default_factory=list, repr=False)
    el: bytes | None = field(default=None, repr=False)
    compression_ratio: float = math.inf

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def digest(self) -> str:
        return frames_digest(self.frames)

    def key(self):
        return (self.j, self.r_model, self.epoch)


@dataclass
class SelectionResult:
    chosen: str
    chosen_eval: CandidateEvaluation
    baseline: CandidateEvaluation
    table: list

    @property
    def j(self) -> Fraction:
        return self.chosen_eval.j

    @property
    def j_baseline(self) -> Fraction:
        return self.baseline.j

    @property
    def el_present(self) -> bool:
        return self.chosen != NO_EL

    def psnr_gain(self) -> float:
        return self.chosen_eval.mean_psnr - self.baseline.mean_psnr


def _evaluate(ident, epoch, frames, group: FrameGroup, r_model: int) -> CandidateEvaluation:
    sse, psnr, costs = [], [], []
    for i, f in enumerate(frames):
        s, p = metrics(group.originals[i], f)
        sse.append(s)
        psnr.append(p)
        costs.append(frame_cost(s, group.lambdas[i], group.bits[i], r_model, group.n))
    return CandidateEvaluation(ident, epoch, r_model, sse, psnr, costs, group_cost(costs), frames=list(frames))


def evaluate_baseline(group: FrameGroup) -> CandidateEvaluation:
    return _evaluate(NO_EL, -1, group.recons, group, 0)


def evaluate_candidate(checkpoint: ModelCheckpoint, group: FrameGroup, codec: ModelCodec) -> CandidateEvaluation:
    """Cost a checkpoint exactly as the decoder will see it.

    The enhanced frames come from the model rebuilt out of its own EL stream,
    so float32 rounding of biases and affine parameters is already applied.
    """
    stream = codec.serialize(checkpoint)
    decoded = codec.deserialize(stream.data)
    frames = [enhance_frame(decoded, r) for r in group.recons]
    ev = _evaluate(checkpoint.id, checkpoint.epoch, frames, group, stream.r_model)
    ev.el = stream.data
    ev.compression_ratio = compression_ratio(original_model_bits(decoded.config), stream.r_model)
    return ev


def choose(evaluations, baseline: CandidateEvaluation, allow_no_el: bool = True) -> SelectionResult:
    """Minimum J; ties go to the smaller model, then the earlier epoch."""
    evaluations = list(evaluations)
    options = evaluations + ([baseline] if allow_no_el else [])
    if not options:
        raise ValueError("nothing to choose from")
    best = min(options, key=CandidateEvaluation.key)
    return SelectionResult(best.id, best, baseline, evaluations)


def select(candidates, group: FrameGroup, codec: ModelCodec, allow_no_el: bool = True) -> SelectionResult:
    candidates = list(candidates)
    if not candidates:
        raise ValueError("at least one candidate model is required")
    evaluations = [evaluate_candidate(c, group, codec) for c in candidates]
    return choose(evaluations, evaluate_baseline(group), allow_no_el)
