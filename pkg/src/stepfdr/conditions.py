"""Empirical checks of self-consistency, dependency control and monotonicity.

Self-consistency is an algorithmic property and is checked exactly.  The
dependency control inequality

    E[ 1{U <= c * beta(V)} / V ] <= c     for all c > 0

is estimated by Monte-Carlo, as is the conditional curve
``u -> P(|R| < r | p_h <= u)`` whose monotonicity drives the PRDS argument.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from stepfdr.core import VOLUME_TOL, HypothesisSpace, RejectionSet, as_pvalues
from stepfdr.procedures import FactorizedThresholds
from stepfdr.shape import ShapeFunction
from stepfdr.simulation import DependenceModel, trial_rng

Sampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]
DC_CHUNK = 10_000


def check_self_consistency(
    rejected: RejectionSet, delta: FactorizedThresholds, p, space: HypothesisSpace
) -> tuple[bool, str | None]:
    """Whether ``R`` is contained in ``L(|R|)``; on failure, one offending label."""
    arr = as_pvalues(p, space)
    thr = delta.thresholds(space, rejected.volume)
    bad = np.flatnonzero(rejected.mask & ~(arr <= thr))
    if bad.size:
        return False, space.labels[bad[0]]
    return True, None


@dataclass(frozen=True)
class DcEstimate:
    """Monte-Carlo estimate of the dependency-control expectation at ``c``.

    ``lower`` is the mean of the summands capped at ``cap = sqrt(n)``.  It
    never exceeds the true expectation and has finite variance, so
    ``lower > c + k * lower_se`` is a sound violation test even when the
    plain sample SE is meaningless (infinite-variance summands).
    """

    c: float
    estimate: float
    se: float
    n: int
    violations: int
    lower: float = math.nan
    lower_se: float = math.nan
    cap: float = math.inf

    def exceeds(self, k: float = 3.0) -> bool:
        """True when the raw estimate is above ``c`` by more than ``k`` SEs."""
        return self.estimate > self.c + k * self.se

    def violated(self, k: float = 3.0) -> bool:
        """True when the capped lower bound is above ``c`` by more than ``k`` SEs."""
        return self.lower > self.c + k * self.lower_se


def dc_estimate(
    sampler: Sampler,
    beta: ShapeFunction,
    c_grid: Sequence[float],
    n: int,
    seed: int,
) -> list[DcEstimate]:
    """Monte-Carlo estimate of ``E[1{U <= c beta(V)} / V]`` for each ``c``.

    ``sampler(rng, k)`` returns ``k`` joint draws ``(U, V)``.  Draws are taken
    in fixed chunks, chunk ``j`` seeded by ``(seed, j)``.  Samples with
    ``V = 0`` contribute 0 when the indicator is false; when it is true they
    are counted as violations and left out of the mean.
    """
    if n < 1000:
        raise ValueError(f"need at least 1000 samples, got {n}")
    c_arr = np.asarray(c_grid, dtype=float)
    if c_arr.size == 0 or np.any(c_arr <= 0):
        raise ValueError("c_grid must hold positive values")
    us, vs = [], []
    for j, lo in enumerate(range(0, n, DC_CHUNK)):
        k = min(DC_CHUNK, n - lo)
        u, v = sampler(trial_rng(seed, j), k)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != (k,) or v.shape != (k,):
            raise RuntimeError(f"sampler returned shapes {u.shape}, {v.shape}; expected ({k},)")
        us.append(u)
        vs.append(v)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    bv = np.asarray(beta(v), dtype=float)
    cap = math.sqrt(n)
    zero = v <= 0
    safe_v = np.where(zero, 1.0, v)

    out = []
    for c in c_arr.tolist():
        ind = u <= c * bv
        bad = zero & ind
        vals = np.where(ind & ~zero, 1.0 / safe_v, 0.0)[~bad]
        est, se = _mean_se(vals)
        lo, lo_se = _mean_se(np.minimum(vals, cap))
        out.append(DcEstimate(c, est, se, n, int(bad.sum()), lo, lo_se, cap))
    return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def procedure_sampler(
    procedure: Callable[[np.ndarray, HypothesisSpace], RejectionSet],
    model: DependenceModel,
    h: str | int,
    space: HypothesisSpace | None = None,
) -> Sampler:
    """Sampler of ``(p_h, |R|)`` with p-values drawn from ``model``."""
    space = space or HypothesisSpace.standard(model.m)
    idx = space.labels.index(h) if isinstance(h, str) else int(h)

    def sample(rng: np.random.Generator, k: int):
        u = np.empty(k)
        v = np.empty(k)
        for i in range(k):
            p = model.sample_pvalues(rng)
            u[i] = p[idx]
            v[i] = procedure(p, space).volume
        return u, v

    return sample


def monotonicity_probe(
    procedure: Callable[[np.ndarray, HypothesisSpace], RejectionSet],
    p,
    space: HypothesisSpace,
    n_perturb: int,
    seed: int,
) -> int:
    """Count random single-coordinate decreases of ``p`` that shrink ``|R|``."""
    if n_perturb < 1:
        raise ValueError("n_perturb must be at least 1")
    base = as_pvalues(p, space)
    vol0 = procedure(base, space).volume
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(n_perturb):
        q = base.copy()
        h = rng.integers(space.m)
        q[h] *= rng.random()
        if procedure(q, space).volume < vol0 - VOLUME_TOL:
            violations += 1
    return violations


@dataclass(frozen=True)
class PrdsCurve:
    u: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    hits: np.ndarray
    nondecreasing: bool

    def to_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "estimate": self.estimate.tolist(),
            "se": self.se.tolist(),
            "hits": self.hits.tolist(),
            "nondecreasing": self.nondecreasing,
        }


def prds_curve_estimate(
    model: DependenceModel,
    procedure: Callable[[np.ndarray, HypothesisSpace], RejectionSet],
    h: str | int,
    r: float,
    u_grid: Sequence[float],
    n: int,
    seed: int,
    space: HypothesisSpace | None = None,
) -> PrdsCurve:
    """Estimate ``u -> P(|R| < r | p_h <= u)`` on ``u_grid``.

    The curve is flagged as nondecreasing unless some adjacent pair drops by
    more than 3 pooled standard errors.  Each grid point needs at least 100
    conditioning hits.
    """
    u = np.asarray(u_grid, dtype=float)
    if u.size == 0 or np.any(u <= 0) or np.any(u > 1) or np.any(np.diff(u) <= 0):
        raise ValueError("u_grid must be increasing in (0, 1]")
    space = space or HypothesisSpace.standard(model.m)
    idx = space.labels.index(h) if isinstance(h, str) else int(h)
    ph = np.empty(n)
    vol = np.empty(n)
    for i in range(n):
        p = model.sample_pvalues(trial_rng(seed, i))
        ph[i] = p[idx]
        vol[i] = procedure(p, space).volume

    small = vol < r
    est = np.empty(u.size)
    se = np.empty(u.size)
    hits = np.empty(u.size, dtype=int)
    for j, uj in enumerate(u.tolist()):
        cond = ph <= uj
        k = int(cond.sum())
        if k < 100:
            raise ValueError(f"only {k} samples with p_h <= {uj:g}; need at least 100")
        e = small[cond].mean()
        est[j], se[j], hits[j] = e, math.sqrt(e * (1 - e) / k), k
    drop = est[:-1] - est[1:]
    pooled = np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    ok = not np.any(drop > 3 * pooled)
    return PrdsCurve(u, est, se, hits, bool(ok))
