"""Threshold collections and the step-wise procedures built on them.

Factorized collections have the form ``Delta(h, r) = alpha * pi(h) * beta(r)``
and define level sets ``L(r) = {h : p_h <= Delta(h, r)}``.  The step-up,
step-down and step-up-down procedures all return some ``L(r_hat)``; they
differ in how ``r_hat`` is picked among the crossing points of
``r -> |L(r)|`` with the diagonal.

The step-up is the largest crossing point and is found by scanning the
cumulative volumes of the hypotheses sorted by ``p_h / pi(h)``.  Step-down
and step-up-down walks quantify over the achievable volumes
``{lam(A) : A subset of H}``, a grid that does not depend on the p-values;
with the counting measure it is {0, 1, ..., m}.  Keeping the grid fixed is
what makes the rejected volume nonincreasing in each p-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from stepfdr.core import (
    VOLUME_TOL,
    HypothesisSpace,
    RejectionSet,
    as_pvalues,
    pi_volume,
    scaled_pvalues,
)
from stepfdr.shape import (
    PriorDistribution,
    ShapeFunction,
    beta_from_prior,
    parse_shape,
)

RANK_KINDS = ("bl_rs", "df", "bl99", "holm", "bonferroni")
DF_PRIORS = ("uniform", "linear", "inverse")


@dataclass(frozen=True)
class FactorizedThresholds:
    """``Delta(h, r) = alpha * pi(h) * beta(r)``.

    ``alpha`` may exceed 1 when it carries a data-dependent factor (the
    adaptive second stage).
    """

    alpha: float
    beta: ShapeFunction

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha!r}")

    def thresholds(self, space: HypothesisSpace, r: float) -> np.ndarray:
        """Per-hypothesis thresholds at volume ``r``."""
        return self.alpha * space.pi * self.beta(r)


@dataclass(frozen=True, eq=False)
class RankThresholds:
    """Per-rank thresholds ``t(1), ..., t(m)`` for a step-down on sorted p-values."""

    t: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or np.any(np.isnan(t)) or np.any(t < 0) or np.any(t > 1):
            raise ValueError("rank thresholds must lie in [0, 1]")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class StepUpDownOrder:
    lam: float

    def __post_init__(self) -> None:
        if not self.lam >= 0:
            raise ValueError(f"step-up-down order must be >= 0, got {self.lam!r}")


def level_set(
    delta: FactorizedThresholds, r: float, p, space: HypothesisSpace
) -> RejectionSet:
    """``L(r) = {h : p_h <= alpha * pi(h) * beta(r)}`` (inclusive)."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    arr = as_pvalues(p, space)
    return RejectionSet(arr <= delta.thresholds(space, r), space)


def _grid(delta: FactorizedThresholds, p: np.ndarray, space: HypothesisSpace):
    """Sorted order, cumulative volumes and the crossing test on the grid.

    ``ok[k]`` is True iff the (k+1)-th sorted hypothesis lies in
    ``L(V[k])``, which is equivalent to ``|L(V[k])| >= V[k]``.
    """
    q = scaled_pvalues(p, space)
    order = np.argsort(q, kind="stable")
    vols = np.cumsum(space.lam[order])
    b = np.asarray(delta.beta(vols), dtype=float)
    ok = p[order] <= delta.alpha * space.pi[order] * b
    return order, vols, ok


def _finish(delta, r_hat: float, p, space) -> RejectionSet:
    return RejectionSet(p <= delta.thresholds(space, r_hat), space)


def step_up(delta: FactorizedThresholds, p, space: HypothesisSpace) -> RejectionSet:
    """Step-up procedure: ``L(r_hat)`` with ``r_hat = max{r : |L(r)| >= r}``.

    The result is the union of every self-consistent set and satisfies
    ``|L(r_hat)| = r_hat``.
    """
    arr = as_pvalues(p, space)
    _, vols, ok = _grid(delta, arr, space)
    hits = np.flatnonzero(ok)
    r_hat = float(vols[hits[-1]]) if hits.size else 0.0
    return _finish(delta, r_hat, arr, space)


def _volume_at(delta: FactorizedThresholds, r: float, p: np.ndarray,
               space: HypothesisSpace) -> float:
    return float(space.lam[p <= delta.thresholds(space, r)].sum())


def _walk_right(delta: FactorizedThresholds, r: float, p: np.ndarray,
                space: HypothesisSpace) -> float:
    """Walk up the volume grid from ``r`` while ``|L(g)| >= g`` holds.

    Requires ``|L(r)| >= r``.  Every grid point between ``r`` and ``|L(r)|``
    passes automatically, so each step jumps to the grid point just above
    the current level-set volume.  The walk ends at a volume ``v`` with
    ``|L(v)| = v``.
    """
    grid = space.volume_grid
    while True:
        v = _volume_at(delta, r, p, space)
        k = int(np.searchsorted(grid, v + VOLUME_TOL, side="right"))
        if k == len(grid):
            return v
        g = float(grid[k])
        if _volume_at(delta, g, p, space) < g - VOLUME_TOL:
            return v
        r = g


def step_down(delta: FactorizedThresholds, p, space: HypothesisSpace) -> RejectionSet:
    """Step-down: ``L(r_hat)`` with ``r_hat`` the last grid volume before the
    first ``r`` with ``|L(r)| < r``."""
    arr = as_pvalues(p, space)
    return _finish(delta, _walk_right(delta, 0.0, arr, space), arr, space)


def step_up_down(
    delta: FactorizedThresholds,
    order: StepUpDownOrder | float,
    p,
    space: HypothesisSpace,
) -> RejectionSet:
    """Step-up-down procedure of order ``lam`` in ``[0, Lambda(H)]``.

    ``lam`` is first moved up to the nearest achievable volume.  If
    ``|L(lam)| >= lam`` the procedure walks right from ``lam`` while the
    crossing test keeps holding; otherwise it takes the largest crossing
    point strictly left of ``lam``.  ``lam = Lambda(H)`` gives the step-up,
    ``lam = 0`` the step-down.
    """
    lam = order.lam if isinstance(order, StepUpDownOrder) else float(order)
    total = space.total_volume
    if not (0 <= lam <= total + VOLUME_TOL):
        raise ValueError(f"order must lie in [0, {total}], got {lam}")
    arr = as_pvalues(p, space)
    grid = space.volume_grid
    lam = float(grid[min(int(np.searchsorted(grid, lam - VOLUME_TOL)), len(grid) - 1)])

    if _volume_at(delta, lam, arr, space) >= lam - VOLUME_TOL:
        r_hat = _walk_right(delta, lam, arr, space)
    else:
        _, vols, ok = _grid(delta, arr, space)
        left = np.flatnonzero(ok & (vols < lam - VOLUME_TOL))
        r_hat = float(vols[left[-1]]) if left.size else 0.0
    return _finish(delta, r_hat, arr, space)


def _df_prior_check(beta: ShapeFunction, m: int) -> None:
    nu = beta.prior
    if beta.kind != "prior_based" or not isinstance(nu, PriorDistribution):
        raise ValueError("df thresholds need a prior-based shape function")
    k = 1.0 / nu.support
    if np.any(np.abs(k - np.round(k)) > 1e-9) or np.any(k < 1 - 1e-9) or np.any(k > m + 1e-9):
        raise ValueError("df thresholds need a prior supported on {1/k : 1 <= k <= m}")


def make_rank_thresholds(
    kind: str, alpha: float, m: int, beta: ShapeFunction | None = None
) -> RankThresholds:
    """Per-rank step-down thresholds ``t(i)``, i = 1..m, clamped to [0, 1].

    With ``j = m - i + 1``:

    - ``bl_rs``: ``alpha m / j**2``
    - ``df``: ``alpha m / j * beta(1/j)``, ``beta`` from a prior on {1/k}
    - ``bl99``: ``1 - (1 - min(1, alpha m / j))**(1/j)``
    - ``holm``: ``alpha / j``
    - ``bonferroni``: ``alpha / m``
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if m < 1:
        raise ValueError("m must be at least 1")
    i = np.arange(1, m + 1, dtype=float)
    j = m - i + 1
    if kind == "bl_rs":
        t = alpha * m / j**2
    elif kind == "df":
        if beta is None:
            raise ValueError("df thresholds need a shape function")
        _df_prior_check(beta, m)
        t = alpha * m / j * np.asarray(beta(1.0 / j))
    elif kind == "bl99":
        t = 1.0 - (1.0 - np.minimum(1.0, alpha * m / j)) ** (1.0 / j)
    elif kind == "holm":
        t = alpha / j
    elif kind == "bonferroni":
        t = np.full(m, alpha / m)
    else:
        raise ValueError(f"unknown rank threshold kind {kind!r}")
    return RankThresholds(np.clip(t, 0.0, 1.0), kind)


def df_shape(prior_kind: str, m: int) -> ShapeFunction:
    """Shape function of a prior on {1/k} for the distribution-free step-down."""
    return beta_from_prior(PriorDistribution.reciprocal_grid(prior_kind, m),
                           name=f"df:{prior_kind}")


def rank_step_down(t: RankThresholds, p, space: HypothesisSpace) -> RejectionSet:
    """Reject the ``i*`` smallest p-values, ``i* = max{i : p_(j) <= t(j), j <= i}``.

    Only defined for the counting measure; ``pi`` is not used.
    """
    if not space.is_standard_lambda:
        raise ValueError("rank-based step-down requires the counting volume measure")
    if len(t) != space.m:
        raise ValueError(f"need {space.m} rank thresholds, got {len(t)}")
    arr = as_pvalues(p, space)
    order = np.argsort(arr, kind="stable")
    fails = np.flatnonzero(arr[order] > t.t)
    i_star = fails[0] if fails.size else space.m
    mask = np.zeros(space.m, dtype=bool)
    mask[order[:i_star]] = True
    return RejectionSet(mask, space)


@dataclass
class AdaptiveResult:
    rejected: RejectionSet
    pihat0: float
    first_stage: RejectionSet


def adaptive_two_stage(
    alpha0: float, alpha1: float, beta: ShapeFunction, p, space: HypothesisSpace
) -> AdaptiveResult:
    """Two-stage adaptive step-up.

    Stage one is Holm's step-down at level ``alpha0``; ``pihat0`` is the
    pi-volume of the hypotheses it does not reject.  Stage two is the step-up
    with collection ``alpha1 * pi(h) * beta(r) / pihat0`` (reject everything
    when ``pihat0 = 0``).
    """
    for a in (alpha0, alpha1):
        if not 0 < a < 1:
            raise ValueError(f"adaptive levels must lie in (0, 1), got {a!r}")
    arr = as_pvalues(p, space)
    r0 = rank_step_down(make_rank_thresholds("holm", alpha0, space.m), arr, space)
    pihat0 = pi_volume(~r0.mask, space)
    if pihat0 <= 0:
        return AdaptiveResult(RejectionSet(np.ones(space.m, dtype=bool), space), 0.0, r0)
    delta = FactorizedThresholds(alpha1 * (1.0 / pihat0), beta)
    return AdaptiveResult(step_up(delta, arr, space), pihat0, r0)


def shape_size(space: HypothesisSpace) -> int:
    """Number of grid points a shape needs to cover volumes up to Lambda(H)."""
    if space.is_standard_lambda:
        return space.m
    return max(1, math.ceil(space.total_volume - VOLUME_TOL))


@lru_cache(maxsize=256)
def _cached_shape(spec: str, m: int) -> ShapeFunction:
    return parse_shape(spec, m)


@lru_cache(maxsize=256)
def _cached_rank(kind: str, prior: str, alpha: float, m: int) -> RankThresholds:
    beta = df_shape(prior, m) if kind == "df" else None
    return make_rank_thresholds(kind, alpha, m, beta)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True)
class ProcedureResult:
    rejected: RejectionSet
    pihat0: float | None = None


@dataclass(frozen=True)
class Procedure:
    """A fully specified procedure, buildable from a short spec string.

    Spec forms (``<shape>`` as accepted by :func:`stepfdr.shape.parse_shape`):

    - ``su:<shape>``            step-up
    - ``sd:<shape>``            step-down
    - ``sud:<lam>:<shape>``     step-up-down of order ``lam``; ``lam`` is a
      number or ``<f>H`` meaning ``f * Lambda(H)`` (``1H``, ``0.5H``)
    - ``rank:<kind>``           rank step-down, ``kind`` in bl_rs, bl99,
      holm, bonferroni
    - ``rank:df:<prior>``       distribution-free rank step-down with prior
      ``uniform``, ``linear`` or ``inverse`` on {1/k}
    - ``adaptive:<a0>,<a1>[:<shape>]``  two-stage adaptive step-up

    ``alpha`` is supplied separately and ignored by ``adaptive``, whose
    levels are part of the spec.
    """

    kind: str
    alpha: float = 0.05
    shape: str = "linear"
    lam: float | None = None
    lam_fraction: float | None = None
    rank_kind: str | None = None
    df_prior: str | None = None
    alpha0: float | None = None
    alpha1: float | None = None

    @classmethod
    def parse(cls, spec: str, alpha: float = 0.05, default_shape: str = "linear") -> Procedure:
        s = spec.strip()
        head, _, rest = s.partition(":")
        head = head.lower()
        if head in ("su", "sd"):
            return cls(head, alpha, rest or default_shape)
        if head == "sud":
            lam_tok, _, shp = rest.partition(":")
            if not lam_tok:
                raise ValueError(f"missing order in procedure spec {spec!r}")
            lam, frac = None, None
            try:
                if lam_tok.upper().endswith("H"):
                    frac = float(lam_tok[:-1] or 1.0)
                    if not 0 <= frac <= 1:
                        raise ValueError
                else:
                    lam = float(lam_tok)
                    if lam < 0:
                        raise ValueError
            except ValueError:
                raise ValueError(f"malformed order {lam_tok!r} in procedure spec {spec!r}") from None
            return cls("sud", alpha, shp or default_shape, lam=lam, lam_fraction=frac)
        if head == "rank":
            kind, _, prior = rest.partition(":")
            if kind not in RANK_KINDS:
                raise ValueError(f"unknown rank kind {kind!r} in procedure spec {spec!r}")
            if kind == "df":
                if prior not in DF_PRIORS:
                    raise ValueError(f"unknown df prior {prior!r} in procedure spec {spec!r}")
                return cls("rank", alpha, rank_kind=kind, df_prior=prior)
            if prior:
                raise ValueError(f"unexpected token {prior!r} in procedure spec {spec!r}")
            return cls("rank", alpha, rank_kind=kind)
        if head == "adaptive":
            levels, _, shp = rest.partition(":")
            parts = levels.split(",")
            try:
                a0, a1 = (float(x) for x in parts)
            except ValueError:
                raise ValueError(f"malformed levels {levels!r} in procedure spec {spec!r}") from None
            return cls("adaptive", alpha, shp or default_shape, alpha0=a0, alpha1=a1)
        raise ValueError(f"unknown procedure {head!r} in spec {spec!r}")

    @property
    def spec(self) -> str:
        """Canonical spec string (alpha excluded)."""
        if self.kind in ("su", "sd"):
            return f"{self.kind}:{self.shape}"
        if self.kind == "sud":
            lam = f"{_fmt_num(self.lam_fraction)}H" if self.lam_fraction is not None else _fmt_num(self.lam)
            return f"sud:{lam}:{self.shape}"
        if self.kind == "rank":
            return f"rank:df:{self.df_prior}" if self.rank_kind == "df" else f"rank:{self.rank_kind}"
        return f"adaptive:{_fmt_num(self.alpha0)},{_fmt_num(self.alpha1)}:{self.shape}"

    def with_alpha(self, alpha: float) -> Procedure:
        return Procedure(self.kind, alpha, self.shape, self.lam, self.lam_fraction,
                         self.rank_kind, self.df_prior, self.alpha0, self.alpha1)

    def collection(self, space: HypothesisSpace) -> FactorizedThresholds | RankThresholds:
        if self.kind == "rank":
            return _cached_rank(self.rank_kind, self.df_prior or "", self.alpha, space.m)
        if self.kind == "adaptive":
            return FactorizedThresholds(self.alpha1, _cached_shape(self.shape, shape_size(space)))
        return FactorizedThresholds(self.alpha, _cached_shape(self.shape, shape_size(space)))

    def run(self, p, space: HypothesisSpace) -> ProcedureResult:
        if self.kind == "adaptive":
            beta = _cached_shape(self.shape, shape_size(space))
            res = adaptive_two_stage(self.alpha0, self.alpha1, beta, p, space)
            return ProcedureResult(res.rejected, res.pihat0)
        coll = self.collection(space)
        if self.kind == "su":
            out = step_up(coll, p, space)
        elif self.kind == "sd":
            out = step_down(coll, p, space)
        elif self.kind == "sud":
            lam = self.lam if self.lam_fraction is None else self.lam_fraction * space.total_volume
            out = step_up_down(coll, lam, p, space)
        else:
            out = rank_step_down(coll, p, space)
        return ProcedureResult(out)

    def __call__(self, p, space: HypothesisSpace) -> RejectionSet:
        return self.run(p, space).rejected
