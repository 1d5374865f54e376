"""Hypothesis spaces, p-value families and false-discovery accounting.

A :class:`HypothesisSpace` is a finite set of hypotheses carrying two
weightings: a volume measure ``lam`` (used to measure rejection sets) and a
weight function ``pi`` (used to rescale individual thresholds).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

#: Absolute tolerance used whenever two volumes are compared.
VOLUME_TOL = 1e-9
#: Largest total volume for which integer subset sums are tabulated.
MAX_INTEGER_VOLUME = 10**7
#: Largest space whose non-integer subset sums are enumerated outright.
MAX_ENUMERATED = 20


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HypothesisSpace:
    """Finite hypothesis set with volume weights ``lam`` and weights ``pi``.

    ``pi`` is not required to be a density with respect to ``lam``; use
    :meth:`pi_total` to read off the achieved budget factor.
    """

    labels: tuple[str, ...]
    lam: np.ndarray
    pi: np.ndarray

    def __post_init__(self) -> None:
        labels = tuple(str(x) for x in self.labels)
        lam = _frozen(self.lam)
        pi = _frozen(self.pi)
        m = len(labels)
        if m == 0:
            raise ValueError("hypothesis space must be non-empty")
        if len(set(labels)) != m:
            raise ValueError("hypothesis labels must be unique")
        if lam.shape != (m,) or pi.shape != (m,):
            raise ValueError(
                f"lam and pi must have length {m}, got {lam.shape} and {pi.shape}"
            )
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("volume weights must be positive and finite")
        if not np.all(np.isfinite(pi)) or np.any(pi < 0) or np.any(pi > 1):
            raise ValueError("weights pi must lie in [0, 1]")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def standard(cls, m_or_labels: int | Sequence[str]) -> HypothesisSpace:
        """Counting measure and uniform weights ``pi = 1/m``."""
        if isinstance(m_or_labels, (int, np.integer)):
            labels = tuple(f"h{i + 1}" for i in range(int(m_or_labels)))
        else:
            labels = tuple(m_or_labels)
        m = len(labels)
        return cls(labels, np.ones(m), np.full(m, 1.0 / m) if m else np.ones(0))

    @property
    def m(self) -> int:
        return len(self.labels)

    @cached_property
    def total_volume(self) -> float:
        return float(self.lam.sum())

    @cached_property
    def pi_total(self) -> float:
        """Pi(H), the pi-weighted volume of the whole space."""
        return float(np.dot(self.lam, self.pi))

    @cached_property
    def is_standard_lambda(self) -> bool:
        return bool(np.all(self.lam == 1.0))

    @cached_property
    def is_standard(self) -> bool:
        return self.is_standard_lambda and bool(np.all(self.pi == 1.0 / self.m))

    @cached_property
    def _index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def mask(self, members: Iterable[str] | np.ndarray) -> np.ndarray:
        """Boolean mask for a set of labels (or pass a mask through)."""
        if isinstance(members, np.ndarray) and members.dtype == bool:
            if members.shape != (self.m,):
                raise ValueError(f"mask must have length {self.m}")
            return members
        out = np.zeros(self.m, dtype=bool)
        for lab in members:
            try:
                out[self._index[str(lab)]] = True
            except KeyError:
                raise KeyError(f"unknown hypothesis id {lab!r}") from None
        return out

    def volume(self, members: Iterable[str] | np.ndarray) -> float:
        return float(self.lam[self.mask(members)].sum())

    @cached_property
    def volume_grid(self) -> np.ndarray:
        """Sorted achievable volumes ``{lam(A) : A subset of H}``.

        This is {0, 1, ..., m} for the counting measure.  Integer volumes
        are tabulated by a reachability sweep; other volumes are enumerated,
        which is only done for small spaces.
        """
        lam = self.lam
        if self.is_standard_lambda:
            return _frozen(np.arange(self.m + 1))
        ints = np.round(lam)
        if np.all(np.abs(lam - ints) <= VOLUME_TOL) and ints.sum() <= MAX_INTEGER_VOLUME:
            reach = np.zeros(int(ints.sum()) + 1, dtype=bool)
            reach[0] = True
            for w in ints.astype(int).tolist():
                reach[w:] = reach[w:] | reach[:-w]
            return _frozen(np.flatnonzero(reach))
        if self.m <= MAX_ENUMERATED:
            sums = np.zeros(1)
            for w in lam.tolist():
                sums = np.unique(np.concatenate([sums, sums + w]))
            return _frozen(sums)
        raise ValueError(
            "achievable volumes are only tabulated for integer volume weights "
            f"(total at most {MAX_INTEGER_VOLUME}) or at most {MAX_ENUMERATED} hypotheses"
        )


@dataclass(frozen=True, eq=False)
class PValueVector:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = _frozen(self.values)
        if v.ndim != 1:
            raise ValueError("p-values must be a 1-d vector")
        if np.any(np.isnan(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValueError("p-values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def as_pvalues(p, space: HypothesisSpace) -> np.ndarray:
    """Validate ``p`` against ``space`` and return a float array."""
    if isinstance(p, PValueVector):
        arr = p.values
    else:
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 1 or np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("p-values must be a 1-d vector with entries in [0, 1]")
    if len(arr) != space.m:
        raise ValueError(
            f"length mismatch: {len(arr)} p-values for {space.m} hypotheses"
        )
    return arr


class RejectionSet:
    """A set of rejected hypotheses together with its volume.

    Stored as a boolean mask over ``space.labels``; equality is by member set.
    """

    def __init__(self, mask: np.ndarray, space: HypothesisSpace):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (space.m,):
            raise ValueError(f"mask must have length {space.m}")
        mask.setflags(write=False)
        self.mask = mask
        self.space = space

    @classmethod
    def from_members(cls, members: Iterable[str], space: HypothesisSpace) -> RejectionSet:
        return cls(space.mask(members), space)

    @cached_property
    def members(self) -> frozenset[str]:
        return frozenset(np.asarray(self.space.labels, dtype=object)[self.mask])

    @cached_property
    def volume(self) -> float:
        return float(self.space.lam[self.mask].sum())

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RejectionSet):
            return NotImplemented
        return self.members == other.members

    def __hash__(self) -> int:
        return hash(self.members)

    def __repr__(self) -> str:
        shown = sorted(self.members)
        if len(shown) > 6:
            shown = shown[:6] + ["..."]
        return f"RejectionSet({shown}, volume={self.volume:g})"


def weighted_pvalues(p, space: HypothesisSpace) -> np.ndarray:
    """Weighted p-values ``p_h / (m * pi(h))``.

    Hypotheses with ``pi(h) = 0`` get ``+inf`` unless ``p_h = 0``, in which
    case they get 0.
    """
    arr = as_pvalues(p, space)
    out = _ratio(arr, space.m * space.pi)
    # m * (1/m) need not round to exactly 1
    uniform = space.pi == 1.0 / space.m
    out[uniform] = arr[uniform]
    return out


def scaled_pvalues(p, space: HypothesisSpace) -> np.ndarray:
    """``q_h = p_h / pi(h)``, the sort key used by the step-wise procedures."""
    return _ratio(as_pvalues(p, space), space.pi)


def _ratio(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    pos = w > 0
    out[pos] = p[pos] / w[pos]
    out[~pos] = np.where(p[~pos] > 0, np.inf, 0.0)
    return out


def pi_volume(members: Iterable[str] | np.ndarray, space: HypothesisSpace) -> float:
    """Pi(S) = sum over S of lam(h) * pi(h)."""
    mask = space.mask(members)
    return float(np.dot(space.lam[mask], space.pi[mask]))


def fdp(
    rejected: RejectionSet | Iterable[str] | np.ndarray,
    true_nulls: Iterable[str] | np.ndarray,
    space: HypothesisSpace,
) -> float:
    """False discovery proportion, lam-weighted, 0 when nothing is rejected."""
    r = rejected.mask if isinstance(rejected, RejectionSet) else space.mask(rejected)
    h0 = space.mask(true_nulls)
    vol = space.lam[r].sum()
    if vol <= 0:
        return 0.0
    return float(space.lam[r & h0].sum() / vol)
