"""Shape functions and the prior distributions that generate them.

A prior ``nu`` on (0, inf) induces the shape function

    beta_nu(r) = integral over (0, r] of x dnu(x),

which is always dominated by the identity.  Discrete priors are the working
representation; continuous priors are discretized onto {1, ..., m} before
they are used by a procedure, and evaluated directly only for plotting.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

QUAD_EPSABS = 1e-10


def _compensated_cumsum(values: np.ndarray) -> np.ndarray:
    # Neumaier summation; keeps prefix sums of ~1e6 terms accurate to a few ulp
    out = np.empty(len(values))
    s = 0.0
    c = 0.0
    for i, x in enumerate(values.tolist()):
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return out


def _fmt_params(params: tuple[tuple[str, float], ...]) -> str:
    return ",".join(f"{k}={v:g}" for k, v in params)


@dataclass(frozen=True, eq=False)
class PriorDistribution:
    """Discrete probability distribution on a finite set of positive reals."""

    support: np.ndarray
    mass: np.ndarray
    family: str = "custom"
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.support, dtype=float).ravel()
        w = np.asarray(self.mass, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("prior support is empty")
        if x.shape != w.shape:
            raise ValueError("support and mass must have the same length")
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise ValueError("prior support points must be positive and finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("prior masses must be nonnegative")
        if abs(math.fsum(w.tolist()) - 1.0) > 1e-12:
            raise ValueError(f"prior masses sum to {math.fsum(w.tolist())!r}, not 1")
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", x)
        object.__setattr__(self, "mass", w)

    @classmethod
    def from_weights(
        cls,
        support: Sequence[float] | np.ndarray,
        weights: Sequence[float] | np.ndarray,
        family: str = "custom",
        params: tuple[tuple[str, float], ...] = (),
    ) -> PriorDistribution:
        """Normalize nonnegative ``weights`` into a prior on ``support``."""
        w = np.asarray(weights, dtype=float)
        total = math.fsum(w.tolist())
        if not np.isfinite(total) or total <= 0:
            raise ValueError("prior weights are not normalizable")
        return cls(np.asarray(support, dtype=float), w / total, family, params)

    @classmethod
    def dirac(cls, mu: float) -> PriorDistribution:
        return cls(np.array([mu]), np.array([1.0]), "dirac", (("mu", mu),))

    @classmethod
    def uniform(cls, m: int) -> PriorDistribution:
        """Uniform on {1, ..., m}."""
        k = np.arange(1, m + 1, dtype=float)
        return cls(k, np.full(m, 1.0 / m), "uniform", (("m", m),))

    @classmethod
    def power(cls, gamma: float, m: int) -> PriorDistribution:
        """``nu({k})`` proportional to ``k**gamma`` on {1, ..., m}."""
        k = np.arange(1, m + 1, dtype=float)
        return cls.from_weights(k, k**gamma, "power", (("gamma", gamma), ("m", m)))

    @classmethod
    def reciprocal_grid(cls, kind: str, m: int) -> PriorDistribution:
        """Priors on {1/k : 1 <= k <= m} for the distribution-free step-down.

        ``kind`` is ``uniform``, ``linear`` (mass proportional to k) or
        ``inverse`` (mass proportional to 1/k).
        """
        k = np.arange(1, m + 1, dtype=float)
        weights = {"uniform": np.ones(m), "linear": k, "inverse": 1.0 / k}
        if kind not in weights:
            raise ValueError(f"unknown reciprocal-grid prior {kind!r}")
        return cls.from_weights(1.0 / k, weights[kind], f"recip_{kind}", (("m", m),))

    @property
    def description(self) -> str:
        p = _fmt_params(self.params)
        return f"{self.family}({p})" if p else self.family

    @cached_property
    def _cum_moment(self) -> np.ndarray:
        return _compensated_cumsum(self.support * self.mass)

    def partial_mean(self, r):
        """``sum of x * nu({x})`` over support points ``x <= r``."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.support, r, side="right")
        cm = np.concatenate(([0.0], self._cum_moment))
        out = cm[idx]
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ContinuousPrior:
    """A prior given by an (unnormalized) density on ``[lower, upper]`` plus atoms.

    The density is normalized together with the atoms; ``upper`` may be
    ``inf``.
    """

    family: str
    params: tuple[tuple[str, float], ...]
    pdf: Callable[[float], float] | None = None
    lower: float = 0.0
    upper: float = math.inf
    atoms: tuple[tuple[float, float], ...] = ()
    breakpoints: tuple[float, ...] = field(default=())

    @classmethod
    def dirac(cls, x0: float) -> ContinuousPrior:
        if not x0 > 0:
            raise ValueError("Dirac location must be positive")
        return cls("dirac", (("mu", x0),), atoms=((x0, 1.0),))

    @classmethod
    def uniform(cls, m: float) -> ContinuousPrior:
        """Uniform density on (0, m]."""
        return cls("uniform", (("m", m),), lambda x: 1.0, 0.0, float(m))

    @classmethod
    def power(cls, gamma: float, m: float) -> ContinuousPrior:
        """Density proportional to ``x**gamma`` on [1, m]."""
        return cls("power", (("gamma", gamma), ("m", m)), lambda x: x**gamma, 1.0, float(m))

    @classmethod
    def exponential(cls, lam: float, trunc: float | None = None) -> ContinuousPrior:
        """Exponential with mean ``lam``, optionally truncated to [0, trunc]."""
        if not lam > 0:
            raise ValueError("exponential scale must be positive")
        upper = math.inf if trunc is None else float(trunc)
        params = (("lambda", lam),) + ((("trunc", upper),) if trunc is not None else ())
        return cls("exp", params, lambda x: math.exp(-x / lam) / lam, 0.0, upper)

    @classmethod
    def truncated_gaussian(cls, mu: float, sigma: float) -> ContinuousPrior:
        """Law of ``max(X, 1)`` with ``X ~ N(mu, sigma**2)``."""
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        atom = float(special.ndtr((1.0 - mu) / sigma))
        c = 1.0 / (sigma * math.sqrt(2 * math.pi))

        def pdf(x: float) -> float:
            return c * math.exp(-0.5 * ((x - mu) / sigma) ** 2)

        bp = tuple(b for b in (mu - 3 * sigma, mu, mu + 3 * sigma) if b > 1.0)
        return cls(
            "gauss", (("mu", mu), ("sigma", sigma)), pdf, 1.0, math.inf,
            atoms=((1.0, atom),), breakpoints=bp,
        )

    @property
    def description(self) -> str:
        return f"{self.family}({_fmt_params(self.params)})"

    def _density_mass(self, a: float, b: float, moment: bool = False) -> float:
        lo, hi = max(a, self.lower), min(b, self.upper)
        if self.pdf is None or not hi > lo:
            return 0.0
        f = (lambda x: x * self.pdf(x)) if moment else self.pdf
        pts = [p for p in self.breakpoints if lo < p < hi] or None
        if math.isinf(hi):
            # quad rejects `points` on infinite ranges
            if pts:
                left, _ = integrate.quad(f, lo, pts[-1], points=pts[:-1] or None,
                                         epsabs=QUAD_EPSABS, limit=200)
                right, _ = integrate.quad(f, pts[-1], hi, epsabs=QUAD_EPSABS, limit=200)
                return left + right
            val, _ = integrate.quad(f, lo, hi, epsabs=QUAD_EPSABS, limit=200)
            return val
        val, _ = integrate.quad(f, lo, hi, points=pts, epsabs=QUAD_EPSABS, limit=200)
        return val

    @cached_property
    def total(self) -> float:
        z = self._density_mass(self.lower, self.upper) + sum(w for _, w in self.atoms)
        if not np.isfinite(z) or z <= 0:
            raise ValueError(f"prior {self.description} is not normalizable")
        return z

    def interval_mass(self, a: float, b: float) -> float:
        """Normalized mass of the interval (a, b]."""
        atoms = sum(w for x, w in self.atoms if a < x <= b)
        return (self._density_mass(a, b) + atoms) / self.total

    def interval_moment(self, a: float, b: float) -> float:
        atoms = sum(x * w for x, w in self.atoms if a < x <= b)
        return (self._density_mass(a, b, moment=True) + atoms) / self.total

    @cached_property
    def _unit_moments(self) -> dict[int, np.ndarray]:
        return {}

    def partial_mean(self, r):
        """``integral over (0, r] of x dnu(x)``, computed on unit cells."""
        r_arr = np.asarray(r, dtype=float)
        if np.any(r_arr < 0):
            raise ValueError("shape functions are defined for r >= 0")
        n = int(math.floor(float(r_arr.max()))) if r_arr.size else 0
        cum = self._cumulative_unit_moments(n)
        flat = r_arr.ravel()
        out = np.empty(flat.shape)
        for i, x in enumerate(flat.tolist()):
            k = int(math.floor(x))
            out[i] = cum[k] + (self.interval_moment(k, x) if x > k else 0.0)
        out = out.reshape(r_arr.shape)
        return float(out) if out.ndim == 0 else out

    def _cumulative_unit_moments(self, n: int) -> np.ndarray:
        cache = self._unit_moments
        have = max(cache) if cache else -1
        if have < n:
            cells = np.array([self.interval_moment(k - 1, k) for k in range(1, n + 1)])
            cache.clear()
            cache[n] = np.concatenate(([0.0], _compensated_cumsum(cells)))
            have = n
        return cache[have]


def discretize_prior(nu: ContinuousPrior, m: int) -> PriorDistribution:
    """Push ``nu`` onto {1, ..., m}.

    Cell ``k < m`` receives the mass of (k-1, k]; cell ``m`` receives the
    mass of (m-1, inf).  The resulting shape function dominates the
    continuous one at every integer in {1, ..., m}.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    masses = [nu.interval_mass(k - 1, k) for k in range(1, m)]
    masses.append(nu.interval_mass(m - 1, math.inf))
    w = np.clip(np.array(masses), 0.0, None)
    return PriorDistribution.from_weights(
        np.arange(1, m + 1, dtype=float), w, nu.family, nu.params + (("m", m),)
    )


@dataclass(frozen=True, eq=False)
class ShapeFunction:
    """A nondecreasing function beta on [0, inf).

    ``kind`` is one of ``linear``, ``scaled_linear``, ``prior_based``,
    ``scale_invariant_power``, ``dirac`` or ``continuous_prior`` (the last is
    for plotting only).  Instances are callable on scalars and arrays.
    """

    kind: str
    c: float = 1.0
    gamma: float = 0.0
    m: float = 1.0
    x0: float = 0.0
    prior: PriorDistribution | ContinuousPrior | None = None
    name: str = ""

    @classmethod
    def linear(cls) -> ShapeFunction:
        return cls("linear", name="linear")

    @classmethod
    def scaled_linear(cls, c: float, name: str = "") -> ShapeFunction:
        if not c > 0:
            raise ValueError("scale must be positive")
        return cls("scaled_linear", c=float(c), name=name or f"scaled:c={c:g}")

    @classmethod
    def benjamini_yekutieli(cls, m: int) -> ShapeFunction:
        """``r / (1 + 1/2 + ... + 1/m)``."""
        gamma_m = math.fsum(1.0 / i for i in range(1, m + 1))
        return cls("scaled_linear", c=1.0 / gamma_m, name="by")

    @classmethod
    def scale_invariant_power(cls, gamma: float, m: float) -> ShapeFunction:
        if not gamma > -1:
            raise ValueError("scale-invariant power shape needs gamma > -1")
        return cls("scale_invariant_power", gamma=float(gamma), m=float(m),
                   name=f"sip:gamma={gamma:g}")

    @classmethod
    def dirac(cls, x0: float) -> ShapeFunction:
        if not x0 > 0:
            raise ValueError("Dirac location must be positive")
        return cls("dirac", x0=float(x0), name=f"dirac:x0={x0:g}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        k = self.kind
        if k == "linear":
            out = r * 1.0
        elif k == "scaled_linear":
            out = self.c * r
        elif k in ("prior_based", "continuous_prior"):
            out = np.asarray(self.prior.partial_mean(r))
        elif k == "scale_invariant_power":
            g = self.gamma
            u = np.minimum(r / self.m, 1.0)
            out = self.m * ((g + 1) / (g + 2)) * u ** (g + 2)
        elif k == "dirac":
            out = np.where(r >= self.x0, self.x0, 0.0)
        else:
            raise ValueError(f"unknown shape kind {k!r}")
        return float(out) if out.ndim == 0 else out


def beta_from_prior(nu: PriorDistribution, name: str = "") -> ShapeFunction:
    """Shape function ``r -> sum_{x <= r} x * nu({x})`` of a discrete prior."""
    if not isinstance(nu, PriorDistribution):
        raise TypeError("beta_from_prior expects a discrete PriorDistribution")
    return ShapeFunction("prior_based", prior=nu, name=name or f"prior:{nu.description}")


def beta_from_continuous_prior(nu: ContinuousPrior, name: str = "") -> ShapeFunction:
    return ShapeFunction("continuous_prior", prior=nu, name=name or f"cprior:{nu.description}")


def shape_eval(beta: ShapeFunction, r):
    """Evaluate ``beta`` at ``r >= 0``."""
    if np.any(np.asarray(r) < 0):
        raise ValueError(f"shape functions are defined for r >= 0, got {r!r}")
    return beta(r)


def bonferroni_crossover(beta: ShapeFunction, m: int) -> int | None:
    """Smallest r in {1, ..., m} with ``beta(r) >= 1``, or None."""
    vals = np.asarray(beta(np.arange(1, m + 1, dtype=float)))
    hit = np.flatnonzero(vals >= 1.0)
    return int(hit[0]) + 1 if hit.size else None


def holm_reference(m: int, r) -> np.ndarray:
    """Normalized Holm step-down curve ``1 / (m - r + 1)``."""
    return 1.0 / (m - np.asarray(r, dtype=float) + 1.0)


@dataclass
class ShapeTable:
    r: np.ndarray
    columns: dict[str, np.ndarray]

    def to_csv(self) -> str:
        names = list(self.columns)
        lines = [",".join(["r", *names])]
        cols = [self.columns[n].tolist() for n in names]
        for i, r in enumerate(self.r.tolist()):
            lines.append(",".join([str(int(r)), *(repr(float(c[i])) for c in cols)]))
        return "\n".join(lines) + "\n"


def shape_table(
    shapes: Sequence[ShapeFunction], m: int, holm: bool = False
) -> ShapeTable:
    """Values ``beta(r) / m`` for r = 1..m, one column per shape.

    With ``holm=True`` a ``holm`` reference column ``1/(m - r + 1)`` is added.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    r = np.arange(1, m + 1, dtype=float)
    cols: dict[str, np.ndarray] = {}
    for s in shapes:
        name = s.name or s.kind
        if name in cols:
            raise ValueError(f"duplicate column {name!r}")
        cols[name] = np.asarray(s(r), dtype=float) / m
    if holm:
        cols["holm"] = holm_reference(m, r)
    return ShapeTable(r, cols)


def _parse_params(tokens: Sequence[str], spec: str) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or not key:
            raise ValueError(f"malformed parameter {tok!r} in shape spec {spec!r}")
        if val.lower() in ("none", "inf"):
            out[key] = None
            continue
        try:
            out[key] = float(val)
        except ValueError:
            raise ValueError(f"malformed parameter {tok!r} in shape spec {spec!r}") from None
    return out


def _need(params: dict, key: str, spec: str) -> float:
    if params.get(key) is None:
        raise ValueError(f"shape spec {spec!r} is missing parameter {key!r}")
    return float(params[key])


def parse_shape(spec: str, m: int, continuous: bool = False) -> ShapeFunction:
    """Build a shape function for ``m`` hypotheses from a spec string.

    Recognised forms: ``linear``, ``by``, ``scaled:c=<c>``, ``sip:gamma=<g>``,
    ``prior:uniform``, ``prior:power:gamma=<g>``, ``prior:dirac:mu=<x>``,
    ``prior:exp:lambda=<l>[:trunc=<t>|none]``,
    ``prior:gauss:mu=<mu>:sigma=<s>``.

    Continuous priors are discretized onto {1..m} unless ``continuous`` is
    set, in which case they are evaluated directly (for plotting).  The
    discrete ``uniform`` and ``power`` priors live on {1..m} in the default
    mode; with ``continuous`` the power prior becomes the density
    ``x**gamma`` on [1, m].
    """
    tokens = spec.strip().split(":")
    head = tokens[0].lower()
    if head == "linear" and len(tokens) == 1:
        return ShapeFunction.linear()
    if head == "by" and len(tokens) == 1:
        return ShapeFunction.benjamini_yekutieli(m)
    if head == "scaled":
        p = _parse_params(tokens[1:], spec)
        return ShapeFunction.scaled_linear(_need(p, "c", spec), name=spec)
    if head == "sip":
        p = _parse_params(tokens[1:], spec)
        s = ShapeFunction.scale_invariant_power(_need(p, "gamma", spec), m)
        return _renamed(s, spec)
    if head != "prior" or len(tokens) < 2:
        raise ValueError(f"unknown shape spec {spec!r}")

    family = tokens[1].lower()
    p = _parse_params(tokens[2:], spec)
    if family == "uniform":
        return beta_from_prior(PriorDistribution.uniform(m), name=spec)
    if family == "power":
        g = _need(p, "gamma", spec)
        if continuous:
            return beta_from_continuous_prior(ContinuousPrior.power(g, m), name=spec)
        return beta_from_prior(PriorDistribution.power(g, m), name=spec)
    if family == "dirac":
        cp = ContinuousPrior.dirac(_need(p, "mu", spec))
    elif family == "exp":
        trunc = p["trunc"] if "trunc" in p else float(m)
        cp = ContinuousPrior.exponential(_need(p, "lambda", spec), trunc)
    elif family == "gauss":
        cp = ContinuousPrior.truncated_gaussian(_need(p, "mu", spec), _need(p, "sigma", spec))
    else:
        raise ValueError(f"unknown prior family {tokens[1]!r} in shape spec {spec!r}")
    if continuous:
        return beta_from_continuous_prior(cp, name=spec)
    return beta_from_prior(discretize_prior(cp, m), name=spec)


def _renamed(s: ShapeFunction, name: str) -> ShapeFunction:
    return ShapeFunction(s.kind, s.c, s.gamma, s.m, s.x0, s.prior, name)
