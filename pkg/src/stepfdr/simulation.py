"""Seeded p-value generators and Monte-Carlo error-rate estimation.

Every trial draws from its own random stream, derived from the pair
``(master_seed, trial_index)`` with :class:`numpy.random.SeedSequence`, so
aggregate results do not depend on how trials are scheduled across threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import special

from stepfdr.core import HypothesisSpace, RejectionSet
from stepfdr.procedures import Procedure

MODEL_KINDS = {
    "independent": "independent",
    "equicorrelated": "equicorrelated",
    "equicorrelated_gaussian": "equicorrelated",
    "negative": "negative",
    "negative_gaussian": "negative",
}
MIN_TRIALS = 1000


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial_index)]))


@dataclass(frozen=True)
class DependenceModel:
    """Gaussian one-sided testing model.

    ``Z_h ~ N(0, 1)`` for the ``m0`` true nulls (the first ``m0`` indices) and
    ``N(mu1, 1)`` for the rest, with p-values ``1 - Phi(Z_h)``.  The
    correlation between any two ``Z`` is 0 (``independent``), ``rho`` in
    [0, 1) (``equicorrelated``) or ``rho`` in [-1/(m-1), 0) (``negative``).
    """

    kind: str
    m: int
    m0: int
    rho: float = 0.0
    mu1: float = 3.0

    def __post_init__(self) -> None:
        kind = MODEL_KINDS.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown dependence model {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.m < 1 or not 0 <= self.m0 <= self.m:
            raise ValueError(f"need m >= 1 and 0 <= m0 <= m, got m={self.m}, m0={self.m0}")
        if self.mu1 < 0:
            raise ValueError("mu1 must be nonnegative")
        rho = float(self.rho)
        if kind == "independent" and rho != 0:
            raise ValueError("independent model takes rho = 0")
        if kind == "equicorrelated" and not 0 <= rho < 1:
            raise ValueError(f"equicorrelated model needs rho in [0, 1), got {rho}")
        if kind == "negative":
            if self.m < 2:
                raise ValueError("negative model needs m >= 2")
            lo = -1.0 / (self.m - 1)
            if not (lo - 1e-12 <= rho < 0):
                raise ValueError(
                    f"negative model needs rho in [{lo:g}, 0) for m={self.m}, got {rho}"
                )

    @classmethod
    def from_dict(cls, d: dict) -> DependenceModel:
        d = dict(d)
        rho = d.get("rho", 0.0)
        if isinstance(rho, str):
            if rho != "min":
                raise ValueError(f"rho must be a number or 'min', got {rho!r}")
            rho = -1.0 / (int(d["m"]) - 1)
        unknown = set(d) - {"kind", "m", "m0", "rho", "mu1"}
        if unknown:
            raise ValueError(f"unknown model fields {sorted(unknown)}")
        return cls(d["kind"], int(d["m"]), int(d.get("m0", d["m"])), float(rho),
                   float(d.get("mu1", 3.0)))

    @property
    def description(self) -> str:
        return f"{self.kind}(m={self.m},m0={self.m0},rho={self.rho:g},mu1={self.mu1:g})"

    @cached_property
    def null_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[: self.m0] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def _shift(self) -> np.ndarray:
        return np.where(self.null_mask, 0.0, self.mu1)

    @cached_property
    def _factor(self) -> np.ndarray:
        cov = np.full((self.m, self.m), self.rho) + (1.0 - self.rho) * np.eye(self.m)
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))

    def sample_z(self, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal(self.m)
        if self.kind == "independent":
            z = xi
        elif self.kind == "equicorrelated":
            w = rng.standard_normal()
            z = math.sqrt(self.rho) * w + math.sqrt(1.0 - self.rho) * xi
        else:
            z = self._factor @ xi
        return z + self._shift

    def sample_pvalues(self, rng: np.random.Generator) -> np.ndarray:
        return special.ndtr(-self.sample_z(rng))


def generate_pvalues(
    model: DependenceModel, trial_seed: int | np.random.SeedSequence | np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One draw of p-values and the true-null mask."""
    if isinstance(trial_seed, np.random.Generator):
        rng = trial_seed
    else:
        rng = np.random.default_rng(trial_seed)
    return model.sample_pvalues(rng), model.null_mask.copy()


@dataclass
class ExperimentReport:
    procedure: str
    model: str
    alpha: float
    n_trials: int
    fdr: float
    fdr_se: float
    fwer: float
    fwer_se: float
    power: float
    power_se: float
    seed: int
    fdp_trials: np.ndarray | None = field(default=None, repr=False, compare=False)
    fwer_trials: np.ndarray | None = field(default=None, repr=False, compare=False)

    CSV_FIELDS = ("procedure", "model", "alpha", "fdr", "fdr_se", "fwer", "fwer_se",
                  "power", "power_se", "seed")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("fdp_trials")
        d.pop("fwer_trials")
        return d


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def _describe(procedure) -> str:
    return getattr(procedure, "spec", None) or getattr(procedure, "__name__", repr(procedure))


def estimate_error_rates(
    procedure: Callable[[np.ndarray, HypothesisSpace], RejectionSet],
    model: DependenceModel,
    n_trials: int = 10_000,
    master_seed: int = 0,
    space: HypothesisSpace | None = None,
    threads: int = 1,
    keep_trials: bool = False,
) -> ExperimentReport:
    """Monte-Carlo FDR, FWER and power of ``procedure`` under ``model``.

    FDP and power are measured with the volume weights of ``space``
    (counting measure by default).  Power is reported as 0 when there are
    no false nulls.
    """
    if n_trials < MIN_TRIALS:
        raise ValueError(f"n_trials must be at least {MIN_TRIALS}, got {n_trials}")
    space = space or HypothesisSpace.standard(model.m)
    if space.m != model.m:
        raise ValueError("hypothesis space and model disagree on m")
    h0 = model.null_mask
    lam = space.lam
    vol1 = lam[~h0].sum()
    fdp_ = np.empty(n_trials)
    fw = np.empty(n_trials)
    pw = np.empty(n_trials)

    def run(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            p = model.sample_pvalues(trial_rng(master_seed, i))
            mask = procedure(p, space).mask
            vol = lam[mask].sum()
            false = mask & h0
            fdp_[i] = lam[false].sum() / vol if vol > 0 else 0.0
            fw[i] = float(false.any())
            pw[i] = lam[mask & ~h0].sum() / vol1 if vol1 > 0 else 0.0

    if threads <= 1:
        run(0, n_trials)
    else:
        bounds = np.linspace(0, n_trials, threads * 4 + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda ab: run(*ab), zip(bounds[:-1], bounds[1:])))

    fdr, fdr_se = _mean_se(fdp_)
    fwer, fwer_se = _mean_se(fw)
    power, power_se = _mean_se(pw)
    return ExperimentReport(
        _describe(procedure), model.description, float(getattr(procedure, "alpha", math.nan)),
        n_trials, fdr, fdr_se, fwer, fwer_se, power, power_se, int(master_seed),
        fdp_ if keep_trials else None, fw if keep_trials else None,
    )


@dataclass
class ExperimentConfig:
    """A procedure x model x alpha grid with a trial count and master seed."""

    procedures: list[str]
    models: list[dict]
    alpha: list[float]
    n_trials: int = 10_000
    seed: int = 0
    csv_path: str | None = None
    json_path: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {"procedures", "models", "alpha", "n_trials", "seed", "csv_path", "json_path"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        alpha = d.get("alpha", [0.05])
        if not isinstance(alpha, list):
            alpha = [alpha]
        cfg = cls(list(d.get("procedures", [])), list(d.get("models", [])),
                  [float(a) for a in alpha], int(d.get("n_trials", 10_000)),
                  int(d.get("seed", 0)), d.get("csv_path"), d.get("json_path"))
        if cfg.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cells(config: ExperimentConfig):
    procs = []
    for i, spec in enumerate(config.procedures):
        try:
            procs.append(Procedure.parse(spec))
        except ValueError as e:
            raise ValueError(f"procedures[{i}] ({spec!r}): {e}") from None
    models = []
    for i, md in enumerate(config.models):
        try:
            models.append(md if isinstance(md, DependenceModel) else DependenceModel.from_dict(md))
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"models[{i}] ({md!r}): {e}") from None
    for i, a in enumerate(config.alpha):
        if not 0 < a < 1:
            raise ValueError(f"alpha[{i}] ({a!r}): must lie in (0, 1)")
    for proc in procs:
        for model in models:
            for a in config.alpha:
                yield proc.with_alpha(a), model


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list[ExperimentReport]:
    """One report per (procedure, model, alpha) cell, in that nesting order."""
    cells = list(_cells(config))
    out = []
    for proc, model in cells:
        try:
            out.append(estimate_error_rates(proc, model, config.n_trials, config.seed,
                                            threads=threads))
        except ValueError as e:
            raise ValueError(
                f"cell procedure={proc.spec!r} model={model.description} alpha={proc.alpha}: {e}"
            ) from None
    return out


def reports_to_csv(reports: Sequence[ExperimentReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ExperimentReport.CSV_FIELDS)
    for r in reports:
        d = r.to_dict()
        w.writerow([repr(v) if isinstance(v, float) else v
                    for v in (d[k] for k in ExperimentReport.CSV_FIELDS)])
    return buf.getvalue()


def reports_to_json(reports: Sequence[ExperimentReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
