import math
import zlib
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepfdr.shape import (
    ContinuousPrior,
    PriorDistribution,
    ShapeFunction,
    beta_from_continuous_prior,
    beta_from_prior,
    bonferroni_crossover,
    discretize_prior,
    parse_shape,
    shape_eval,
    shape_table,
)

CATALOG_SPECS = [
    "linear", "by", "scaled:c=0.3", "sip:gamma=0", "sip:gamma=1.5", "prior:uniform",
    "prior:power:gamma=1", "prior:power:gamma=-1", "prior:dirac:mu=7",
    "prior:exp:lambda=5", "prior:gauss:mu=10:sigma=3",
]


def exact_partial_mean(support, weights, r):
    """Exact rational sum over support points <= r of x * nu({x})."""
    total = sum(Fraction(w) for w in weights)
    return float(sum(Fraction(x) * Fraction(w) for x, w in zip(support, weights) if x <= r) / total)


# ---- closed forms and hand examples -------------------------------------------------

@pytest.mark.parametrize("m", [10, 1000])
def test_uniform_prior_quadratic_form(m):
    beta = beta_from_prior(PriorDistribution.uniform(m))
    r = np.arange(0, m + 1)
    assert np.max(np.abs(beta(r) - r * (r + 1) / (2 * m))) <= 1e-12


@pytest.mark.parametrize("m", [10, 1000])
def test_linear_prior_cubic_form(m):
    beta = beta_from_prior(PriorDistribution.power(1, m))
    r = np.arange(0, m + 1)
    expected = r * (r + 1) * (2 * r + 1) / (3 * m * (m + 1))
    assert np.max(np.abs(beta(r) - expected)) <= 1e-12


def test_uniform_prior_hand_value():
    assert shape_eval(beta_from_prior(PriorDistribution.uniform(10)), 4) == pytest.approx(1.0, abs=1e-15)


def test_by_shape_hand_value():
    beta = ShapeFunction.benjamini_yekutieli(4)
    assert beta.c == pytest.approx(12 / 25, abs=1e-16)
    assert shape_eval(beta, 3) == pytest.approx(1.44, abs=1e-15)


def test_by_equals_inverse_prior():
    m = 50
    k = np.arange(1, m + 1)
    inv = beta_from_prior(PriorDistribution.power(-1, m))
    by = ShapeFunction.benjamini_yekutieli(m)
    assert np.allclose(inv(k), by(k), atol=1e-13, rtol=0)


def test_dirac_prior_is_bonferroni_step():
    beta = beta_from_prior(PriorDistribution.dirac(1.0))
    assert beta(0.99) == 0.0
    assert beta(1.0) == 1.0 and beta(17.0) == 1.0


def test_linear_shape():
    assert shape_eval(ShapeFunction.linear(), 5) == 5


def test_shape_eval_rejects_negative():
    with pytest.raises(ValueError):
        shape_eval(ShapeFunction.linear(), -0.5)


def test_prior_partial_mean_matches_rationals():
    rng = np.random.default_rng(3)
    support = rng.integers(1, 40, size=12)
    weights = rng.integers(1, 9, size=12)
    beta = beta_from_prior(PriorDistribution.from_weights(support, weights))
    for r in [0, 0.5, 3, 10.5, 20, 39, 100]:
        assert beta(r) == pytest.approx(exact_partial_mean(support, weights, r), abs=1e-13)


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorDistribution(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        PriorDistribution(np.array([1.0, 2.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        PriorDistribution(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        PriorDistribution.from_weights([1.0], [0.0])


def test_reciprocal_grid_priors():
    nu = PriorDistribution.reciprocal_grid("linear", 4)
    assert nu.support.tolist() == [0.25, 1 / 3, 0.5, 1.0]
    assert nu.mass.tolist() == pytest.approx([0.4, 0.3, 0.2, 0.1])
    with pytest.raises(ValueError):
        PriorDistribution.reciprocal_grid("cubic", 4)


# ---- discretization -----------------------------------------------------------------

def test_discretize_dirac():
    nu = discretize_prior(ContinuousPrior.dirac(2.5), 5)
    assert nu.mass.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]


def test_discretize_uniform_density():
    m = 20
    nu = discretize_prior(ContinuousPrior.uniform(m), m)
    assert np.allclose(nu.mass, 1 / m, atol=1e-12, rtol=0)


def test_discretize_exponential_tail_goes_to_last_cell():
    lam, m = 50.0, 10
    nu = discretize_prior(ContinuousPrior.exponential(lam), m)
    cdf = lambda x: 1 - math.exp(-x / lam)  # noqa: E731
    expected = [cdf(k) - cdf(k - 1) for k in range(1, m)] + [1 - cdf(m - 1)]
    assert np.allclose(nu.mass, expected, atol=1e-10, rtol=0)
    assert nu.mass[-1] > 0.8


def test_truncated_gaussian_atom_at_one():
    from scipy.stats import norm

    nu = discretize_prior(ContinuousPrior.truncated_gaussian(3.0, 2.0), 8)
    assert nu.mass[0] == pytest.approx(norm.cdf(1.0, 3.0, 2.0), abs=1e-10)
    assert nu.mass[1] == pytest.approx(norm.cdf(2.0, 3.0, 2.0) - norm.cdf(1.0, 3.0, 2.0), abs=1e-10)
    assert nu.mass[-1] == pytest.approx(norm.sf(7.0, 3.0, 2.0), abs=1e-10)


def test_non_normalizable_density():
    cp = ContinuousPrior("bad", (), lambda x: 0.0, 0.0, 5.0)
    with pytest.raises(ValueError, match="not normalizable"):
        discretize_prior(cp, 5)


@pytest.mark.parametrize(
    "cp",
    [ContinuousPrior.uniform(30), ContinuousPrior.power(1.0, 30), ContinuousPrior.power(-1.0, 30),
     ContinuousPrior.exponential(8.0), ContinuousPrior.exponential(8.0, 30),
     ContinuousPrior.truncated_gaussian(12.0, 4.0), ContinuousPrior.dirac(7.3)],
    ids=lambda c: c.description,
)
def test_discretization_dominates(cp):
    m = 30
    k = np.arange(1, m + 1)
    cont = beta_from_continuous_prior(cp)(k)
    disc = beta_from_prior(discretize_prior(cp, m))(k)
    assert np.all(disc >= cont - 1e-9)


def test_continuous_uniform_partial_mean():
    beta = beta_from_continuous_prior(ContinuousPrior.uniform(10))
    for r in [0.0, 1.5, 4.0, 10.0, 12.0]:
        x = min(r, 10.0)
        assert beta(r) == pytest.approx(x * x / 20, abs=1e-10)


# ---- crossover ----------------------------------------------------------------------

def test_crossover_examples():
    assert bonferroni_crossover(ShapeFunction.linear(), 10) == 1
    assert bonferroni_crossover(beta_from_prior(PriorDistribution.uniform(200)), 200) == 20
    assert bonferroni_crossover(ShapeFunction.benjamini_yekutieli(100), 100) == 6


def test_crossover_integer_scan_oracle():
    m = 200
    scan = next(r for r in range(1, m + 1) if r * (r + 1) >= 2 * m)
    assert bonferroni_crossover(beta_from_prior(PriorDistribution.uniform(m)), m) == scan


def test_crossover_none():
    assert bonferroni_crossover(ShapeFunction.scaled_linear(0.01), 50) is None


# ---- properties ---------------------------------------------------------------------

@pytest.mark.parametrize("spec", CATALOG_SPECS)
def test_catalog_monotone_and_zero_at_origin(spec):
    m = 40
    beta = parse_shape(spec, m)
    rng = np.random.default_rng(zlib.crc32(spec.encode()))
    pairs = np.sort(rng.uniform(0, 1.5 * m, size=(1000, 2)), axis=1)
    assert np.all(beta(pairs[:, 0]) <= beta(pairs[:, 1]))
    assert beta(0.0) == 0.0


@pytest.mark.parametrize("spec", [s for s in CATALOG_SPECS if s.startswith("prior")])
def test_prior_shapes_below_identity(spec):
    beta = parse_shape(spec, 40)
    r = np.linspace(0, 60, 1201)
    assert np.all(beta(r) <= r + 1e-12)


def test_dirac_equality_at_support_point():
    beta = beta_from_prior(PriorDistribution.dirac(9.0))
    assert beta(9.0) == 9.0


@pytest.mark.parametrize("gamma", [-0.5, 0.0, 1.0, 2.5])
def test_scale_invariance(gamma):
    m = 300.0
    beta = ShapeFunction.scale_invariant_power(gamma, m)
    rng = np.random.default_rng(int(10 * gamma) + 100)
    r = rng.uniform(0, m, size=100)
    tilde = (gamma + 1) / (gamma + 2) * (r / m) ** (gamma + 2)
    assert np.allclose(beta(r), m * tilde, rtol=1e-13, atol=0)


@given(st.lists(st.integers(1, 9), min_size=1, max_size=15), st.floats(0, 20))
def test_prior_beta_bounded_by_r(weights, r):
    support = np.arange(1, len(weights) + 1)
    beta = beta_from_prior(PriorDistribution.from_weights(support, weights))
    assert 0.0 <= beta(r) <= r + 1e-12


# ---- tables and parsing --------------------------------------------------------------

def test_table_holm_reference():
    t = shape_table([ShapeFunction.linear()], 1000, holm=True)
    assert t.columns["holm"][0] == pytest.approx(0.001, abs=1e-18)
    assert t.columns["holm"][-1] == 1.0
    assert t.columns["linear"][0] == pytest.approx(0.001)


def test_table_dirac_column():
    m = 1000
    t = shape_table([parse_shape("prior:dirac:mu=200", m)], m)
    col = t.columns["prior:dirac:mu=200"]
    assert np.all(col[:199] == 0.0)
    assert col[199] == pytest.approx(0.2, abs=1e-15)
    assert np.all(col[199:] == col[199])


def test_table_csv_shape():
    t = shape_table([parse_shape(s, 50) for s in ("linear", "by", "prior:uniform")], 50)
    lines = t.to_csv().splitlines()
    assert lines[0] == "r,linear,by,prior:uniform"
    assert len(lines) == 51
    assert all(len(line.split(",")) == 4 for line in lines)


def test_table_duplicate_columns():
    with pytest.raises(ValueError):
        shape_table([ShapeFunction.linear(), ShapeFunction.linear()], 5)


@pytest.mark.parametrize("spec", ["nope", "prior:zeta", "scaled:c", "sip", "prior:power:gamma=x"])
def test_parse_shape_errors(spec):
    with pytest.raises(ValueError):
        parse_shape(spec, 10)


def test_parse_shape_continuous_mode():
    s = parse_shape("prior:power:gamma=0", 10, continuous=True)
    assert s.kind == "continuous_prior"
    assert s(10.0) == pytest.approx(5.5, abs=1e-9)
    assert parse_shape("prior:power:gamma=0", 10)(10.0) == pytest.approx(5.5, abs=1e-12)
