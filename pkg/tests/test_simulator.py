import itertools
import math

import numpy as np
import pytest
from scipy import stats

from vendorcount.core import ValidationError
from vendorcount.overdispersed import MarketModel
from vendorcount.simulator import (
    IntensityModel,
    ResponseModel,
    RngStream,
    draw_mnh,
    draw_negative_binomial,
    nb_params,
    simulate_model1,
    simulate_model2,
    simulate_model3,
)

FOUR = IntensityModel(("a", "b", "c", "d"), (500.0, 500.0, 500.0, 500.0), (250.0, 250.0, 250.0, 250.0))


def mnh_pmf(counts, targets):
    """Exact trials-convention pmf from binomial coefficients."""
    N, R = sum(counts), sum(targets)
    num = math.prod(math.comb(n - 1, r - 1) for n, r in zip(counts, targets))
    return num / math.comb(N - 1, R - 1)


def test_nb_parameter_mapping_matches_pmf_oracle():
    r, q = nb_params(3.0, 1.5)
    assert (r, q) == pytest.approx((2.0, 1 / 3))
    gen = np.random.default_rng(1)
    draws = draw_negative_binomial(3.0, 1.5, gen, size=400_000)
    freq = np.mean(draws == 3)
    assert freq == pytest.approx(8 / 27, abs=4 * math.sqrt(8 / 27 * 19 / 27 / draws.size))
    # whole distribution: failures n - r follow scipy's nbinom(r, 1 - q)
    support = np.arange(2, 14)
    observed = np.array([np.sum(draws == k) for k in support] + [np.sum(draws >= 14)])
    expected = stats.nbinom.pmf(support - 2, 2, 2 / 3)
    expected = np.append(expected, 1 - expected.sum()) * draws.size
    assert stats.chisquare(observed, expected).pvalue > 1e-3


@pytest.mark.parametrize("mean,variance", [(10.0, 20.0), (7.3, 4.1), (120.0, 480.0), (2.5, 0.4)])
def test_nb_moments_are_exact(mean, variance):
    draws = draw_negative_binomial(mean, variance, np.random.default_rng(3), size=1_000_000)
    n = draws.size
    assert draws.mean() == pytest.approx(mean, abs=3 * math.sqrt(variance / n) + 1e-9)
    # SE of the sample variance ~ variance * sqrt(2 / n) for moderate kurtosis; allow 4x
    assert draws.var() == pytest.approx(variance, abs=4 * variance * math.sqrt(8 / n) + 0.3)


def test_nb_zero_variance_is_deterministic():
    draws = draw_negative_binomial(5.0, 0.0, np.random.default_rng(0), size=100)
    assert np.all(draws == 5)


@pytest.mark.parametrize("method", ["dirichlet", "urn"])
def test_mnh_matches_enumeration(method):
    targets, N = (2, 1, 3), 12
    gen = np.random.default_rng(7)
    reps = 40_000
    draws = [tuple(draw_mnh(N, targets, gen, method)) for _ in range(reps)]
    support = [c for c in itertools.product(*(range(t, N + 1) for t in targets)) if sum(c) == N]
    probs = np.array([mnh_pmf(c, targets) for c in support])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    counts = {c: 0 for c in support}
    for d in draws:
        counts[d] += 1
    observed = np.array([counts[c] for c in support])
    keep = probs * reps >= 5
    exp = probs[keep] * reps
    obs = observed[keep]
    if reps - exp.sum() >= 5:
        exp = np.append(exp, reps - exp.sum())
        obs = np.append(obs, reps - obs.sum())
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_mnh_rejects_too_many_targets():
    with pytest.raises(ValidationError):
        draw_mnh(5, [3, 3], np.random.default_rng(0))


def test_substreams_are_order_independent():
    rng = RngStream(42)
    forward = [simulate_model1(FOUR, 0.3, 1000, rng, r) for r in range(5)]
    backward = [simulate_model1(FOUR, 0.3, 1000, rng, r) for r in reversed(range(5))][::-1]
    for a, b in zip(forward, backward):
        assert np.array_equal(a.n0, b.n0) and np.array_equal(a.n1, b.n1)
    again = RngStream(42).generator(3, 1, 0).random(4)
    assert np.array_equal(again, RngStream(42).generator(3, 1, 0).random(4))
    assert not np.array_equal(again, RngStream(43).generator(3, 1, 0).random(4))


def test_census_and_empty_process():
    one = IntensityModel(("x",), (0.0,), (1.0,))
    rng = RngStream(0)
    for r in range(20):
        sim = simulate_model1(one, 1.0, 50, rng, r)
        assert sim.n1.tolist() == [50] and sim.n0.tolist() == [0]


def test_model1_is_model2_without_deviations():
    rng = RngStream(9)
    for r in range(10):
        a = simulate_model1(FOUR, 0.3, 1000, rng, r)
        b = simulate_model2(FOUR, ResponseModel(0.3), 1000, rng, r)
        assert np.array_equal(a.n0, b.n0) and np.array_equal(a.n1, b.n1)


@pytest.fixture(scope="module")
def model1_totals():
    rng = RngStream(2024)
    return np.array([simulate_model1(FOUR, 0.3, 1000, rng, r).n0.sum() for r in range(100_000)])


def test_model1_uncredentialed_moments(model1_totals):
    totals = model1_totals
    mean = 0.3 * 2000
    assert totals.mean() == pytest.approx(mean, abs=3 * math.sqrt(mean / totals.size))
    # equidispersion: variance of a Poisson count equals its mean
    assert totals.var(ddof=1) == pytest.approx(mean, abs=3 * mean * math.sqrt(2 / totals.size))


def test_thinning_matches_direct_poisson(model1_totals):
    # route 1: full Poisson process then binomial retention; route 2: the simulator
    gen = np.random.default_rng(5)
    full = gen.poisson(2000.0, size=100_000)
    thinned = gen.binomial(full, 0.3)
    direct = model1_totals
    se = math.sqrt(600 / 100_000)
    assert abs(thinned.mean() - direct.mean()) < 4 * math.sqrt(2) * se
    assert thinned.var() / direct.var() == pytest.approx(1.0, abs=0.03)


def test_response_clamping_is_reported():
    resp = ResponseModel(0.5, epsilon0={"a": 0.9})
    sim = simulate_model2(FOUR, resp, 1000, RngStream(0), 0)
    assert "response_clamped" in sim.flags


def test_model3_dispersion_grows_with_market_size():
    intensity = IntensityModel(("a",), (1000.0,), (1.0,))
    rng = RngStream(3)
    ratios = []
    for vpm in (1.25, 2.5, 5.0):
        markets = MarketModel({"a": 1000.0 / vpm}, {"a": 100.0})
        n0 = np.array([simulate_model3(intensity, 0.3, 1000, markets, rng, r).n0[0] for r in range(4000)])
        ratios.append(n0.var() / n0.mean())
    assert ratios[0] < ratios[1] < ratios[2]


def test_model3_input_checks():
    rng = RngStream(0)
    bad_q = MarketModel({c: 100.0 for c in FOUR.cells}, {"a": 10.0, "b": 20.0, "c": 10.0, "d": 10.0})
    with pytest.raises(ValidationError, match="proportional"):
        simulate_model3(FOUR, 0.3, 1000, bad_q, rng)
    too_many = MarketModel({c: 600.0 for c in FOUR.cells}, {c: 10.0 for c in FOUR.cells})
    with pytest.raises(ValidationError, match="below market"):
        simulate_model3(FOUR, 0.3, 1000, too_many, rng)
    crowded = MarketModel({c: 100.0 for c in FOUR.cells}, {c: 300.0 for c in FOUR.cells})
    with pytest.raises(ValidationError, match="exceed"):
        simulate_model3(FOUR, 0.3, 1000, crowded, rng)


def test_intensity_and_response_validation():
    with pytest.raises(ValidationError):
        IntensityModel(("a",), (-1.0,), (1.0,))
    with pytest.raises(ValidationError):
        IntensityModel(("a", "b"), (1.0,), (1.0, 1.0))
    with pytest.raises(ValidationError):
        ResponseModel(0.0)
    with pytest.raises(ValidationError):
        RngStream(-1)
