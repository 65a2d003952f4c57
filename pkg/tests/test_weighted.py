import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vendorcount import nyc
from vendorcount.core import EstimationError, Partition, SurveyRecord, ValidationError
from vendorcount.estimators import RatioInputs, ratio_lambda0, subregion_lambda0, subtotal_tau, total_tau
from vendorcount.weighted import (
    WeightedCounts,
    WeightModel,
    bias_factor,
    weighted_counts,
    weighted_ratio,
    weighted_subregion,
    weighted_subtotal,
)

PART = Partition(("a", "b", "c"))


def unit_counts(n0, n1):
    return WeightedCounts.from_counts(PART, n0, n1, [1.0] * 4, [1.0] * 4)


def test_identity_weights_reproduce_integer_counts():
    recs = [SurveyRecord(str(i), "food", i % 3 == 0, False, "abc"[i % 3]) for i in range(30)]
    wc = weighted_counts(recs, WeightModel.identity(), PART, "food")
    assert wc.n0w.tolist() == [0.0, 10.0, 10.0, 0.0]
    assert wc.n1w.tolist() == [10.0, 0.0, 0.0, 0.0]
    assert not wc.sigma.any()


def test_two_respondents_weight_two():
    recs = [SurveyRecord("1", "food", False, False, "a"), SurveyRecord("2", "food", False, False, "a")]
    wc = weighted_counts(recs, WeightModel.deterministic({("a", 0): 2.0}), PART, "food")
    assert wc.n0w[0] == 4.0 and wc.mu2_0[0] == 8.0 and not wc.sigma.any()


def test_builtin_enforcement_weights_give_reported_counts():
    moments = nyc.scenario_weights("enforcement-inverse", "food")
    wc = weighted_counts(nyc.records(), WeightModel(moments), nyc.partition(), "food")
    totals = wc.region(wc.mask(None))
    assert totals["n0w"] == pytest.approx(25.7, rel=1e-12)
    assert totals["n1w"] == pytest.approx(5.24, rel=1e-12)


def test_weighted_ratio_enforcement_scenario():
    wc = WeightedCounts.single_region(25.7, 5.24, n0=1051, n1=349)
    est = weighted_ratio(5100, wc)
    assert est.value == pytest.approx(25013.36, abs=0.01)
    assert est.value + 5100 == pytest.approx(30113.36, abs=0.01)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(0, 60), min_size=4, max_size=4),
    st.lists(st.integers(0, 60), min_size=4, max_size=4),
    st.integers(300, 6000),
)
def test_unit_weights_reduce_to_unweighted(n0, n1, N1):
    if sum(n1) == 0:
        return
    wc = unit_counts(n0, n1)
    r = weighted_ratio(N1, wc)
    u = ratio_lambda0(RatioInputs(N1, sum(n0), sum(n1)))
    assert r.value == pytest.approx(u.value, rel=1e-12)
    if u.se is not None:
        assert r.se == pytest.approx(u.se, rel=1e-12)
    sub = weighted_subregion(N1, wc, ["a", "b"])
    usub = subregion_lambda0(N1, n0[0] + n0[1], sum(n1))
    assert sub.value == pytest.approx(usub.value, rel=1e-12)
    if usub.se is not None:
        assert sub.se == pytest.approx(usub.se, rel=1e-12)
    tot = weighted_subtotal(N1, wc, ["a", "b"])
    utot = subtotal_tau(N1, n0[0] + n0[1], n1[0] + n1[1], n1[2] + n1[3])
    assert tot.value == pytest.approx(utot.value, rel=1e-12)
    if utot.se is not None:
        assert tot.se == pytest.approx(utot.se, rel=1e-12)


def test_printed_subtotal_form_lacks_the_reduction():
    wc = unit_counts([5, 0, 0, 0], [4, 16, 0, 0])
    corrected = weighted_subtotal(100, wc, ["a"])
    printed = weighted_subtotal(100, wc, ["a"], formula="printed")
    assert corrected.se == pytest.approx(subtotal_tau(100, 5, 4, 16).se, rel=1e-12)
    assert printed.value == corrected.value
    assert not math.isclose(printed.se, corrected.se, rel_tol=1e-3)


def test_scale_cancellation():
    n0, n1 = [7, 3, 9, 1], [4, 5, 2, 1]
    w0, w1 = [1.5, 0.7, 2.0, 1.0], [0.9, 1.1, 1.3, 1.0]
    base = WeightedCounts.from_counts(PART, n0, n1, w0, w1)
    scaled = WeightedCounts.from_counts(PART, n0, n1, [3 * w for w in w0], [3 * w for w in w1])
    assert weighted_ratio(500, scaled).value == pytest.approx(weighted_ratio(500, base).value, rel=1e-14)


def test_bias_factor_identity_with_full_region_subtotal():
    wc = WeightedCounts.from_counts(PART, [7, 3, 9, 1], [4, 5, 2, 1], [1.5, 0.7, 2.0, 1.0], [0.9, 1.1, 1.3, 1.0])
    r = wc.region(wc.mask(None))
    factor = bias_factor(r["n0w"], r["n1w"], 20, 12)
    tau = total_tau(RatioInputs(500, 20, 12)).value
    full = weighted_subtotal(500, wc, ["a", "b", "c"])  # UNKNOWN cell holds weight too
    expected = 500 * (r["n0w"] + r["n1w"]) / r["n1w"]
    assert factor * tau == pytest.approx(expected, rel=1e-12)
    # subtotal over every located cell leaves the UNKNOWN credentialed weight in the complement
    assert full.value == pytest.approx(500 * (r["n0w"] - 1.0 + r["n1w"] - 1.0) / r["n1w"], rel=1e-12)


def test_bias_factor_examples():
    assert bias_factor(25.7, 5.24, 1051, 349) == pytest.approx(1.4719, abs=1e-4)
    assert bias_factor(1051, 349, 1051, 349) == 1.0
    n0w, n1w = nyc.WEIGHTING_SCENARIOS["enforcement-inverse"][nyc.MERCH]
    assert bias_factor(n0w, n1w, 197, 308) == pytest.approx(1.09, abs=1e-4)
    with pytest.raises(EstimationError):
        bias_factor(1.0, 0.0, 1, 0)


def test_degenerate_and_undefined():
    wc = WeightedCounts.single_region(0.0, 10.0, n1=10)
    assert weighted_ratio(100, wc).degenerate
    with pytest.raises(EstimationError):
        weighted_ratio(100, WeightedCounts.single_region(5.0, 0.0, n0=5))


def test_weight_validation():
    with pytest.raises(ValidationError):
        WeightModel({("a", 0): (0.0, 0.0)})
    with pytest.raises(ValidationError):
        WeightModel({("a", 0): (2.0, 3.0)})  # second moment below mean squared
    with pytest.raises(ValidationError):
        WeightModel(covariance={("a", "b", 0, 0): 1.0, ("b", "a", 0, 0): 2.0})
    rec = SurveyRecord("r9", "food", False, False, "a")
    with pytest.raises(ValidationError, match="r9"):
        WeightModel().moments_for(rec)


def test_negative_radicand_is_flagged():
    wc = WeightedCounts.single_region(10.0, 10.0, 10.0, 10.0, sigma={(0, 1): 200.0})
    est = weighted_ratio(100, wc)
    assert est.se == 0.0 and "negative_radicand" in est.flags


def test_pair_accumulation_is_order_independent():
    recs = [SurveyRecord(str(i), "food", i % 2 == 0, False, "abc"[i % 3]) for i in range(25)]
    model = WeightModel(default=(1.0, 1.5), covariance={("a", "b", 0, 1): 0.1, ("a", "a", 1, 1): 0.2})
    one = weighted_counts(recs, model, PART, "food")
    two = weighted_counts(list(reversed(recs)), model, PART, "food")
    assert np.array_equal(one.sigma, two.sigma)
    assert np.allclose(one.sigma, one.sigma.transpose(1, 0, 3, 2))


def _monte_carlo_weighted(reps, seed):
    """Model 2 draws with cell- and status-specific response, weighted by 1/p."""
    gen = np.random.default_rng(seed)
    lam0 = np.array([800.0, 600.0, 400.0, 300.0])
    lam1 = np.array([200.0, 300.0, 250.0, 250.0])
    N1 = 1000
    p0 = np.array([0.3, 0.2, 0.4, 0.25])
    p1 = np.array([0.35, 0.25, 0.3, 0.2])
    q = lam1 / lam1.sum()
    part = Partition(("a", "b", "c", "d"))
    out = {"ratio": [], "subregion": [], "subtotal": []}
    for _ in range(reps):
        n0 = gen.poisson(p0 * lam0)
        probs = np.append(p1 * q, 1 - (p1 * q).sum())
        n1 = gen.multinomial(N1, probs)[:-1]
        wc = WeightedCounts.from_counts(part, list(n0) + [0], list(n1) + [0],
                                        list(1 / p0) + [1.0], list(1 / p1) + [1.0])
        out["ratio"].append(weighted_ratio(N1, wc))
        out["subregion"].append(weighted_subregion(N1, wc, ["a", "b"]))
        out["subtotal"].append(weighted_subtotal(N1, wc, ["a", "b"]))
    return out


@pytest.mark.slow
def test_weighted_se_matches_monte_carlo():
    runs = _monte_carlo_weighted(10_000, 11)
    for name, ests in runs.items():
        values = np.array([e.value for e in ests])
        ses = np.array([e.se for e in ests])
        sd = values.std(ddof=1)
        assert abs(ses.mean() / sd - 1) < 0.07, name
