import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bikesim.demand import (
    RENT,
    RETURN,
    DemandModel,
    RateFunction,
    Scenario,
    StationDemand,
    TimeOutOfHorizon,
    UnknownStation,
    balance_forecast,
    cumulative_forecast,
    demand_from_dict,
    demand_to_dict,
    sample_scenario,
)
from bikesim.instances import bundled

H = 3600


def riemann(rate, t, step=0.5):
    """Midpoint sum of the rate (per hour) over ``[0, t]``."""
    x = np.arange(0, t, step) + step / 2
    return float(np.sum(rate.value(x)) * step / 3600.0)


def test_constant_rate_integral():
    assert cumulative_forecast(RateFunction.constant(4.0, 2 * H), 2 * H) == pytest.approx(8.0, abs=1e-12)


def test_zero_rate_integral():
    rf = RateFunction.constant(0.0, 10 * H)
    assert all(cumulative_forecast(rf, t) == 0.0 for t in (0, 1, 5000, 10 * H))


def test_piecewise_rate_integral():
    rf = RateFunction(np.array([0, H, 2 * H]), np.array([2.0, 6.0]))
    assert cumulative_forecast(rf, 1.5 * H) == pytest.approx(5.0, abs=1e-12)
    assert riemann(rf, 1.5 * H) == pytest.approx(5.0, abs=1e-9)


def test_time_outside_horizon():
    rf = RateFunction.constant(1.0, H)
    with pytest.raises(TimeOutOfHorizon):
        cumulative_forecast(rf, H + 1)
    with pytest.raises(TimeOutOfHorizon):
        cumulative_forecast(rf, -1)


@pytest.mark.parametrize(
    "bp, rates",
    [([0, 10], [1.0, 2.0]), ([0, 0, 10], [1.0, 1.0]), ([5, 10], [1.0]), ([0, 10], [-1.0])],
)
def test_invalid_rate_functions(bp, rates):
    with pytest.raises(ValueError):
        RateFunction(np.array(bp), np.array(rates))


rate_pieces = st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(rate_pieces, st.integers(60, 3600), st.data())
def test_cumulative_monotone_and_additive(rates, width, data):
    rf = RateFunction.from_pieces(rates, width)
    t1 = data.draw(st.integers(0, rf.horizon))
    t2 = data.draw(st.integers(t1, rf.horizon))
    assert cumulative_forecast(rf, t1) <= cumulative_forecast(rf, t2) + 1e-12
    assert rf.integral(0, t1) + rf.integral(t1, t2) == pytest.approx(rf.integral(0, t2), abs=1e-12)


def station(ret, rent):
    return DemandModel({1: StationDemand(returns=ret, rentals=rent)})


def test_balance_symmetric_rates_is_zero():
    rf = RateFunction(np.array([0, 900, 4000, 7200]), np.array([3.0, 0.0, 7.5]))
    fc = balance_forecast(station(rf, rf), 1)
    assert np.all(fc.balance == 0.0)
    assert np.all(fc.slopes == 0.0)


def test_balance_returns_only():
    fc = balance_forecast(station(RateFunction.constant(3.0, 2 * H), RateFunction.constant(0.0, 2 * H)), 1)
    assert fc.value(2 * H) == pytest.approx(6.0, abs=1e-12)


def test_balance_matches_grid_oracle():
    ret = RateFunction(np.array([0, 1000, 2500, 6000, 7200]), np.array([4.0, 0.0, 9.0, 1.5]))
    rent = RateFunction(np.array([0, 1800, 3000, 7200]), np.array([2.0, 12.0, 0.5]))
    fc = balance_forecast(station(ret, rent), 1)
    assert set(fc.times) == set(np.union1d(ret.breakpoints, rent.breakpoints))
    grid = np.linspace(0, 7200, 1000)
    oracle = np.array([riemann(ret, t, 0.25) - riemann(rent, t, 0.25) for t in grid])
    got = np.array([fc.value(t) for t in grid])
    # the midpoint sum is exact except on the step that straddles a breakpoint
    assert np.max(np.abs(got - oracle)) < 0.25 * 12 / 3600 + 1e-9


def test_unknown_station():
    model = station(RateFunction.constant(1.0, H), RateFunction.constant(1.0, H))
    with pytest.raises(UnknownStation):
        balance_forecast(model, 2)


# --- sampling -----------------------------------------------------------------


def test_zero_rates_give_empty_scenario():
    model = station(RateFunction.constant(0.0, H), RateFunction.constant(0.0, H))
    sc = sample_scenario(model, 123)
    assert sc.count() == 0
    assert sc.events().shape == (0, 3)


def test_poisson_mean_count():
    model = station(RateFunction.constant(0.0, 10 * H), RateFunction.constant(2.0, 10 * H))
    counts = np.array([len(sample_scenario(model, s).rentals[1]) for s in range(10_000)])
    sigma = np.sqrt(20.0)
    assert abs(counts.mean() - 20.0) <= 3 * sigma / np.sqrt(10_000)


def test_same_seed_is_byte_identical():
    _, demand, _ = bundled("synthetic10")
    a, b = sample_scenario(demand, 99), sample_scenario(demand, 99)
    assert a.to_csv() == b.to_csv()
    assert a.events().tobytes() == b.events().tobytes()
    assert sample_scenario(demand, 100).to_csv() != a.to_csv()


def chi2_poisson(counts, mean):
    """Chi-square statistic and p-value against Poisson(mean), merging sparse tails."""
    n = len(counts)
    top = int(counts.max()) + 1
    ks = np.arange(top + 1)
    expected = stats.poisson.pmf(ks, mean) * n
    expected[-1] = stats.poisson.sf(top - 1, mean) * n
    observed = np.bincount(counts, minlength=top + 1).astype(float)
    bins_o, bins_e, acc_o, acc_e = [], [], 0.0, 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    bins_o[-1] += acc_o
    bins_e[-1] += acc_e
    return stats.chisquare(bins_o, bins_e)


PIECES = np.array([0, 900, 2700, 3600, 7200])
RATES = np.array([6.0, 1.0, 20.0, 3.5])


def pooled_samples(n=10_000, kind=RENT):
    rf = RateFunction(PIECES, RATES)
    zero = RateFunction.constant(0.0, 7200)
    model = station(zero, rf) if kind == RENT else station(rf, zero)
    counts = np.zeros((n, len(RATES)), dtype=np.int64)
    times = [[] for _ in RATES]
    for s in range(n):
        sc = sample_scenario(model, s)
        ts = (sc.rentals if kind == RENT else sc.returns)[1]
        k = np.searchsorted(PIECES, ts, side="right") - 1
        counts[s] = np.bincount(k, minlength=len(RATES))
        for p in range(len(RATES)):
            times[p].append(ts[k == p])
    return counts, [np.concatenate(t) for t in times]


@pytest.fixture(scope="module")
def samples():
    return pooled_samples()


@pytest.mark.parametrize("piece", range(len(RATES)))
def test_piece_counts_are_poisson(samples, piece):
    counts, _ = samples
    mean = RATES[piece] * (PIECES[piece + 1] - PIECES[piece]) / 3600.0
    assert chi2_poisson(counts[:, piece], mean).pvalue > 0.001


@pytest.mark.parametrize("piece", range(len(RATES)))
def test_times_uniform_within_piece(samples, piece):
    _, times = samples
    a, w = PIECES[piece], PIECES[piece + 1] - PIECES[piece]
    # sampled times are floored to whole seconds; a uniform jitter undoes that
    jitter = np.random.default_rng(piece).random(len(times[piece]))
    x = (times[piece] - a + jitter) / w
    assert stats.kstest(x, "uniform").pvalue > 0.001


def test_substreams_independent_of_other_stations():
    rng = np.random.default_rng(3)
    one = {1: StationDemand(RateFunction.constant(5.0, 7200), RateFunction.constant(7.0, 7200))}
    many = dict(one)
    for sid in (2, 3, 7):
        many[sid] = StationDemand(
            RateFunction.from_pieces(rng.uniform(0, 30, 8), 900), RateFunction.from_pieces(rng.uniform(0, 30, 8), 900)
        )
    for seed in (0, 1, 2**40):
        a = sample_scenario(DemandModel(one), seed)
        b = sample_scenario(DemandModel(many), seed)
        assert np.array_equal(a.rentals[1], b.rentals[1])
        assert np.array_equal(a.returns[1], b.returns[1])


def test_rentals_and_returns_use_different_streams():
    rf = RateFunction.constant(10.0, 7200)
    sc = sample_scenario(station(rf, rf), 5)
    assert not np.array_equal(sc.rentals[1], sc.returns[1])


def test_negative_seed_rejected():
    rf = RateFunction.constant(1.0, H)
    with pytest.raises(ValueError):
        sample_scenario(station(rf, rf), -1)


def test_scenario_times_sorted_and_inside_horizon():
    _, demand, _ = bundled("synthetic10")
    sc = sample_scenario(demand, 7)
    for by_station in (sc.rentals, sc.returns):
        for ts in by_station.values():
            assert np.all(np.diff(ts) >= 0)
            assert np.all((ts >= 0) & (ts < sc.horizon))
    ev = sc.events()
    keys = list(zip(ev[:, 0], ev[:, 1], ev[:, 2]))
    assert keys == sorted(keys)


def test_event_ties_rental_before_return():
    sc = Scenario({1: np.array([50]), 2: np.array([50])}, {1: np.array([50]), 2: np.array([10])}, 100)
    ev = sc.events().tolist()
    assert ev == [[10, 2, RETURN], [50, 1, RENT], [50, 1, RETURN], [50, 2, RENT]]


def test_csv_round_trip():
    _, demand, _ = bundled("synthetic10")
    sc = sample_scenario(demand, 11)
    text = sc.to_csv()
    assert text.splitlines()[0] == "time_s,station_id,kind"
    back = Scenario.from_csv(text, sc.horizon, stations=sorted(demand.stations), seed=11)
    assert np.array_equal(back.events(), sc.events())
    assert back.to_csv() == text


def test_csv_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Scenario.from_csv("time_s,station_id,kind\n5,1,BORROW\n", 100)


def test_demand_document_round_trip():
    doc = {
        "tags": {"day_type": "working", "month": "May", "weather": "rain"},
        "piece_width_s": 900,
        "horizon_s": 3600,
        "stations": [{"id": 1, "return_rates": [1, 2, 3, 4], "rental_rates": [0, 0, 5, 0]}],
    }
    model = demand_from_dict(doc)
    assert model.horizon == 3600
    assert model.tags["weather"] == "rain"
    assert cumulative_forecast(model[1].rentals, 3600) == pytest.approx(5 * 0.25)
    assert demand_to_dict(model, 900) == {**doc, "stations": [
        {"id": 1, "return_rates": [1.0, 2.0, 3.0, 4.0], "rental_rates": [0.0, 0.0, 5.0, 0.0]}]}
