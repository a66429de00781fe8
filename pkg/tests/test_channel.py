import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auvnetsim import channel as ch
from auvnetsim.channel import (
    AnalyticDuctModel,
    GridTlModel,
    LinkBudget,
    Reception,
    SoundSpeedProfile,
    decide_reception,
    directivity_gain_db,
    propagation_delay_s,
    thorp_alpha_db_per_km,
)


# --- sound speed profile ------------------------------------------------------


def test_profile_fixture_minimum(fixtures_dir):
    ssp = SoundSpeedProfile.from_csv(fixtures_dir / "ssp_afternoon.csv")
    assert ssp.sample(13.74) == 1502.0
    assert ssp.min_speed_depth() == 13.74
    # unique global minimum
    others = ssp.speeds_mps[ssp.depths_m != 13.74]
    assert np.all(others > 1502.0)


def test_profile_interpolates_and_clamps():
    ssp = SoundSpeedProfile([0, 10, 20], [1500.0, 1510.0, 1490.0])
    assert ssp.sample(5) == 1505.0
    assert ssp.sample(-3) == 1500.0  # clamped above
    assert ssp.sample(99) == 1490.0  # clamped below
    assert ssp.sample(10) == 1510.0


def test_profile_mean_speed():
    ssp = SoundSpeedProfile([0, 10, 20], [1500.0, 1510.0, 1490.0])
    # piecewise-linear depth average, computed by hand
    assert ssp.mean_speed(0, 10) == pytest.approx(1505.0)
    assert ssp.mean_speed(10, 0) == pytest.approx(1505.0)
    assert ssp.mean_speed(5, 15) == pytest.approx((1507.5 + 1505.0) / 2)
    assert ssp.mean_speed(7, 7) == 1507.0


def test_profile_validation(caplog):
    with pytest.raises(ValueError):
        SoundSpeedProfile([0], [1500.0])
    with pytest.raises(ValueError):
        SoundSpeedProfile([0, 0, 10], [1500, 1500, 1500])
    with pytest.raises(ValueError):
        SoundSpeedProfile([0, 10], [1250.0, 1500.0])  # beyond hard limits
    with pytest.raises(ValueError):
        SoundSpeedProfile([0, 10], [1500.0, 1710.0])
    with caplog.at_level("WARNING"):
        SoundSpeedProfile([0, 10], [1390.0, 1500.0])  # odd but loadable
    assert any("sound speed" in r.message for r in caplog.records)


def test_profile_csv_header_check(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("depth,speed\n0,1500\n10,1501\n")
    with pytest.raises(ValueError):
        SoundSpeedProfile.from_csv(bad)


# --- absorption and transmission loss ----------------------------------------


def test_thorp_frozen_values():
    assert thorp_alpha_db_per_km(26.0) == pytest.approx(6.5266, abs=1e-3)
    assert thorp_alpha_db_per_km(10.0) == pytest.approx(1.1870, abs=1e-3)
    # monotone over the band of interest
    assert thorp_alpha_db_per_km(34.0) > thorp_alpha_db_per_km(18.0)


def test_analytic_tl_frozen_value():
    model = AnalyticDuctModel(duct_depth_m=13.74, duct_gain_db=0.0)
    assert model.tl_db(5.0, 5.0, 1000.0) == pytest.approx(51.53, abs=0.01)


def test_analytic_tl_duct_gain():
    z = 13.74
    base = AnalyticDuctModel(duct_depth_m=z, duct_gain_db=0.0)
    duct = AnalyticDuctModel(duct_depth_m=z, duct_gain_db=25.0)
    # both endpoints on the axis get the full bump
    assert duct.tl_db(z, z, 1000.0) == pytest.approx(base.tl_db(z, z, 1000.0) - 25.0)
    # far off axis the bump vanishes
    assert duct.tl_db(z + 60, z + 60, 1000.0) == pytest.approx(base.tl_db(z, z, 1000.0), abs=1e-6)
    # symmetric in the two depths
    assert duct.tl_db(5.0, 20.0, 800.0) == pytest.approx(duct.tl_db(20.0, 5.0, 800.0))


def test_analytic_tl_floor_and_domain():
    model = AnalyticDuctModel(duct_depth_m=10.0, duct_gain_db=25.0)
    assert model.tl_db(10.0, 10.0, 2.0) == 0.0  # floored, never negative
    with pytest.raises(ValueError):
        model.tl_db(10.0, 10.0, 0.0)


@given(st.floats(1, 5000), st.floats(0, 100), st.floats(0, 100))
@settings(max_examples=200)
def test_analytic_tl_nonnegative_and_increasing_far_field(r, tz, rz):
    model = AnalyticDuctModel(duct_depth_m=13.74)
    tl = model.tl_db(tz, rz, r)
    assert tl >= 0.0
    assert model.tl_db(tz, rz, r + 500.0) >= tl - 25.0  # bump cannot mask monotone growth by more than its size


# --- grid model ----------------------------------------------------------------


def _linear_grid(strict=False):
    txs, rxs, rngs = [0.0, 10.0, 40.0], [0.0, 20.0], [100.0, 1000.0, 2000.0]
    f = lambda tz, rz, r: 30.0 + 0.2 * tz + 0.1 * rz + 0.01 * r
    vals = [[[f(tz, rz, r) for r in rngs] for rz in rxs] for tz in txs]
    return GridTlModel(txs, rxs, rngs, vals, strict=strict), f


def test_grid_reproduces_nodes_and_linear_interior():
    grid, f = _linear_grid()
    assert grid.tl_db(10.0, 20.0, 1000.0) == pytest.approx(f(10, 20, 1000))
    # trilinear interpolation is exact for a linear function
    for q in [(3.3, 7.7, 450.0), (25.0, 10.0, 1500.0), (39.9, 0.1, 101.0)]:
        assert grid.tl_db(*q) == pytest.approx(f(*q), abs=1e-9)


def test_grid_clamps_or_raises_outside():
    grid, f = _linear_grid()
    assert grid.tl_db(-5.0, 0.0, 100.0) == pytest.approx(f(0, 0, 100))
    assert grid.tl_db(0.0, 0.0, 99999.0) == pytest.approx(f(0, 0, 2000))
    strict, _ = _linear_grid(strict=True)
    with pytest.raises(ch.OutOfGrid):
        strict.tl_db(-5.0, 0.0, 100.0)
    with pytest.raises(ch.OutOfGrid):
        strict.tl_db(0.0, 0.0, 99999.0)


def test_grid_interior_bounded_by_cell_corners():
    rng = np.random.default_rng(7)
    vals = rng.uniform(30, 90, size=(3, 3, 3))
    grid = GridTlModel([0, 10, 20], [0, 15, 30], [100, 500, 900], vals)
    for _ in range(50):
        tz, rz, r = rng.uniform(0, 20), rng.uniform(0, 30), rng.uniform(100, 900)
        tl = grid.tl_db(tz, rz, r)
        assert vals.min() - 1e-9 <= tl <= vals.max() + 1e-9


def test_grid_csv_round_trip(tmp_path):
    path = tmp_path / "grid.csv"
    rows = ["tx_depth_m,rx_depth_m,range_m,tl_db"]
    for tz in (0.0, 10.0):
        for rz in (0.0, 20.0):
            for r in (100.0, 1000.0):
                rows.append(f"{tz},{rz},{r},{30 + tz + rz + r / 100}")
    path.write_text("\n".join(rows) + "\n")
    grid = GridTlModel.from_csv(path)
    assert grid.tl_db(10.0, 20.0, 1000.0) == pytest.approx(70.0)
    # missing lattice point is a load error
    path.write_text("\n".join(rows[:-1]) + "\n")
    with pytest.raises(ValueError):
        GridTlModel.from_csv(path)


# --- link budget ----------------------------------------------------------------


def test_snr_and_logistic():
    b = LinkBudget()
    assert b.snr_db(51.53) == pytest.approx(187 - 51.53 - 60)
    assert b.packet_success_prob(b.snr50_db) == pytest.approx(0.5)
    assert b.packet_success_prob(b.snr50_db + 1.5 * math.log(99)) == pytest.approx(0.99, abs=1e-9)
    assert b.packet_success_prob(-1000) == pytest.approx(0.0, abs=1e-12)
    # monotone in SNR
    probs = [b.packet_success_prob(s) for s in range(-20, 60, 5)]
    assert probs == sorted(probs)


def test_directivity_endpoints():
    tx, rx = (0.0, 0.0), (100.0, 0.0)
    # sterns facing each other: full gain
    assert directivity_gain_db(tx, 180.0, rx, 0.0) == pytest.approx(6.0)
    # bows facing each other: none
    assert directivity_gain_db(tx, 0.0, rx, 180.0) == pytest.approx(0.0, abs=1e-12)
    # one stern, one bow
    assert directivity_gain_db(tx, 180.0, rx, 180.0) == pytest.approx(3.0)
    # broadside on both ends
    assert directivity_gain_db(tx, 90.0, rx, 90.0) == pytest.approx(3.0)
    assert directivity_gain_db(tx, 45.0, rx, 45.0, d_db=8.0) <= 8.0


def test_propagation_delay():
    assert propagation_delay_s(960.0) == pytest.approx(0.64)
    assert propagation_delay_s(1500.0, 1500.0) == 1.0


# --- reception ---------------------------------------------------------------------


def _mid_probability_setup():
    """Geometry tuned so p lands in the open interval, for statistics."""
    model = AnalyticDuctModel(duct_depth_m=13.74)
    budget = LinkBudget(noise_level_db=121.0, snr_slope_db=3.0)
    tx = (0.0, 0.0, 24.0)
    rx = (1500.0, 0.0, 12.0)
    return model, budget, tx, rx


def test_decide_reception_fields_and_determinism():
    model, budget, tx, rx = _mid_probability_setup()
    r1 = [decide_reception(np.random.default_rng(5), tx, rx, 10.0, 0.04, model, budget) for _ in range(1)][0]
    r2 = decide_reception(np.random.default_rng(5), tx, rx, 10.0, 0.04, model, budget)
    assert r1 == r2
    assert isinstance(r1, Reception)
    dist = math.sqrt(1500.0**2 + 12.0**2)
    assert r1.rx_time == pytest.approx(10.0 + 0.04 + dist / 1500.0)
    assert 0.0 < r1.p_success < 1.0


def test_decide_reception_uses_profile_for_delay(fixtures_dir):
    ssp = SoundSpeedProfile.from_csv(fixtures_dir / "ssp_afternoon.csv")
    model, budget, _, _ = _mid_probability_setup()
    tx, rx = (0.0, 0.0, 12.0), (960.0, 0.0, 24.0)
    r = decide_reception(np.random.default_rng(0), tx, rx, 0.0, 0.0, model, budget, profile=ssp)
    dist = math.sqrt(960.0**2 + 12.0**2)
    c = ssp.mean_speed(12.0, 24.0)
    assert 1502.0 < c < 1505.0
    assert r.rx_time == pytest.approx(dist / c)


def test_reception_rate_matches_probability():
    model, budget, tx, rx = _mid_probability_setup()
    rng = np.random.default_rng(42)
    n = 10_000
    results = [decide_reception(rng, tx, rx, 0.0, 0.0, model, budget) for _ in range(n)]
    p = results[0].p_success
    hits = sum(r.delivered for r in results)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) < 4 * sigma


def test_reception_close_range_is_certain():
    model = AnalyticDuctModel(duct_depth_m=13.74)
    budget = LinkBudget(noise_level_db=121.0, snr_slope_db=3.0)
    rng = np.random.default_rng(1)
    r = decide_reception(rng, (0, 0, 12.0), (100.0, 0, 12.0), 0.0, 0.0, model, budget)
    assert r.delivered and r.p_success > 0.999


def test_directivity_changes_snr():
    model, budget, tx, rx = _mid_probability_setup()
    rng = np.random.default_rng(3)
    plain = decide_reception(rng, tx, rx, 0.0, 0.0, model, budget)
    boosted = decide_reception(
        np.random.default_rng(3), tx, rx, 0.0, 0.0, model, budget,
        directivity_db=6.0, tx_heading_deg=180.0, rx_heading_deg=0.0,
    )
    assert boosted.snr_db == pytest.approx(plain.snr_db + 6.0)
