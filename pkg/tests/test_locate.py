"""Bistatic delay geometry, delay normalization and position solving."""

import numpy as np
import pytest

from isac.locate import (C_LIGHT, DelayNormalization, Geometry, localize,
                         localization_mae, localization_trial,
                         normalize_delays, physical_delay)


def square_geometry():
    return Geometry(bs_position=[0.0, 0.0],
                    user_positions=[[100.0, 0.0], [0.0, 100.0],
                                    [-80.0, -60.0]],
                    target_position=[50.0, 30.0])


def test_physical_delay_frozen_value():
    geom = Geometry(bs_position=[0.0, 0.0], user_positions=[[50.0, 30.0]],
                    target_position=[50.0, 30.0])
    # user sits on the target: delay is just the target-to-BS leg
    assert physical_delay(geom, 0) == pytest.approx(
        1.9436506316151002e-07, rel=1e-12)


def test_physical_delay_user_at_bs():
    geom = Geometry(bs_position=[10.0, -5.0],
                    user_positions=[[10.0, -5.0], [0.0, 0.0]],
                    target_position=[13.0, -1.0])
    assert physical_delay(geom, 0) == pytest.approx(2 * 5.0 / C_LIGHT)


def test_physical_delay_scaling_homogeneity():
    geom = square_geometry()
    scaled = Geometry(bs_position=geom.bs_position * 3.0,
                      user_positions=[u * 3.0 for u in geom.user_positions],
                      target_position=geom.target_position * 3.0)
    for i in range(3):
        assert physical_delay(scaled, i) == pytest.approx(
            3.0 * physical_delay(geom, i), rel=1e-12)


def test_geometry_validation():
    with pytest.raises(ValueError):
        Geometry(bs_position=[0, 0], user_positions=[[1, 1], [1, 1]],
                 target_position=[5, 5])
    with pytest.raises(ValueError):
        Geometry(bs_position=[2, 2], user_positions=[[1, 1]],
                 target_position=[2, 2])


def test_normalize_delays_examples():
    normalized, window = normalize_delays([1e-6, 3e-6])
    assert normalized.tolist() == [0.0, 1.0]
    normalized, _ = normalize_delays([1e-6, 2e-6, 3e-6])
    assert np.allclose(normalized, [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        normalize_delays([2e-6, 2e-6, 2e-6])        # no spread
    with pytest.raises(ValueError):
        normalize_delays([1e-6])


def test_normalize_roundtrip():
    delays = np.array([1.1e-6, 2.7e-6, 1.9e-6, 3.3e-6])
    normalized, window = normalize_delays(delays)
    back = window.denormalize(normalized)
    assert np.max(np.abs(back - delays)) <= 1e-12 * np.max(delays)
    with pytest.raises(ValueError):
        DelayNormalization(lo=1.0, hi=1.0)


def test_localize_three_users_exact():
    geom = square_geometry()
    sums = [C_LIGHT * physical_delay(geom, i) for i in range(3)]
    fit = localize(geom.bs_position, geom.user_positions, sums)
    assert np.linalg.norm(fit.position - geom.target_position) <= 1e-6
    assert fit.residual <= 1e-6
    assert not fit.degenerate
    assert np.isfinite(fit.condition)


def test_localize_single_user_is_degenerate():
    """One distance sum fixes an ellipse, not a point."""
    geom = square_geometry()
    sums = [C_LIGHT * physical_delay(geom, 0)]
    fit = localize(geom.bs_position, geom.user_positions[:1], sums)
    assert fit.residual <= 1e-9          # lands on the ellipse...
    assert fit.degenerate                # ...but the point is arbitrary


def test_localize_translation_equivariance():
    geom = square_geometry()
    sums = [C_LIGHT * physical_delay(geom, i) for i in range(3)]
    t = np.array([12.5, -40.0])
    fit = localize(geom.bs_position, geom.user_positions, sums, seed=4)
    fit_t = localize(geom.bs_position + t,
                     [u + t for u in geom.user_positions], sums, seed=4)
    assert np.linalg.norm(fit_t.position - fit.position - t) <= 1e-6


def test_localize_input_check():
    with pytest.raises(ValueError):
        localize([0, 0], [[1, 1], [2, 2]], [100.0])


def test_trial_oracle_delays_recover_geometry():
    rows = localization_trial(0, 123, [1, 3], oracle_delays=True)
    assert [row["R"] for row in rows] == [1, 3]
    r3 = rows[1]
    assert r3["status"] == "oracle"
    assert r3["abs_error_m"] <= 1e-6
    assert not r3["degenerate"]
    assert rows[0]["degenerate"]         # single user cannot localize


def test_trial_is_deterministic():
    a = localization_trial(4, 99, [2, 3], oracle_delays=True)
    b = localization_trial(4, 99, [2, 3], oracle_delays=True)
    assert a == b
    c = localization_trial(5, 99, [2, 3], oracle_delays=True)
    assert c != a


def test_mae_summary_schema():
    summary, raw, converged = localization_mae(
        [3, 2], trials=3, seed=7, oracle_delays=True)
    assert [row["R"] for row in summary] == [2, 3]
    assert all(row["trials"] == 3 and row["snr_db"] == 5.0
               for row in summary)
    assert summary[1]["mae_m"] <= 1e-6   # oracle delays, 3 users
    assert len(raw) == 6
    assert converged
    with pytest.raises(ValueError):
        localization_mae([3], trials=0)


def test_estimated_delays_small_quiet_case():
    """End-to-end single trial through the solver at high SNR."""
    rows = localization_trial(
        1, 5, [3], Q=8, snr_db=40.0, box_half=100.0)
    row = rows[0]
    assert row["status"] == "converged"
    assert row["abs_error_m"] <= 5.0     # meters, from a 116 m true distance
