import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homove.scenario import (
    AREA_H, AREA_W, CellConfig, Deployment, Street, build_reference_deployment, build_reference_scenario,
    build_uav_scenario, load_scenario, polyline_points, sample_trajectory, save_scenario, scenario_from_dict,
    scenario_to_dict, uptilt_sectors,
)


def test_reference_deployment_shape():
    dep = build_reference_deployment(7)
    assert dep.n_cells == 30
    assert all(c.tx_power_dbm == 46.0 for c in dep.cells)
    assert {c.azimuth for c in dep.cells} == {0.0, 120.0, 240.0}
    assert all(22.0 <= c.site_position[2] <= 56.0 for c in dep.cells)
    assert dep.noise_dbm == pytest.approx(-104.0, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 7, 123])
def test_area_bounds(seed):
    x0, y0, x1, y1 = build_reference_deployment(seed).area_bounds
    assert (x1 - x0, y1 - y0) == (AREA_W, AREA_H) == (1400.0, 1275.0)


def test_deployment_is_pure_in_seed():
    a = json.dumps(scenario_to_dict(build_reference_scenario(7)), sort_keys=True)
    b = json.dumps(scenario_to_dict(build_reference_scenario(7)), sort_keys=True)
    c = json.dumps(scenario_to_dict(build_reference_scenario(8)), sort_keys=True)
    assert a == b and a != c


def test_reference_portfolio_has_five_streets():
    sc = build_reference_scenario(7)
    assert len(sc.streets) == 5 and all(s.altitude_m == 1.5 for s in sc.streets)


def test_uav_scenario_uptilts_one_sector_per_site():
    ref, uav = build_reference_scenario(7), build_uav_scenario(7)
    changed = [c.cell_id for c, r in zip(uav.deployment.cells, ref.deployment.cells)
               if c.mech_plus_elec_tilt != r.mech_plus_elec_tilt]
    assert changed == list(range(0, 30, 3))
    assert all(uav.deployment.cells[i].mech_plus_elec_tilt == -20.0 for i in changed)
    assert all(s.altitude_m == 150.0 for s in uav.streets)


def test_uptilt_is_a_copy():
    dep = build_reference_deployment(3)
    up = uptilt_sectors(dep, 1, -10.0)
    assert dep.cells[1].mech_plus_elec_tilt != -10.0 and up.cells[1].mech_plus_elec_tilt == -10.0


def test_straight_street_tick_count():
    street = Street(0, ((0.0, 0.0), (100.0, 0.0)))
    tr = sample_trajectory(street, 3.0, 0.04, seed=1)
    step = 3.0 / 3.6 * 0.04
    assert step == pytest.approx(0.033333, abs=1e-6)
    assert tr.n_ticks == 3001
    np.testing.assert_allclose(np.diff(tr.positions[:-1, 0]), step, atol=1e-9)
    np.testing.assert_allclose(tr.positions[[0, -1], 0], [0.0, 100.0])


@pytest.mark.parametrize("speed", [0.0, -3.0])
def test_non_positive_speed_rejected(speed):
    with pytest.raises(ValueError):
        sample_trajectory(Street(0, ((0.0, 0.0), (10.0, 0.0))), speed)


def test_degenerate_street_rejected():
    with pytest.raises(ValueError):
        Street(0, ((5.0, 5.0), (5.0, 5.0)))
    with pytest.raises(ValueError):
        Street(0, ((5.0, 5.0),))


def test_reverse_is_forward_reversed():
    street = Street(2, ((0.0, 0.0), (40.0, 0.0), (40.0, 30.0)))
    f = sample_trajectory(street, 30.0, seed=4)
    r = sample_trajectory(street, 30.0, seed=4, direction="reverse")
    np.testing.assert_array_equal(r.positions, f.positions[::-1])


def test_altitude_is_street_altitude():
    tr = sample_trajectory(Street(0, ((0.0, 0.0), (50.0, 0.0)), 150.0), 60.0, seed=0)
    assert np.all(tr.positions[:, 2] == 150.0)


@given(st.lists(st.tuples(st.floats(0, 1400), st.floats(0, 1275)), min_size=2, max_size=6, unique=True),
       st.floats(1.0, 120.0))
def test_tick_count_and_bounds_property(pts, speed):
    try:
        street = Street(0, tuple(pts))
    except ValueError:
        return
    if street.length_m < 1.0:
        return
    tr = sample_trajectory(street, speed, 0.04, seed=0, bounds=(0.0, 0.0, 1400.0, 1275.0))
    step = speed / 3.6 * 0.04
    assert tr.n_ticks == math.ceil(street.length_m / step - 1e-9) + 1
    assert np.all((tr.positions[:, 0] >= 0) & (tr.positions[:, 0] <= 1400))
    assert np.all((tr.positions[:, 1] >= 0) & (tr.positions[:, 1] <= 1275))


def test_polyline_points_spacing():
    pts = polyline_points(Street(0, ((0.0, 0.0), (10.0, 0.0))), 2.5)
    np.testing.assert_allclose(pts[:, 0], [0.0, 2.5, 5.0, 7.5, 10.0])


def test_json_roundtrip(tmp_path):
    sc = build_reference_scenario(11)
    save_scenario(sc, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back == sc
    assert scenario_from_dict(scenario_to_dict(sc)) == sc


def test_cell_ids_must_be_positional():
    c = CellConfig(1, (0.0, 0.0, 30.0), 0.0, 6.0)
    with pytest.raises(ValueError):
        Deployment((c,))
