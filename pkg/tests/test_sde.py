import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_mc.errors import ConfigurationError, SimulationError
from fbsde_mc.model import builtin_model
from fbsde_mc.sde import (
    RngStream,
    TimeGrid,
    build_grid,
    malliavin_x,
    simulate_batch,
    simulate_path,
)


def test_build_grid_contains_uniform_nodes_and_taus():
    grid = build_grid(0.0, 1.0, 0.25, taus=[0.1, 0.6])
    for s in (0.0, 0.25, 0.5, 0.75, 1.0, 0.1, 0.6):
        assert grid.index_of(s) >= 0


def test_build_grid_rejects_tau_outside_horizon():
    with pytest.raises(ConfigurationError):
        build_grid(0.0, 1.0, 0.25, taus=[1.5])


def test_time_grid_rejects_non_increasing():
    with pytest.raises(ConfigurationError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]), base_step=0.5)


def test_index_of_rejects_non_node():
    grid = build_grid(0.0, 1.0, 0.5)
    with pytest.raises(ConfigurationError):
        grid.index_of(0.123)


@given(st.integers(min_value=1, max_value=30), st.floats(0.05, 2.0))
@settings(max_examples=25, deadline=None)
def test_build_grid_sorted_unique(n_taus, span):
    rng = np.random.default_rng(n_taus)
    taus = rng.uniform(1e-6, span - 1e-6, size=n_taus)
    grid = build_grid(0.0, span, span / 7.0, taus=taus)
    nodes = grid.nodes
    assert np.all(np.diff(nodes) > 0)
    assert nodes[0] == 0.0 and nodes[-1] == span


def test_flow_spawn_values_are_exact():
    model, _ = builtin_model("linear_discount", {})
    grid = build_grid(0.0, 1.0, 0.01, taus=[0.37])
    path = simulate_path(model, np.array([100.0]), grid, RngStream(3, 0),
                         flow_anchors=[0.37], second_flow_anchors=[(0.0, 0.37)])
    k = grid.index_of(0.37)
    # forced initial values: identity / zero, bit-exact at the anchor
    assert np.array_equal(path.flows[0.37][k], np.eye(1))
    assert np.array_equal(path.second_flows[(0.0, 0.37)][k], np.zeros((1, 1, 1)))
    # and frozen before it
    assert np.array_equal(path.flows[0.37][0], np.eye(1))


def test_single_path_flow_matches_bump_with_common_noise():
    model, _ = builtin_model("linear_discount", {})
    grid = build_grid(0.0, 1.0, 0.005)
    h = 1e-4 * 100.0
    stream = RngStream(11, 5)
    up = simulate_path(model, np.array([100.0 + h]), grid, stream)
    dn = simulate_path(model, np.array([100.0 - h]), grid, stream)
    mid = simulate_path(model, np.array([100.0]), grid, stream,
                        flow_anchors=[0.0])
    slope = (up.x[-1, 0] - dn.x[-1, 0]) / (2 * h)
    flow = mid.flows[0.0][-1, 0, 0]
    # the Euler map of geometric dynamics is linear in x, so the bump equals
    # the discrete flow to rounding
    assert abs(slope - flow) / abs(flow) < 1e-9


def test_malliavin_x_shape_check():
    with pytest.raises(ConfigurationError):
        malliavin_x(np.eye(2), np.ones((3, 1)))


def test_batch_insert_past_horizon_is_noop():
    model, _ = builtin_model("linear_discount", {})
    gen = np.random.default_rng(0)
    n = 64
    inserts = np.full((n, 1), 2.5)  # tau beyond T collapses onto T
    rec = simulate_batch(model, np.array([100.0]), 0.0, 1.0, 0.05, gen,
                         insert_times=inserts, time_labels={"tau1": inserts[:, 0]},
                         records=[("x", None, "tau1"), ("x", None, "T")])
    np.testing.assert_array_equal(rec[("x", None, "tau1")], rec[("x", None, "T")])


def test_batch_flow_matches_bump_with_common_noise():
    model, _ = builtin_model("linear_discount", {})
    x0 = 100.0
    h = 1e-4 * x0
    outs = []
    for shift in (h, -h, 0.0):
        gen = np.random.default_rng(42)
        rec = simulate_batch(model, np.array([x0 + shift]), 0.0, 1.0, 0.005, gen,
                             insert_times=np.empty((256, 0)), time_labels={},
                             flow_anchors=["t"],
                             records=[("x", None, "T"), ("y", "t", "T")])
        outs.append(rec)
    slope = (outs[0][("x", None, "T")][:, 0] - outs[1][("x", None, "T")][:, 0]) / (2 * h)
    flow = outs[2][("y", "t", "T")][:, 0, 0]
    assert np.max(np.abs(slope - flow) / np.abs(flow)) < 1e-9


def test_batch_is_martingale_for_driftless_model():
    model, _ = builtin_model("linear_discount", {})
    gen = np.random.default_rng(7)
    n = 200_000
    rec = simulate_batch(model, np.array([100.0]), 0.0, 1.0, 0.02, gen,
                         insert_times=np.empty((n, 0)), time_labels={},
                         records=[("x", None, "T")])
    xT = rec[("x", None, "T")][:, 0]
    assert abs(xT.mean() - 100.0) < 3 * xT.std() / np.sqrt(n)


def test_non_finite_state_raises():
    import dataclasses

    model, _ = builtin_model("linear_discount", {})
    bad = dataclasses.replace(model, drift_free=lambda t, x: x ** 3)
    gen = np.random.default_rng(0)
    with pytest.raises(SimulationError):
        simulate_batch(bad, np.array([100.0]), 0.0, 1.0, 0.1, gen,
                       insert_times=np.empty((4, 0)), time_labels={},
                       records=[("x", None, "T")])


def test_rng_stream_reproducible_and_distinct():
    a = RngStream(9, 1).generator().standard_normal(4)
    b = RngStream(9, 1).generator().standard_normal(4)
    c = RngStream(9, 2).generator().standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_second_flow_requires_parent_flows():
    from fbsde_mc.sde import PathSimulation

    model, _ = builtin_model("linear_discount", {})
    grid = build_grid(0.0, 1.0, 0.1, taus=[0.5])
    sim = PathSimulation(model, np.array([100.0]), grid, RngStream(0, 0))
    sim.spawn_anchor(0.5, kind="second", parent_anchor=0.0)
    with pytest.raises(ConfigurationError):
        sim.finish()
