import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_mc import cascade
from fbsde_mc.cascade import (
    MonteCarloConfig,
    OrderEstimate,
    combine_orders,
    estimate_v0,
    estimate_v1,
    estimate_v2,
    estimate_v3,
    estimate_z0,
    estimate_z1,
    estimate_z2,
    raw_values,
    sample_interactions,
    weight_fhat,
)
from fbsde_mc.errors import ConfigurationError
from fbsde_mc.model import builtin_model
from fbsde_mc.sde import RngStream

X0 = np.array([100.0])


def small_cfg(**kw):
    base = dict(t=0.0, T=1.0, n_particles=20_000, seed=7)
    base.update(kw)
    return MonteCarloConfig(**base)


# --------------------------------------------------------------------------
# interaction times and reweighting
# --------------------------------------------------------------------------


def test_sample_interactions_increasing():
    sched = sample_interactions(2.0, 0.0, 1.0, RngStream(1, 0), needed=5)
    assert np.all(np.diff(sched.taus) > 0)
    assert sched.in_horizon.shape == (5,)
    assert np.all(sched.in_horizon == (sched.taus < 1.0))


def test_sample_interactions_rejects_bad_intensity():
    with pytest.raises(ConfigurationError):
        sample_interactions(0.0, 0.0, 1.0, RngStream(1, 0))
    with pytest.raises(ConfigurationError):
        sample_interactions(2.0, 0.0, 1.0, RngStream(1, 0), needed=0)


@given(st.floats(0.1, 10.0), st.floats(0.0, 3.0), st.floats(-5.0, 5.0))
@settings(max_examples=50, deadline=None)
def test_weight_fhat_closed_form(lam, dt, raw):
    got = weight_fhat(lam, 1.0, 1.0 + dt, raw)
    assert np.isclose(got, raw * np.exp(lam * dt) / lam, rtol=1e-12)


def test_weight_fhat_at_start_is_raw_over_lambda():
    assert weight_fhat(4.0, 0.3, 0.3, 2.0) == pytest.approx(0.5)


def test_weight_fhat_rejects_past_times():
    with pytest.raises(ConfigurationError):
        weight_fhat(1.0, 1.0, 0.5, 1.0)


# --------------------------------------------------------------------------
# configuration validation
# --------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(t=1.0, T=1.0),
    dict(n_particles=0),
    dict(workers=0),
    dict(lam=-1.0),
    dict(base_step=0.0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        small_cfg(**kw)


def test_config_defaults():
    cfg = small_cfg(T=3.0)
    assert cfg.intensity == pytest.approx(2.0 / 3.0)
    assert cfg.step == pytest.approx(3.0 / 200.0)


# --------------------------------------------------------------------------
# estimator values against hand-derived references
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def linear():
    return builtin_model("linear_discount", {"r_c": 0.05, "sigma": 0.2})


def _within(est, target, k=3.0):
    return abs(float(np.atleast_1d(est.value)[0]) - target) <= \
        k * max(float(np.atleast_1d(est.std_error)[0]), 1e-15)


def test_linear_orders(linear):
    model, z0f = linear
    cfg = small_cfg()
    assert _within(estimate_v0(model, z0f, X0, cfg), 100.0)
    assert _within(estimate_v1(model, z0f, X0, cfg), -5.0)
    assert _within(estimate_v2(model, z0f, X0, cfg), 0.125)
    assert _within(estimate_v3(model, z0f, X0, cfg), -100 * 0.05 ** 3 / 6)
    assert _within(estimate_z0(model, z0f, X0, cfg), 20.0)
    assert _within(estimate_z1(model, z0f, X0, cfg), -1.0)
    assert _within(estimate_z2(model, z0f, X0, cfg), 0.025)


def test_quadratic_z_cascades_are_exactly_zero():
    model, z0f = builtin_model("quadratic_v", {"T": 0.5})
    cfg = small_cfg(T=0.5, n_particles=2000)
    for name in ("z0", "z1", "z2"):
        vals, _ = raw_values(name, model, z0f, X0 / 100.0, cfg, 2000)
        assert np.all(vals == 0.0), name


def test_constant_driver_higher_orders_vanish():
    model, z0f = builtin_model("constant_driver", {"c": 3.0})
    cfg = small_cfg(n_particles=2000)
    # f is constant: all chain terms of the higher cascades are zero
    assert _within(estimate_v1(model, z0f, X0, cfg), 3.0)
    for est in (estimate_v2(model, z0f, X0, cfg),
                estimate_v3(model, z0f, X0, cfg)):
        assert float(est.value) == 0.0 and float(est.std_error) == 0.0


def test_n_contributing_counts_in_horizon_cascades(linear):
    model, z0f = linear
    cfg = small_cfg(n_particles=4000)
    est = estimate_v1(model, z0f, X0, cfg)
    # P(tau < T) = 1 - exp(-lam (T-t)), lam = 2
    p = 1 - np.exp(-2.0)
    assert abs(est.n_contributing / est.n_particles - p) < 0.03


# --------------------------------------------------------------------------
# determinism and aggregation
# --------------------------------------------------------------------------


def test_estimates_reproducible(linear):
    model, z0f = linear
    cfg = small_cfg(n_particles=5000)
    a = estimate_v2(model, z0f, X0, cfg)
    b = estimate_v2(model, z0f, X0, cfg)
    assert a.value == b.value and a.std_error == b.std_error


def test_worker_split_reproducible(linear):
    model, z0f = linear
    cfg = small_cfg(n_particles=5000, workers=3)
    a = estimate_v1(model, z0f, X0, cfg)
    b = estimate_v1(model, z0f, X0, cfg)
    assert a.value == b.value and a.std_error == b.std_error


def test_aggregation_matches_manual_mean(linear):
    model, z0f = linear
    cfg = small_cfg(n_particles=3000, chunk_size=1000)
    est = estimate_v1(model, z0f, X0, cfg)
    kernel = cascade.KERNELS["v1"](model, z0f, cfg)
    gen = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(cascade._NS, cascade.EST_IDS["v1"], 0))
    )
    vals = np.concatenate([kernel(gen, 1000, X0)[0] for _ in range(3)])
    assert est.value == pytest.approx(vals.mean(), rel=1e-12)
    assert est.std_error == pytest.approx(vals.std(ddof=1) / np.sqrt(3000), rel=1e-9)


# --------------------------------------------------------------------------
# order combination
# --------------------------------------------------------------------------


def _fake(order, component, value, se):
    return OrderEstimate(order=order, component=component, value=value,
                         std_error=se, n_particles=10, n_contributing=10)


def test_combine_orders_totals():
    res = combine_orders(
        [_fake(0, "V", 10.0, 0.1), _fake(1, "V", -2.0, 0.02),
         _fake(0, "Z", np.array([1.0]), np.array([0.01]))],
        epsilon=0.5,
    )
    assert res.total_v == pytest.approx(10.0 - 1.0)
    assert res.total_v_se == pytest.approx(np.hypot(0.1, 0.5 * 0.02))
    np.testing.assert_allclose(res.total_z, [1.0])


def test_combine_orders_rejects_duplicates():
    with pytest.raises(ConfigurationError):
        combine_orders([_fake(1, "V", 1.0, 0.1), _fake(1, "V", 2.0, 0.1)])


def test_combine_orders_needs_base_order():
    with pytest.raises(ConfigurationError):
        combine_orders([_fake(1, "V", 1.0, 0.1)])
