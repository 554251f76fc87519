import numpy as np
import pytest

from fbsde_mc.errors import ConfigurationError
from fbsde_mc.model import (
    CATALOG,
    DriverOnZeroth,
    ModelSpec,
    ZerothOrderFunctions,
    builtin_model,
    fit_zeroth_order,
    nabla_f,
    verify_partials,
)


def test_catalog_contents():
    assert set(CATALOG) == {
        "constant_driver", "linear_discount", "quadratic_v",
        "cva_positive_part", "coupled_drift", "coupled_vol",
    }


def test_unknown_model_lists_catalog():
    with pytest.raises(ConfigurationError) as exc:
        builtin_model("no_such_model", {})
    assert "no_such_model" in str(exc.value)
    assert "linear_discount" in str(exc.value)


def test_unknown_param_rejected():
    with pytest.raises(ConfigurationError) as exc:
        builtin_model("linear_discount", {"bogus": 1.0})
    assert "bogus" in str(exc.value)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_partials_match_finite_differences(name):
    model, z0f = builtin_model(name, {})
    # keep v well away from the positive-part kink
    points = [
        (0.3, np.array([[90.0]]), np.array([85.0]), np.array([[17.0]])),
        (0.7, np.array([[120.0]]), np.array([110.0]), np.array([[25.0]])),
    ]
    report = verify_partials(model, points, h=1e-4)
    for key, err in report.items():
        assert err < 1e-5, (key, err)


def test_require_names_missing_callback():
    model, _ = builtin_model("linear_discount", {})
    object.__setattr__(model, "driver_dvv", None)
    with pytest.raises(ConfigurationError) as exc:
        model.require("driver_dvv")
    assert "driver_dvv" in str(exc.value)


def test_zeroth_order_require():
    _, z0f = builtin_model("linear_discount", {})
    object.__setattr__(z0f, "z0_dxx", None)
    with pytest.raises(ConfigurationError) as exc:
        z0f.require("z0_dxx")
    assert "z0_dxx" in str(exc.value)


def _chain_rule_fixture():
    """Model with f = v*z so the composite x -> f(x, v0, z0) is sigma x^2."""
    sigma = 0.2
    base, z0f = builtin_model("linear_discount", {"sigma": sigma})
    import dataclasses

    model = dataclasses.replace(
        base,
        driver=lambda t, x, v, z: v * z[..., 0],
        driver_dx=lambda t, x, v, z: np.zeros_like(x),
        driver_dv=lambda t, x, v, z: z[..., 0],
        driver_dz=lambda t, x, v, z: v[..., None] * np.ones_like(z),
        driver_dxx=lambda t, x, v, z: np.zeros(x.shape + (1,)),
        driver_dxv=lambda t, x, v, z: np.zeros_like(x),
        driver_dxz=lambda t, x, v, z: np.zeros(x.shape + (1,)),
        driver_dvv=lambda t, x, v, z: np.zeros_like(v),
        driver_dvz=lambda t, x, v, z: np.ones_like(z),
        driver_dzz=lambda t, x, v, z: np.zeros(z.shape + (1,)),
    )
    return model, z0f, sigma


def test_chained_gradient_and_hessian():
    model, z0f, sigma = _chain_rule_fixture()
    x = np.array([[3.0], [7.0]])
    pt = DriverOnZeroth(model, z0f).at(0.0, x)
    # composite is sigma x^2: gradient 2 sigma x, hessian 2 sigma
    np.testing.assert_allclose(pt.f(), sigma * x[:, 0] ** 2, rtol=1e-12)
    np.testing.assert_allclose(pt.nabla()[:, 0], 2 * sigma * x[:, 0], rtol=1e-12)
    np.testing.assert_allclose(pt.hessian()[:, 0, 0], 2 * sigma, rtol=1e-12)


def test_nabla_f_matches_bumped_composite():
    model, z0f, _ = _chain_rule_fixture()
    x = np.array([[5.0]])
    h = 1e-6

    def composite(xx):
        v = np.atleast_1d(z0f.v0(0.0, xx))
        z = np.atleast_2d(z0f.z0(0.0, xx))
        return np.asarray(model.driver(0.0, xx, v, z), float)

    fd = (composite(x + h) - composite(x - h)) / (2 * h)
    np.testing.assert_allclose(nabla_f(model, z0f, 0.0, x), fd, rtol=1e-7)


def test_fit_zeroth_order_recovers_martingale_value():
    model, _ = builtin_model("linear_discount", {})
    rng = np.random.default_rng(0)
    fitted = fit_zeroth_order(model, 0.0, 100.0, rng, degree=3, n_fit=40000)
    x = np.array([[100.0]])
    # identity payoff of a driftless forward: v0(x) = x, z0 = sigma x
    assert abs(float(fitted.v0(0.0, x)[0]) - 100.0) < 1.0
    assert abs(float(fitted.z0(0.0, x)[0, 0]) - 20.0) < 1.5


def test_fit_zeroth_order_rejects_multidim():
    model, _ = builtin_model("linear_discount", {})
    import dataclasses

    bad = dataclasses.replace(model, dim_x=2)
    with pytest.raises(ConfigurationError):
        fit_zeroth_order(bad, 0.0, 100.0, np.random.default_rng(0))
