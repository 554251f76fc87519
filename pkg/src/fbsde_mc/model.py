"""FBSDE problem declarations.

A :class:`ModelSpec` collects the forward coefficients (split into a
feedback-free part and optional feedback terms), the backward driver with its
partial derivatives, and the terminal payoff.  :class:`ZerothOrderFunctions`
holds the order-0 value/martingale functions of the driver-free problem as
explicit functions of state; every higher-order estimator consumes them.

Callback convention
-------------------
All callbacks are vectorized over a leading batch axis: ``t`` is a scalar or a
shape ``(n,)`` array, ``x`` has shape ``(n, d)``, ``v`` shape ``(n,)``, ``z``
shape ``(n, r)``.  Outputs carry the batch axis first; derivative outputs
append the differentiation axes last, e.g. ``vol_free_dx(t, x)[n, i, a, k] =
d sigma^i_a / d x^k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

Array = np.ndarray
Fn = Callable[..., Array]


@dataclass(frozen=True)
class ModelSpec:
    """Declaration of one FBSDE problem.

    ``drift_free``/``vol_free`` are the feedback-free forward coefficients;
    the decoupled case uses them directly as the forward dynamics.  Feedback
    callbacks (``drift_feedback``/``vol_feedback``) are optional; ``None``
    means identically zero.  Partial-derivative callbacks that an estimator
    needs but that are left ``None`` raise :class:`ConfigurationError` naming
    the missing callback at use time.
    """

    dim_x: int
    dim_w: int
    horizon: float
    drift_free: Fn
    vol_free: Fn
    driver: Fn
    terminal: Fn

    terminal_dx: Optional[Fn] = None

    # forward coefficient partials in x
    drift_free_dx: Optional[Fn] = None
    vol_free_dx: Optional[Fn] = None
    drift_free_dxx: Optional[Fn] = None
    vol_free_dxx: Optional[Fn] = None

    # driver partials in (x, v, z)
    driver_dx: Optional[Fn] = None
    driver_dv: Optional[Fn] = None
    driver_dz: Optional[Fn] = None
    driver_dxx: Optional[Fn] = None
    driver_dxv: Optional[Fn] = None
    driver_dxz: Optional[Fn] = None
    driver_dvv: Optional[Fn] = None
    driver_dvz: Optional[Fn] = None
    driver_dzz: Optional[Fn] = None

    # feedback terms mu(t,x,v,z) and eta(t,x,v,z) for the coupled case
    drift_feedback: Optional[Fn] = None
    vol_feedback: Optional[Fn] = None
    drift_feedback_dv: Optional[Fn] = None
    drift_feedback_dz: Optional[Fn] = None
    vol_feedback_dv: Optional[Fn] = None
    vol_feedback_dz: Optional[Fn] = None

    # optional closed-form inner expectation E[f(X_u, v0, z0) | X_t = x_t],
    # used by the order-1 quadrature oracle
    mean_driver: Optional[Callable[[float, float, Array], float]] = None

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_w < 1:
            raise ConfigurationError("dim_x and dim_w must be positive")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")

    @property
    def has_feedback(self) -> bool:
        return self.drift_feedback is not None or self.vol_feedback is not None

    def require(self, name: str) -> Fn:
        fn = getattr(self, name)
        if fn is None:
            raise ConfigurationError(f"model is missing callback {name!r}")
        return fn


@dataclass(frozen=True)
class ZerothOrderFunctions:
    """Order-0 value and martingale functions and their spatial partials."""

    v0: Fn
    z0: Fn
    v0_dx: Optional[Fn] = None
    v0_dxx: Optional[Fn] = None
    z0_dx: Optional[Fn] = None
    z0_dxx: Optional[Fn] = None

    def require(self, name: str) -> Fn:
        fn = getattr(self, name)
        if fn is None:
            raise ConfigurationError(f"zeroth-order functions missing callback {name!r}")
        return fn


class DriverOnZeroth:
    """Driver and its chained derivatives along the order-0 solution.

    Everything is evaluated at ``(t, x, v0(t,x), z0(t,x))``.  ``nabla`` is the
    total spatial derivative of the composite ``x -> f(t, x, v0(x), z0(x))``;
    ``hessian`` its full second derivative.
    """

    def __init__(self, model: ModelSpec, z0f: ZerothOrderFunctions):
        self.model = model
        self.z0f = z0f

    def at(self, t, x: Array) -> "DriverPoint":
        return DriverPoint(self.model, self.z0f, t, np.asarray(x, float))


class DriverPoint:
    def __init__(self, model: ModelSpec, z0f: ZerothOrderFunctions, t, x: Array):
        self.model = model
        self.z0f = z0f
        self.t = t
        self.x = x
        self.v = np.asarray(z0f.v0(t, x), float)
        self.z = np.asarray(z0f.z0(t, x), float)

    def _m(self, name):
        return self.model.require(name)(self.t, self.x, self.v, self.z)

    def _z(self, name):
        return self.z0f.require(name)(self.t, self.x)

    def f(self) -> Array:
        return np.asarray(self.model.driver(self.t, self.x, self.v, self.z), float)

    def dv(self) -> Array:
        return np.asarray(self._m("driver_dv"), float)

    def dz(self) -> Array:
        return np.asarray(self._m("driver_dz"), float)

    def nabla(self) -> Array:
        """(n, d): nabla_i f = d_i f + d_i v0 * d_v f + d_i z^a * d_{z^a} f."""
        dx = self._m("driver_dx")
        dv = self._m("driver_dv")
        dz = self._m("driver_dz")
        v0x = self._z("v0_dx")
        z0x = self._z("z0_dx")
        return dx + v0x * dv[..., None] + np.einsum("...a,...ai->...i", dz, z0x)

    def nabla_dv(self) -> Array:
        """(n, d): nabla_i applied to d_v f."""
        dxv = self._m("driver_dxv")
        dvv = self._m("driver_dvv")
        dvz = self._m("driver_dvz")
        v0x = self._z("v0_dx")
        z0x = self._z("z0_dx")
        return dxv + v0x * dvv[..., None] + np.einsum("...a,...ai->...i", dvz, z0x)

    def nabla_dz(self) -> Array:
        """(n, d, r): nabla_i applied to d_{z^b} f."""
        dxz = self._m("driver_dxz")
        dvz = self._m("driver_dvz")
        dzz = self._m("driver_dzz")
        v0x = self._z("v0_dx")
        z0x = self._z("z0_dx")
        return (
            dxz
            + v0x[..., :, None] * dvz[..., None, :]
            + np.einsum("...ab,...ai->...ib", dzz, z0x)
        )

    def hessian(self) -> Array:
        """(n, d, d): full second derivative of x -> f(x, v0(x), z0(x))."""
        dv = self._m("driver_dv")
        dz = self._m("driver_dz")
        dxx = self._m("driver_dxx")
        dxv = self._m("driver_dxv")
        dxz = self._m("driver_dxz")
        dvv = self._m("driver_dvv")
        dvz = self._m("driver_dvz")
        dzz = self._m("driver_dzz")
        v0x = self._z("v0_dx")
        v0xx = self._z("v0_dxx")
        z0x = self._z("z0_dx")
        z0xx = self._z("z0_dxx")
        h = dxx.copy()
        h += dxv[..., :, None] * v0x[..., None, :]
        h += dxv[..., None, :] * v0x[..., :, None]
        h += np.einsum("...ia,...aj->...ij", dxz, z0x)
        h += np.einsum("...ja,...ai->...ij", dxz, z0x)
        h += dvv[..., None, None] * v0x[..., :, None] * v0x[..., None, :]
        h += np.einsum("...a,...i,...aj->...ij", dvz, v0x, z0x)
        h += np.einsum("...a,...j,...ai->...ij", dvz, v0x, z0x)
        h += np.einsum("...ab,...ai,...bj->...ij", dzz, z0x, z0x)
        h += dv[..., None, None] * v0xx
        h += np.einsum("...a,...aij->...ij", dz, z0xx)
        return h

    def dvv(self) -> Array:
        return np.asarray(self._m("driver_dvv"), float)

    def dvz(self) -> Array:
        return np.asarray(self._m("driver_dvz"), float)

    def dzz(self) -> Array:
        return np.asarray(self._m("driver_dzz"), float)


def nabla_f(model: ModelSpec, z0f: ZerothOrderFunctions, t: float, x) -> Array:
    """Chained spatial gradient of the driver along the order-0 solution.

    Returns the d-vector ``(nabla_i f)(x, v0(x), z0(x))`` at a single point.
    """
    x = np.atleast_2d(np.asarray(x, float))
    return DriverOnZeroth(model, z0f).at(t, x).nabla()[0]


# ---------------------------------------------------------------------------
# catalog of analytic test models
# ---------------------------------------------------------------------------


def _const_field(value, suffix):
    arr = np.asarray(value, float).reshape(suffix)

    def fn(t, x, *rest):
        return np.broadcast_to(arr, np.shape(x)[:-1] + suffix)

    return fn


def _zeros(suffix):
    return _const_field(np.zeros(suffix), suffix)


def _const_terminal(value, suffix):
    arr = np.asarray(value, float).reshape(suffix)

    def fn(x):
        return np.broadcast_to(arr, np.shape(x)[:-1] + suffix)

    return fn


def _gbm_free(sigma):
    """Driftless 1-D geometric Brownian free dynamics dX = sigma X dW."""
    return dict(
        drift_free=lambda t, x: np.zeros_like(x),
        vol_free=lambda t, x: sigma * x[..., :, None],
        drift_free_dx=_zeros((1, 1)),
        vol_free_dx=_const_field(sigma, (1, 1, 1)),
        drift_free_dxx=_zeros((1, 1, 1)),
        vol_free_dxx=_zeros((1, 1, 1, 1)),
    )


def _identity_payoff():
    return dict(
        terminal=lambda x: x[..., 0],
        terminal_dx=_const_terminal(1.0, (1,)),
    )


def _linear_zeroth(sigma) -> ZerothOrderFunctions:
    """v0(t,x) = x for a driftless forward; z0 = sigma x."""
    return ZerothOrderFunctions(
        v0=lambda t, x: x[..., 0],
        z0=lambda t, x: sigma * x,
        v0_dx=_const_field(1.0, (1,)),
        v0_dxx=_zeros((1, 1)),
        z0_dx=_const_field(sigma, (1, 1)),
        z0_dxx=_zeros((1, 1, 1)),
    )


def _zero_driver_partials():
    return dict(
        driver_dx=_zeros((1,)),
        driver_dv=_zeros(()),
        driver_dz=_zeros((1,)),
        driver_dxx=_zeros((1, 1)),
        driver_dxv=_zeros((1,)),
        driver_dxz=_zeros((1, 1)),
        driver_dvv=_zeros(()),
        driver_dvz=_zeros((1,)),
        driver_dzz=_zeros((1, 1)),
    )


def _check_params(name, params, allowed):
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"unknown parameters for model {name!r}: {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}"
        )


def _build_constant_driver(params):
    _check_params("constant_driver", params, {"c", "sigma", "T"})
    c = float(params.get("c", 3.0))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: np.full(np.shape(x)[:-1], c),
        mean_driver=lambda t, u, x_t: c,
        **_gbm_free(sigma),
        **_identity_payoff(),
        **parts,
    )
    return model, _linear_zeroth(sigma)


def _build_linear_discount(params):
    _check_params("linear_discount", params, {"r_c", "sigma", "T"})
    r_c = float(params.get("r_c", 0.05))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    parts["driver_dv"] = _const_field(-r_c, ())
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: -r_c * v,
        mean_driver=lambda t, u, x_t: -r_c * float(np.asarray(x_t).reshape(-1)[0]),
        **_gbm_free(sigma),
        **_identity_payoff(),
        **parts,
    )
    return model, _linear_zeroth(sigma)


def _build_quadratic_v(params):
    _check_params("quadratic_v", params, {"K", "sigma", "T"})
    K = float(params.get("K", 1.0))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    parts["driver_dv"] = lambda t, x, v, z: 2.0 * v
    parts["driver_dvv"] = _const_field(2.0, ())
    z0f = ZerothOrderFunctions(
        v0=lambda t, x: np.full(np.shape(x)[:-1], K),
        z0=lambda t, x: np.zeros_like(x),
        v0_dx=_zeros((1,)),
        v0_dxx=_zeros((1, 1)),
        z0_dx=_zeros((1, 1)),
        z0_dxx=_zeros((1, 1, 1)),
    )
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: v * v,
        mean_driver=lambda t, u, x_t: K * K,
        terminal=lambda x: np.full(np.shape(x)[:-1], K),
        terminal_dx=_const_terminal(0.0, (1,)),
        **_gbm_free(sigma),
        **parts,
    )
    return model, z0f


def _build_cva_positive_part(params):
    _check_params("cva_positive_part", params, {"beta", "sigma", "T"})
    beta = float(params.get("beta", 0.03))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    # d_v of beta*max(v,0); second partials vanish away from v = 0 and the
    # catalog keeps the model in the v0 > 0 regime
    parts["driver_dv"] = lambda t, x, v, z: beta * (v > 0.0).astype(float)
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: beta * np.maximum(v, 0.0),
        mean_driver=lambda t, u, x_t: beta * float(np.asarray(x_t).reshape(-1)[0]),
        **_gbm_free(sigma),
        **_identity_payoff(),
        **parts,
    )
    return model, _linear_zeroth(sigma)


def _build_coupled_drift(params):
    _check_params("coupled_drift", params, {"m", "sigma", "T"})
    m = float(params.get("m", 0.1))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: np.zeros(np.shape(x)[:-1]),
        drift_feedback=_const_field(m, (1,)),
        drift_feedback_dv=_zeros((1,)),
        drift_feedback_dz=_zeros((1, 1)),
        # order-1 source is d_x v0 * mu = m, constant in x
        mean_driver=lambda t, u, x_t: m,
        **_gbm_free(sigma),
        **_identity_payoff(),
        **parts,
    )
    return model, _linear_zeroth(sigma)


def _build_coupled_vol(params):
    _check_params("coupled_vol", params, {"e", "sigma", "T"})
    e = float(params.get("e", 0.1))
    sigma = float(params.get("sigma", 0.2))
    parts = _zero_driver_partials()
    model = ModelSpec(
        dim_x=1,
        dim_w=1,
        horizon=float(params.get("T", 1.0)),
        driver=lambda t, x, v, z: np.zeros(np.shape(x)[:-1]),
        vol_feedback=_const_field(e, (1, 1)),
        vol_feedback_dv=_zeros((1, 1)),
        vol_feedback_dz=_zeros((1, 1, 1)),
        mean_driver=lambda t, u, x_t: 0.0,
        **_gbm_free(sigma),
        **_identity_payoff(),
        **parts,
    )
    return model, _linear_zeroth(sigma)


CATALOG = {
    "constant_driver": _build_constant_driver,
    "linear_discount": _build_linear_discount,
    "quadratic_v": _build_quadratic_v,
    "cva_positive_part": _build_cva_positive_part,
    "coupled_drift": _build_coupled_drift,
    "coupled_vol": _build_coupled_vol,
}


def builtin_model(name: str, params: Optional[dict] = None):
    """Look up a catalog model by name; returns (ModelSpec, ZerothOrderFunctions)."""
    if name not in CATALOG:
        raise ConfigurationError(
            f"unknown model {name!r}; catalog: {sorted(CATALOG)}"
        )
    return CATALOG[name](dict(params or {}))


# ---------------------------------------------------------------------------
# finite-difference verification of supplied partials
# ---------------------------------------------------------------------------


def _fd_x(fn, t, x, h, *rest):
    """Central difference of fn w.r.t. each component of x; appends the x-axis."""
    d = x.shape[-1]
    cols = []
    for k in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[..., k] += h
        xm[..., k] -= h
        cols.append((np.asarray(fn(t, xp, *rest), float) - np.asarray(fn(t, xm, *rest), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def _fd_scalar_arg(fn, t, x, v, z, h, which):
    if which == "v":
        return (np.asarray(fn(t, x, v + h, z), float) - np.asarray(fn(t, x, v - h, z), float)) / (2 * h)
    raise ValueError(which)


def _fd_z(fn, t, x, v, z, h):
    r = z.shape[-1]
    cols = []
    for a in range(r):
        zp = z.copy()
        zm = z.copy()
        zp[..., a] += h
        zm[..., a] -= h
        cols.append((np.asarray(fn(t, x, v, zp), float) - np.asarray(fn(t, x, v, zm), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def verify_partials(model: ModelSpec, points, h: float = 1e-4,
                    z0f: Optional[ZerothOrderFunctions] = None) -> dict:
    """Compare every supplied analytic partial against central differences.

    ``points`` is a list of ``(t, x, v, z)`` tuples.  Second partials are
    checked against finite differences of the corresponding analytic first
    partials, so all reported errors are O(h^2) for smooth callbacks.
    Report-only: returns a dict name -> max abs error over all points.
    """
    if h <= 0:
        raise ConfigurationError("finite-difference step h must be positive")
    report: dict = {}

    def note(name, err):
        report[name] = max(report.get(name, 0.0), float(np.max(np.abs(err))))

    for (t, x, v, z) in points:
        x = np.atleast_2d(np.asarray(x, float))
        v = np.atleast_1d(np.asarray(v, float))
        z = np.atleast_2d(np.asarray(z, float))

        # driver firsts
        fz = lambda tt, xx, vv, zz: model.driver(tt, xx, vv, zz)
        if model.driver_dx is not None:
            note("driver_dx", model.driver_dx(t, x, v, z) - _fd_x(lambda tt, xx: fz(tt, xx, v, z), t, x, h))
        if model.driver_dv is not None:
            note("driver_dv", model.driver_dv(t, x, v, z) - _fd_scalar_arg(fz, t, x, v, z, h, "v"))
        if model.driver_dz is not None:
            note("driver_dz", model.driver_dz(t, x, v, z) - _fd_z(fz, t, x, v, z, h))

        # driver seconds, against analytic firsts
        if model.driver_dxx is not None and model.driver_dx is not None:
            note("driver_dxx",
                 model.driver_dxx(t, x, v, z) - _fd_x(lambda tt, xx: model.driver_dx(tt, xx, v, z), t, x, h))
        if model.driver_dxv is not None and model.driver_dx is not None:
            note("driver_dxv",
                 model.driver_dxv(t, x, v, z) - _fd_scalar_arg(model.driver_dx, t, x, v, z, h, "v"))
        if model.driver_dxz is not None and model.driver_dx is not None:
            note("driver_dxz", model.driver_dxz(t, x, v, z) - _fd_z(model.driver_dx, t, x, v, z, h))
        if model.driver_dvv is not None and model.driver_dv is not None:
            note("driver_dvv",
                 model.driver_dvv(t, x, v, z) - _fd_scalar_arg(model.driver_dv, t, x, v, z, h, "v"))
        if model.driver_dvz is not None and model.driver_dv is not None:
            note("driver_dvz", model.driver_dvz(t, x, v, z) - _fd_z(model.driver_dv, t, x, v, z, h))
        if model.driver_dzz is not None and model.driver_dz is not None:
            note("driver_dzz", model.driver_dzz(t, x, v, z) - _fd_z(model.driver_dz, t, x, v, z, h))

        # free coefficients
        if model.drift_free_dx is not None:
            note("drift_free_dx", model.drift_free_dx(t, x) - _fd_x(model.drift_free, t, x, h))
        if model.vol_free_dx is not None:
            note("vol_free_dx", model.vol_free_dx(t, x) - _fd_x(model.vol_free, t, x, h))
        if model.drift_free_dxx is not None and model.drift_free_dx is not None:
            note("drift_free_dxx", model.drift_free_dxx(t, x) - _fd_x(model.drift_free_dx, t, x, h))
        if model.vol_free_dxx is not None and model.vol_free_dx is not None:
            note("vol_free_dxx", model.vol_free_dxx(t, x) - _fd_x(model.vol_free_dx, t, x, h))

        # feedback partials in (v, z)
        for base, dv_name, dz_name in (
            ("drift_feedback", "drift_feedback_dv", "drift_feedback_dz"),
            ("vol_feedback", "vol_feedback_dv", "vol_feedback_dz"),
        ):
            fn = getattr(model, base)
            if fn is None:
                continue
            if getattr(model, dv_name) is not None:
                note(dv_name, getattr(model, dv_name)(t, x, v, z) - _fd_scalar_arg(fn, t, x, v, z, h, "v"))
            if getattr(model, dz_name) is not None:
                note(dz_name, getattr(model, dz_name)(t, x, v, z) - _fd_z(fn, t, x, v, z, h))

        # terminal
        if model.terminal_dx is not None:
            note("terminal_dx",
                 model.terminal_dx(x) - _fd_x(lambda tt, xx: model.terminal(xx), t, x, h))

        # order-0 functions
        if z0f is not None:
            if z0f.v0_dx is not None:
                note("v0_dx", z0f.v0_dx(t, x) - _fd_x(z0f.v0, t, x, h))
            if z0f.v0_dxx is not None and z0f.v0_dx is not None:
                note("v0_dxx", z0f.v0_dxx(t, x) - _fd_x(z0f.v0_dx, t, x, h))
            if z0f.z0_dx is not None:
                note("z0_dx", z0f.z0_dx(t, x) - _fd_x(z0f.z0, t, x, h))
            if z0f.z0_dxx is not None and z0f.z0_dx is not None:
                note("z0_dxx", z0f.z0_dxx(t, x) - _fd_x(z0f.z0_dx, t, x, h))

    return report


def fit_zeroth_order(model: ModelSpec, t: float, x_center: float, rng,
                     degree: int = 4, n_fit: int = 20000, spread: float = 0.5,
                     n_steps: int = 200) -> ZerothOrderFunctions:
    """Least-squares polynomial fallback for the order-0 functions (1-D only).

    Fits ``v0`` at the single time slice ``t`` by regressing the terminal
    payoff of Euler paths on a polynomial basis in the starting point, then
    takes ``z0 = v0' * sigma`` analytically from the fitted coefficients.
    The returned functions ignore their time argument; use only for
    time-homogeneous problems or as a rough starting point.
    """
    if model.dim_x != 1 or model.dim_w != 1:
        raise ConfigurationError("fit_zeroth_order supports only d = r = 1")
    T = model.horizon
    lo, hi = x_center * (1 - spread), x_center * (1 + spread)
    x0 = rng.uniform(lo, hi, size=n_fit)
    x = x0.copy()
    dt = (T - t) / n_steps
    for _ in range(n_steps):
        xi = rng.standard_normal(n_fit)
        xv = x[:, None]
        x = x + model.drift_free(t, xv)[:, 0] * dt \
            + model.vol_free(t, xv)[:, 0, 0] * np.sqrt(dt) * xi
    psi = model.terminal(x[:, None])
    coeffs = np.polynomial.polynomial.polyfit(x0, psi, degree)
    p = np.polynomial.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    ddp = p.deriv(2)
    dddp = p.deriv(3)

    def v0(tt, xx):
        return p(xx[..., 0])

    def v0_dx(tt, xx):
        return dp(xx[..., 0])[..., None]

    def v0_dxx(tt, xx):
        return ddp(xx[..., 0])[..., None, None]

    def z0(tt, xx):
        return dp(xx[..., 0])[..., None] * model.vol_free(tt, xx)[..., 0, :]

    def z0_dx(tt, xx):
        s = model.vol_free(tt, xx)[..., 0, :]
        ds = model.require("vol_free_dx")(tt, xx)[..., 0, :, :]
        return ddp(xx[..., 0])[..., None, None] * s[..., :, None] \
            + dp(xx[..., 0])[..., None, None] * ds

    def z0_dxx(tt, xx):
        s = model.vol_free(tt, xx)[..., 0, :]
        ds = model.require("vol_free_dx")(tt, xx)[..., 0, :, :]
        dds = model.require("vol_free_dxx")(tt, xx)[..., 0, :, :, :]
        x1 = xx[..., 0]
        out = dddp(x1)[..., None, None, None] * s[..., :, None, None]
        out = out + ddp(x1)[..., None, None, None] * (ds[..., :, :, None] + ds[..., :, None, :])
        out = out + dp(x1)[..., None, None, None] * dds
        return out

    return ZerothOrderFunctions(v0=v0, z0=z0, v0_dx=v0_dx, v0_dxx=v0_dxx,
                                z0_dx=z0_dx, z0_dxx=z0_dxx)
