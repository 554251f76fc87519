"""Deterministic reference solvers for validating the particle estimators.

Four independent routes: a 1-D semilinear PDE solved by Crank-Nicolson with
Picard iteration on the nonlinearity, an ODE reduction for spatially constant
problems, direct time-quadrature of the order-1 convolution representation,
and common-random-number bump checks of the martingale components.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .cascade import KERNELS, EST_IDS, MonteCarloConfig, OrderEstimate, _NS
from .errors import ConfigurationError, OracleFailure
from .model import ModelSpec, ZerothOrderFunctions


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time grid for the 1-D PDE oracle."""

    x_min: float
    x_max: float
    n_space: int
    n_time: int
    boundary: str = "linear"  # or "dirichlet"

    def __post_init__(self):
        if self.n_space < 3:
            raise ConfigurationError("n_space must be >= 3")
        if self.n_time < 1:
            raise ConfigurationError("n_time must be >= 1")
        if not self.x_min < self.x_max:
            raise ConfigurationError("need x_min < x_max")
        if self.boundary not in ("linear", "dirichlet"):
            raise ConfigurationError("boundary must be 'linear' or 'dirichlet'")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_space)


@dataclass
class PdeSurface:
    """Backward value surface v(t, x) on a uniform grid."""

    ts: np.ndarray          # (n_time + 1,)
    xs: np.ndarray          # (n_space,)
    v: np.ndarray           # (n_time + 1, n_space)
    sigma_diag: np.ndarray  # sigma(x) sampled on xs, for z = sigma dv/dx

    def value(self, t: float, x: float) -> float:
        vt = self._slice(t)
        return float(np.interp(x, self.xs, vt))

    def z_value(self, t: float, x: float) -> float:
        vt = self._slice(t)
        dv = np.gradient(vt, self.xs)
        return float(np.interp(x, self.xs, self.sigma_diag * dv))

    def _slice(self, t: float) -> np.ndarray:
        ts = self.ts
        if t <= ts[0]:
            return self.v[0]
        if t >= ts[-1]:
            return self.v[-1]
        j = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.v[j] + w * self.v[j + 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "v"])
            for i, t in enumerate(self.ts):
                for j, x in enumerate(self.xs):
                    writer.writerow([repr(float(t)), repr(float(x)),
                                     repr(float(self.v[i, j]))])


def solve_semilinear_pde(model: ModelSpec, grid: Grid1D, epsilon: float = 1.0,
                         t0: float = 0.0, T: Optional[float] = None,
                         tol: float = 1e-10, max_picard: int = 50) -> PdeSurface:
    """Crank-Nicolson solve of the 1-D backward semilinear equation

        dv/dt + r dv/dx + (1/2) sigma^2 d2v/dx2 + eps f(t, x, v, sigma dv/dx) = 0

    with terminal data from the model payoff.  The nonlinearity is frozen by
    Picard iteration within each step until successive iterates differ by
    less than ``tol``; the boundary either extrapolates linearly or pins the
    payoff values.
    """
    if model.dim_x != 1 or model.dim_w != 1:
        raise ConfigurationError("the PDE oracle is one-dimensional")
    if T is None:
        T = model.horizon
    xs = grid.xs
    dx = xs[1] - xs[0]
    ts = np.linspace(t0, T, grid.n_time + 1)
    dt = ts[1] - ts[0]
    xcol = xs[:, None]

    def coeffs(t):
        r = np.asarray(model.drift_free(t, xcol), float)[:, 0]
        s = np.asarray(model.vol_free(t, xcol), float)[:, 0, 0]
        return r, s

    def driver(t, v, s):
        dv = np.gradient(v, xs)
        z = (s * dv)[:, None]
        return np.asarray(model.driver(t, xcol, v, z), float)

    n = grid.n_space
    v = np.asarray(model.terminal(xcol), float).astype(float).copy()
    surface = np.empty((grid.n_time + 1, n))
    surface[-1] = v
    payoff_lo = v[0]
    payoff_hi = v[-1]

    for m in range(grid.n_time - 1, -1, -1):
        t_new, t_old = ts[m], ts[m + 1]
        r_new, s_new = coeffs(t_new)
        r_old, s_old = coeffs(t_old)

        def lop(r, s, u):
            out = np.zeros_like(u)
            out[1:-1] = (r[1:-1] * (u[2:] - u[:-2]) / (2.0 * dx)
                         + 0.5 * s[1:-1] ** 2 * (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx ** 2)
            return out

        f_old = driver(t_old, v, s_old)
        explicit = v + 0.5 * dt * lop(r_old, s_old, v) + 0.5 * dt * epsilon * f_old

        # interior tridiagonal for (I - dt/2 A_new)
        a = r_new[1:-1] / (2.0 * dx)
        b = 0.5 * s_new[1:-1] ** 2 / dx ** 2
        lower = -0.5 * dt * (b - a)     # coefficient of u_{i-1}
        diag = 1.0 + dt * b             # coefficient of u_i
        upper = -0.5 * dt * (b + a)     # coefficient of u_{i+1}
        if grid.boundary == "linear":
            # eliminate the boundary unknowns via u_0 = 2u_1 - u_2 (and the
            # mirror relation at the top) so Picard only sees the driver
            diag = diag.copy()
            upper = upper.copy()
            lower = lower.copy()
            diag[0] += 2.0 * lower[0]
            upper[0] -= lower[0]
            lower[0] = 0.0
            diag[-1] += 2.0 * upper[-1]
            lower[-1] -= upper[-1]
            upper[-1] = 0.0
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = upper[:-1]
        ab[1, :] = diag
        ab[2, :-1] = lower[1:]

        w = v.copy()
        converged = False
        for _ in range(max_picard):
            f_new = driver(t_new, w, s_new)
            rhs = (explicit[1:-1] + 0.5 * dt * epsilon * f_new[1:-1]).copy()
            if grid.boundary == "dirichlet":
                rhs[0] -= lower[0] * payoff_lo
                rhs[-1] -= upper[-1] * payoff_hi
            if not np.all(np.isfinite(rhs)):
                raise OracleFailure(
                    f"Picard iteration diverged at time step {m}"
                )
            w_new = np.empty_like(w)
            w_new[1:-1] = solve_banded((1, 1), ab, rhs)
            if grid.boundary == "dirichlet":
                w_new[0], w_new[-1] = payoff_lo, payoff_hi
            else:
                w_new[0] = 2.0 * w_new[1] - w_new[2]
                w_new[-1] = 2.0 * w_new[-2] - w_new[-3]
            delta = float(np.max(np.abs(w_new - w)))
            w = w_new
            if delta < tol:
                converged = True
                break
        if not converged:
            raise OracleFailure(
                f"Picard iteration failed to converge at time step {m}"
            )
        v = w
        surface[m] = v

    _, s0 = coeffs(ts[0])
    return PdeSurface(ts=ts, xs=xs, v=surface, sigma_diag=s0)


# ---------------------------------------------------------------------------
# ODE reduction for spatially constant problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OdeReduction:
    exact: float
    coefficients: tuple  # V^(0) .. V^(k)
    epsilon: float
    horizon: float


def ode_reduction(fv: Callable[[float], float], psi_const: float,
                  horizon: float, epsilon: float = 1.0, orders: int = 3,
                  fv_d1: Optional[Callable] = None,
                  fv_d2: Optional[Callable] = None) -> OdeReduction:
    """Exact value and expansion coefficients of dv/du = eps fv(v), v(0)=psi.

    When the terminal condition is constant and the driver depends on v only,
    the backward equation loses its spatial operator and collapses to this
    scalar ODE in time-to-maturity.  Derivatives of fv default to central
    finite differences; pass analytic callbacks for tight tolerances.
    """
    if orders < 0 or orders > 3:
        raise ConfigurationError("orders must be between 0 and 3")
    if horizon < 0:
        raise ConfigurationError("horizon must be nonnegative")

    if fv_d1 is None:
        h = 1e-6 * (1.0 + abs(psi_const))
        fv_d1 = lambda v: (fv(v + h) - fv(v - h)) / (2.0 * h)
    if fv_d2 is None:
        h = 1e-4 * (1.0 + abs(psi_const))
        fv_d2 = lambda v: (fv(v + h) - 2.0 * fv(v) + fv(v - h)) / h ** 2

    u = horizon
    f0 = fv(psi_const)
    f1 = fv_d1(psi_const)
    f2 = fv_d2(psi_const)
    coeffs = [float(psi_const), f0 * u, f1 * f0 * u ** 2 / 2.0,
              (f1 ** 2 * f0 + f2 * f0 ** 2) * u ** 3 / 6.0]
    coeffs = tuple(coeffs[: orders + 1])

    if horizon == 0.0:
        return OdeReduction(exact=float(psi_const), coefficients=coeffs,
                            epsilon=epsilon, horizon=horizon)

    sol = solve_ivp(lambda s, y: epsilon * fv(y[0]), (0.0, horizon),
                    [float(psi_const)], method="DOP853",
                    rtol=1e-12, atol=1e-12)
    if not sol.success or sol.t[-1] < horizon or not np.isfinite(sol.y[0, -1]):
        raise OracleFailure(
            f"finite-time explosion before u={horizon} (reached u={sol.t[-1]})"
        )
    return OdeReduction(exact=float(sol.y[0, -1]), coefficients=coeffs,
                        epsilon=epsilon, horizon=horizon)


# ---------------------------------------------------------------------------
# order-1 time quadrature
# ---------------------------------------------------------------------------


def quadrature_v1(model: ModelSpec, z0f: ZerothOrderFunctions, x_t,
                  t: float = 0.0, T: Optional[float] = None,
                  n_nodes: int = 40, allow_mc: bool = False,
                  mc_paths: int = 200_000, mc_step: Optional[float] = None,
                  seed: int = 0) -> float:
    """Gauss-Legendre quadrature of int_t^T E[f(u, X_u, v0, z0)] du.

    Uses the model's closed-form inner expectation when available, else falls
    back to plain Monte Carlo per node if ``allow_mc``.
    """
    if T is None:
        T = model.horizon
    x_t = np.asarray(x_t, float)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    us = 0.5 * (T - t) * (nodes + 1.0) + t
    ws = 0.5 * (T - t) * weights

    if model.mean_driver is not None:
        vals = [float(model.mean_driver(t, u, x_t)) for u in us]
        return float(np.dot(ws, vals))
    if not allow_mc:
        raise OracleFailure(
            "model has no closed-form mean driver and the Monte Carlo "
            "fallback is disabled"
        )
    from .sde import simulate_batch

    if mc_step is None:
        mc_step = (T - t) / 200.0
    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_NS, 98)))
    vals = []
    for u in us:
        if u <= t:
            xs = np.broadcast_to(x_t, (1, model.dim_x))
        else:
            rec = simulate_batch(model, x_t, t, u, mc_step, gen,
                                 insert_times=np.empty((mc_paths, 0)),
                                 time_labels={}, records=[("x", None, "T")])
            xs = rec[("x", None, "T")]
        v = np.asarray(z0f.v0(u, xs), float)
        z = np.asarray(z0f.z0(u, xs), float)
        vals.append(float(np.mean(np.asarray(model.driver(u, xs, v, z), float))))
    return float(np.dot(ws, vals))


# ---------------------------------------------------------------------------
# flow-transport vs bump-and-revalue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientReport:
    estimator: str
    z_value: float
    bump_value: float
    z_std_error: float
    bump_std_error: float
    difference: float
    combined_se: float
    passed: bool


def check_gradient_vs_bump(name: str, model: ModelSpec,
                           z0f: ZerothOrderFunctions, x_t,
                           cfg: MonteCarloConfig, h: float,
                           n: int = 50_000, se_mult: float = 3.0) -> GradientReport:
    """Compare a martingale estimator against sigma_t times the bumped value
    estimator, using common random numbers and per-cascade paired differences.

    ``name`` is the value-cascade name ("v1" or "v2"); the matching
    martingale cascade is run on the same seed layout.  One-dimensional only.
    """
    if model.dim_x != 1 or model.dim_w != 1:
        raise ConfigurationError("gradient checks are one-dimensional")
    z_name = {"v1": "z1", "v2": "z2"}.get(name)
    if z_name is None:
        raise ConfigurationError(f"no martingale counterpart for {name!r}")
    x_t = np.asarray(x_t, float)
    sigma_t = float(np.asarray(model.vol_free(cfg.t, x_t[None, :]), float)[0, 0, 0])

    def run(kernel_name, x0):
        kernel = KERNELS[kernel_name](model, z0f, cfg)
        gen = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(_NS, 97, EST_IDS[kernel_name]))
        )
        vals, _ = kernel(gen, n, x0)
        return np.asarray(vals, float)

    up = run(name, x_t + h)
    dn = run(name, x_t - h)
    slopes = sigma_t * (up - dn) / (2.0 * h)
    bump_value = float(np.mean(slopes))
    bump_se = float(np.std(slopes, ddof=1) / np.sqrt(n))

    zvals = run(z_name, x_t)[:, 0]
    z_value = float(np.mean(zvals))
    z_se = float(np.std(zvals, ddof=1) / np.sqrt(n))

    diff = z_value - bump_value
    combined = float(np.hypot(z_se, bump_se))
    passed = abs(diff) <= se_mult * max(combined, 1e-15)
    return GradientReport(estimator=name, z_value=z_value, bump_value=bump_value,
                          z_std_error=z_se, bump_std_error=bump_se,
                          difference=diff, combined_se=combined, passed=passed)
