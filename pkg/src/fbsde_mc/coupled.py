"""Estimators for forward-backward systems with feedback in the forward
coefficients.

The forward process keeps only its feedback-free coefficients; the feedback
enters through generator source terms assembled from the order-0 functions.
The first-order source G1 is an explicit function of (t, x) once the order-0
functions are known, so the first order reduces to a single-interaction
cascade driven by G1.  The second order mixes decoupled-style chain terms
with gradient and Hessian transports of the first-order value, carried by the
first-order flow Y and the two-index second-order flow of the free process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Optional

import numpy as np

from .cascade import EST_IDS, MonteCarloConfig, OrderEstimate, run_kernel
from .errors import ConfigurationError
from .model import DriverOnZeroth, ModelSpec, ZerothOrderFunctions
from .sde import simulate_batch

#: tags of the individually toggleable G1 / G2 contributions
G1_TERMS = frozenset({"driver", "mu_grad", "eta_hessian"})
G2_TERMS = frozenset({"f_chain", "mu_v1_grad", "mu_chain",
                      "eta_v1_hessian", "eta_eta", "eta_chain"})


@dataclass(frozen=True)
class CoupledSources:
    """First- and second-order generator sources of the feedback expansion.

    ``g1(t, x)`` evaluates the order-1 source; its x-partials are central
    finite differences of the assembled composite (the alternative needs
    third derivatives of the order-0 value function).  ``enabled_g1`` /
    ``enabled_g2`` toggle individual contributions for term-by-term testing.
    """

    model: ModelSpec
    z0f: ZerothOrderFunctions
    enabled_g1: FrozenSet[str] = G1_TERMS
    enabled_g2: FrozenSet[str] = G2_TERMS
    fd_scale: float = 1e-5

    def __post_init__(self):
        unknown = (self.enabled_g1 - G1_TERMS) | (self.enabled_g2 - G2_TERMS)
        if unknown:
            raise ConfigurationError(f"unknown source terms {sorted(unknown)}")

    # -- zeroth-order feedback coefficient fields -------------------------

    def _vz0(self, t, x):
        return self.z0f.v0(t, x), self.z0f.z0(t, x)

    def mu0(self, t, x) -> np.ndarray:
        if self.model.drift_feedback is None:
            return np.zeros_like(x)
        v, z = self._vz0(t, x)
        return np.asarray(self.model.drift_feedback(t, x, v, z), float)

    def eta0(self, t, x) -> np.ndarray:
        n, d = x.shape
        if self.model.vol_feedback is None:
            return np.zeros((n, d, self.model.dim_w))
        v, z = self._vz0(t, x)
        return np.asarray(self.model.vol_feedback(t, x, v, z), float)

    def eta_correction(self, t, x) -> np.ndarray:
        """The explicit part of the order-1 martingale component,
        d_i v0 eta^{i}_a, shape (n, r)."""
        v0dx = np.asarray(self.z0f.require("v0_dx")(t, x), float)
        return np.einsum("ni,nia->na", v0dx, self.eta0(t, x))

    # -- order-1 source ----------------------------------------------------

    def g1(self, t, x) -> np.ndarray:
        x = np.asarray(x, float)
        drv = DriverOnZeroth(self.model, self.z0f).at(t, x)
        out = np.zeros(x.shape[:-1])
        if "driver" in self.enabled_g1:
            out = out + drv.f()
        if "mu_grad" in self.enabled_g1 and self.model.drift_feedback is not None:
            v0dx = np.asarray(self.z0f.require("v0_dx")(t, x), float)
            out = out + np.einsum("ni,ni->n", v0dx, self.mu0(t, x))
        if "eta_hessian" in self.enabled_g1 and self.model.vol_feedback is not None:
            v0dxx = np.asarray(self.z0f.require("v0_dxx")(t, x), float)
            sig = np.asarray(self.model.vol_free(t, x), float)
            out = out + np.einsum("nij,nia,nja->n", v0dxx, sig, self.eta0(t, x))
        return out

    def _steps(self, x):
        return self.fd_scale * (1.0 + np.abs(x))

    def g1_dx(self, t, x) -> np.ndarray:
        x = np.asarray(x, float)
        h = self._steps(x)
        out = np.empty_like(x)
        for k in range(x.shape[-1]):
            e = np.zeros_like(x)
            e[..., k] = h[..., k]
            out[..., k] = (self.g1(t, x + e) - self.g1(t, x - e)) / (2.0 * h[..., k])
        return out

    def g1_dxx(self, t, x) -> np.ndarray:
        x = np.asarray(x, float)
        d = x.shape[-1]
        h = self._steps(x)
        out = np.empty(x.shape[:-1] + (d, d))
        f0 = self.g1(t, x)
        for k in range(d):
            ek = np.zeros_like(x)
            ek[..., k] = h[..., k]
            out[..., k, k] = (
                self.g1(t, x + ek) - 2.0 * f0 + self.g1(t, x - ek)
            ) / h[..., k] ** 2
            for l in range(k + 1, d):
                el = np.zeros_like(x)
                el[..., l] = h[..., l]
                mixed = (
                    self.g1(t, x + ek + el) - self.g1(t, x + ek - el)
                    - self.g1(t, x - ek + el) + self.g1(t, x - ek - el)
                ) / (4.0 * h[..., k] * h[..., l])
                out[..., k, l] = mixed
                out[..., l, k] = mixed
        return out

    # -- order-2 coefficient fields ---------------------------------------

    def chain_coeffs(self, t, x):
        """(A, B): multipliers of the order-1 value / martingale continuations.

        A collects the d_v parts of the enabled chain terms, B the d_z parts;
        shapes (n,) and (n, r).
        """
        x = np.asarray(x, float)
        n = x.shape[0]
        drv = DriverOnZeroth(self.model, self.z0f).at(t, x)
        A = np.zeros(n)
        B = np.zeros((n, self.model.dim_w))
        if "f_chain" in self.enabled_g2:
            A = A + drv.dv()
            B = B + drv.dz()
        if "mu_chain" in self.enabled_g2 and self.model.drift_feedback is not None:
            v, z = self._vz0(t, x)
            v0dx = np.asarray(self.z0f.require("v0_dx")(t, x), float)
            mu_dv = np.asarray(self.model.require("drift_feedback_dv")(t, x, v, z), float)
            mu_dz = np.asarray(self.model.require("drift_feedback_dz")(t, x, v, z), float)
            A = A + np.einsum("ni,ni->n", v0dx, mu_dv)
            B = B + np.einsum("ni,nia->na", v0dx, mu_dz)
        if "eta_chain" in self.enabled_g2 and self.model.vol_feedback is not None:
            v, z = self._vz0(t, x)
            v0dxx = np.asarray(self.z0f.require("v0_dxx")(t, x), float)
            sig = np.asarray(self.model.vol_free(t, x), float)
            eta_dv = np.asarray(self.model.require("vol_feedback_dv")(t, x, v, z), float)
            eta_dz = np.asarray(self.model.require("vol_feedback_dz")(t, x, v, z), float)
            A = A + np.einsum("nij,nia,nja->n", v0dxx, sig, eta_dv)
            B = B + np.einsum("nij,nia,njab->nb", v0dxx, sig, eta_dz)
        return A, B

    def explicit_g2(self, t, x) -> np.ndarray:
        """The G2 contribution that is an explicit function of x:
        (1/2) d_ij v0 (eta^i . eta^j)."""
        x = np.asarray(x, float)
        if "eta_eta" not in self.enabled_g2 or self.model.vol_feedback is None:
            return np.zeros(x.shape[:-1])
        v0dxx = np.asarray(self.z0f.require("v0_dxx")(t, x), float)
        eta = self.eta0(t, x)
        return 0.5 * np.einsum("nij,nia,nja->n", v0dxx, eta, eta)


def build_sources(model: ModelSpec, z0f: ZerothOrderFunctions,
                  enabled_g1: Optional[FrozenSet[str]] = None,
                  enabled_g2: Optional[FrozenSet[str]] = None) -> CoupledSources:
    """Assemble the generator sources, validating required order-0 partials."""
    if model.vol_feedback is not None:
        z0f.require("v0_dxx")
    if model.drift_feedback is not None or model.vol_feedback is not None:
        z0f.require("v0_dx")
    return CoupledSources(
        model=model, z0f=z0f,
        enabled_g1=frozenset(enabled_g1) if enabled_g1 is not None else G1_TERMS,
        enabled_g2=frozenset(enabled_g2) if enabled_g2 is not None else G2_TERMS,
    )


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def _draw(gen, lam, t, n, k):
    return t + np.cumsum(gen.exponential(scale=1.0 / lam, size=(n, k)), axis=1)


def estimate_v1_coupled(sources: CoupledSources, x_t,
                        cfg: MonteCarloConfig) -> OrderEstimate:
    """Single-interaction cascade of the free process weighted by G1."""
    model = sources.model

    def kernel(gen, n, x0):
        lam = cfg.intensity
        tau = _draw(gen, lam, cfg.t, n, 1)
        rec = simulate_batch(model, x0, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=tau, time_labels={"tau1": tau[:, 0]},
                             records=[("x", None, "tau1")])
        t1 = np.minimum(tau[:, 0], cfg.T)
        contrib = tau[:, 0] < cfg.T
        w1 = np.exp(lam * (t1 - cfg.t)) / lam
        vals = w1 * sources.g1(t1, rec[("x", None, "tau1")])
        return np.where(contrib, vals, 0.0), contrib

    mean, se, n, contrib = run_kernel(kernel, cfg, EST_IDS["cv1"],
                                      np.asarray(x_t, float))
    return OrderEstimate(order=1, component="V", value=mean, std_error=se,
                         n_particles=n, n_contributing=contrib)


def estimate_z1_coupled(sources: CoupledSources, x_t,
                        cfg: MonteCarloConfig) -> OrderEstimate:
    """Martingale component: flow-transported gradient of G1 plus the
    explicit d_i v0 eta^i correction (deterministic, zero standard error)."""
    model = sources.model
    x_t = np.asarray(x_t, float)

    def kernel(gen, n, x0):
        lam = cfg.intensity
        tau = _draw(gen, lam, cfg.t, n, 1)
        rec = simulate_batch(model, x0, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=tau, time_labels={"tau1": tau[:, 0]},
                             flow_anchors=["t"],
                             records=[("x", None, "tau1"), ("y", "t", "tau1")])
        t1 = np.minimum(tau[:, 0], cfg.T)
        contrib = tau[:, 0] < cfg.T
        w1 = np.exp(lam * (t1 - cfg.t)) / lam
        sigma_t = np.asarray(model.vol_free(cfg.t, x0[None, :]), float)[0]
        ys = np.einsum("nij,ja->nia", rec[("y", "t", "tau1")], sigma_t)
        g1dx = sources.g1_dx(t1, rec[("x", None, "tau1")])
        vals = np.einsum("nia,ni->na", ys, g1dx) * w1[:, None]
        vals[~contrib] = 0.0
        return vals, contrib

    mean, se, n, contrib = run_kernel(kernel, cfg, EST_IDS["cz1"], x_t,
                                      vec_len=model.dim_w)
    correction = sources.eta_correction(cfg.t, x_t[None, :])[0]
    return OrderEstimate(order=1, component="Z", value=mean + correction,
                         std_error=se, n_particles=n, n_contributing=contrib)


def estimate_v2_coupled(sources: CoupledSources, x_t,
                        cfg: MonteCarloConfig) -> OrderEstimate:
    """All G2 contributions on one two-interaction cascade.

    Chain terms multiply the re-based order-1 continuations; the mu term
    shifts through Y; the sigma.eta term transports the Hessian through the
    two-index second-order flow plus Y (x) Y; the eta.eta term and the
    explicit part of the order-1 martingale component need no continuation.
    """
    model = sources.model

    def kernel(gen, n, x0):
        lam = cfg.intensity
        taus = _draw(gen, lam, cfg.t, n, 2)
        rec = simulate_batch(model, x0, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=taus,
                             time_labels={"tau1": taus[:, 0], "tau2": taus[:, 1]},
                             flow_anchors=["tau1"],
                             coupled_flow_anchors=["tau1"],
                             records=[("x", None, "tau1"), ("x", None, "tau2"),
                                      ("y", "tau1", "tau2"),
                                      ("gc", "tau1", "tau2")])
        t1 = np.minimum(taus[:, 0], cfg.T)
        t2 = np.minimum(taus[:, 1], cfg.T)
        c1 = taus[:, 0] < cfg.T
        c2 = taus[:, 1] < cfg.T
        w1 = np.exp(lam * (t1 - cfg.t)) / lam
        w2 = np.exp(lam * (t2 - t1)) / lam
        x1 = rec[("x", None, "tau1")]
        x2 = rec[("x", None, "tau2")]
        Y = rec[("y", "tau1", "tau2")]
        GC = rec[("gc", "tau1", "tau2")]

        A, B = sources.chain_coeffs(t1, x1)
        sig1 = np.asarray(model.vol_free(t1, x1), float)
        g1_2 = sources.g1(t2, x2)
        g1dx = sources.g1_dx(t2, x2)
        g1dxx = sources.g1_dxx(t2, x2)

        # single-interaction pieces: explicit G2 source and the explicit part
        # of the order-1 martingale continuation hit by B
        single = sources.explicit_g2(t1, x1)
        single = single + np.einsum("na,na->n", B, sources.eta_correction(t1, x1))
        vals = np.where(c1, w1 * single, 0.0)

        double = A * g1_2
        ysig = np.einsum("nij,nja->nia", Y, sig1)
        double += np.einsum("na,nia,ni->n", B, ysig, g1dx)
        if "mu_v1_grad" in sources.enabled_g2 and model.drift_feedback is not None:
            mu1 = sources.mu0(t1, x1)
            double += np.einsum("ni,nji,nj->n", mu1, Y, g1dx)
        if "eta_v1_hessian" in sources.enabled_g2 and model.vol_feedback is not None:
            se_field = np.einsum("nia,nja->nij", sig1, sources.eta0(t1, x1))
            double += np.einsum("nij,nkij,nk->n", se_field, GC, g1dx)
            double += np.einsum("nij,nki,nlj,nkl->n", se_field, Y, Y, g1dxx)
        vals = vals + np.where(c2, w1 * w2 * double, 0.0)
        return vals, c2

    mean, se, n, contrib = run_kernel(kernel, cfg, EST_IDS["cv2"],
                                      np.asarray(x_t, float))
    return OrderEstimate(order=2, component="V", value=mean, std_error=se,
                         n_particles=n, n_contributing=contrib)
