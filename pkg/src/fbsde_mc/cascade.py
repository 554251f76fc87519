"""Decoupled-case particle estimators.

Each expansion order is one interacting-particle cascade: exponential
interaction times convert the time-convolution representations into single
expectations via the ``exp(lambda (s-t)) / lambda`` reweighting, and stochastic
flows transport the martingale components.  Kernels produce one value per
cascade; the generic runner partitions the particle budget across workers with
deterministic per-partition streams and reduces (count, sum, sum-of-squares)
accumulators in fixed order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError
from .model import DriverOnZeroth, ModelSpec, ZerothOrderFunctions
from .sde import RngStream, simulate_batch

Value = Union[float, np.ndarray]

# namespace tag separating estimator streams from any other RNG use
_NS = 0x0E57

EST_IDS = {
    "v0": 0, "z0": 1, "v1": 2, "z1": 3, "v2": 4, "z2": 5,
    "v3_first": 6, "v3_second": 7,
    "cv1": 8, "cz1": 9, "cv2": 10,
}


@dataclass(frozen=True)
class MonteCarloConfig:
    """Runtime knobs shared by every estimator."""

    t: float
    T: float
    n_particles: int
    lam: Optional[float] = None      # default 2 / (T - t)
    base_step: Optional[float] = None  # default (T - t) / 200
    seed: int = 0
    workers: int = 1
    chunk_size: int = 1 << 16

    def __post_init__(self):
        if not self.t < self.T:
            raise ConfigurationError(f"need t < T, got t={self.t}, T={self.T}")
        if self.n_particles < 1:
            raise ConfigurationError("n_particles must be positive")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")
        if self.lam is not None and not self.lam > 0:
            raise ConfigurationError("lambda must be positive")
        if self.base_step is not None and not self.base_step > 0:
            raise ConfigurationError("base_step must be positive")

    @property
    def intensity(self) -> float:
        return self.lam if self.lam is not None else 2.0 / (self.T - self.t)

    @property
    def step(self) -> float:
        return self.base_step if self.base_step is not None else (self.T - self.t) / 200.0


@dataclass(frozen=True)
class InteractionSchedule:
    """Ordered Poisson interaction times on (t, T] with their horizon flags."""

    taus: np.ndarray
    intensity: float
    t: float
    T: float

    @property
    def in_horizon(self) -> np.ndarray:
        # tau == T counts as outside (measure-zero tie-break)
        return self.taus < self.T


@dataclass(frozen=True)
class OrderEstimate:
    order: int
    component: str  # "V" or "Z"
    value: Value
    std_error: Value
    n_particles: int
    n_contributing: int


@dataclass(frozen=True)
class ExpansionResult:
    estimates: Tuple[OrderEstimate, ...]
    epsilon: float
    total_v: float
    total_v_se: float
    total_z: Optional[np.ndarray]
    total_z_se: Optional[np.ndarray]


def sample_interactions(lam: float, t: float, T: float, rng: RngStream,
                        needed: int = 1) -> InteractionSchedule:
    """First ``needed`` interaction times of a Poisson process started at t."""
    if not lam > 0:
        raise ConfigurationError("intensity lambda must be positive")
    if needed < 1:
        raise ConfigurationError("needed must be >= 1")
    gen = rng.generator()
    taus = t + np.cumsum(gen.exponential(scale=1.0 / lam, size=needed))
    return InteractionSchedule(taus=taus, intensity=lam, t=t, T=T)


def weight_fhat(lam: float, t: float, s, raw):
    """Poisson reweighting: raw * exp(lam (s - t)) / lam for constant lam."""
    if not lam > 0:
        raise ConfigurationError("intensity lambda must be positive")
    s = np.asarray(s, float)
    if np.any(s < t):
        raise ConfigurationError("weight requires s >= t")
    return np.asarray(raw) * np.exp(lam * (s - t)) / lam


# ---------------------------------------------------------------------------
# generic budget runner
# ---------------------------------------------------------------------------


def _partition(total: int, workers: int) -> List[int]:
    base, extra = divmod(total, workers)
    return [base + (1 if i < extra else 0) for i in range(workers)]


def run_kernel(kernel: Callable, cfg: MonteCarloConfig, est_id: int, x_t,
               vec_len: int = 0):
    """Partitioned, order-independent aggregation of a cascade kernel.

    ``kernel(gen, n, x_t) -> (values, contributing)`` where values has shape
    (n,) or (n, vec_len).  Returns (mean, std_error, n, n_contributing).
    """
    parts = _partition(cfg.n_particles, cfg.workers)
    shape = (vec_len,) if vec_len else ()

    def one(pi: int, pn: int):
        gen = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(_NS, est_id, pi))
        )
        total = np.zeros(shape)
        ssq = np.zeros(shape)
        count = 0
        contrib = 0
        done = 0
        while done < pn:
            m = min(cfg.chunk_size, pn - done)
            vals, c = kernel(gen, m, x_t)
            vals = np.asarray(vals, float)
            total += vals.sum(axis=0)
            ssq += (vals * vals).sum(axis=0)
            count += m
            contrib += int(np.count_nonzero(c))
            done += m
        return count, total, ssq, contrib

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(one, pi, pn) for pi, pn in enumerate(parts) if pn]
            results = [f.result() for f in futures]
    else:
        results = [one(pi, pn) for pi, pn in enumerate(parts) if pn]

    count = 0
    total = np.zeros(shape)
    ssq = np.zeros(shape)
    contrib = 0
    for c, s, q, nc in results:  # fixed partition order
        count += c
        total = total + s
        ssq = ssq + q
        contrib += nc
    mean = total / count
    if count > 1:
        var = np.maximum(ssq - count * mean * mean, 0.0) / (count - 1)
        se = np.sqrt(var / count)
    else:
        se = np.zeros(shape)
    if not vec_len:
        mean = float(mean)
        se = float(se)
    return mean, se, count, contrib


# ---------------------------------------------------------------------------
# cascade kernels
# ---------------------------------------------------------------------------


def _weights(lam, *segments):
    """exp(lam * seg) / lam per segment; segments are clipped time differences."""
    return [np.exp(lam * seg) / lam for seg in segments]


def _draw_sequential(gen, lam, t, n, k):
    return t + np.cumsum(gen.exponential(scale=1.0 / lam, size=(n, k)), axis=1)


def _k_v0(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    def kernel(gen, n, x_t):
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=np.empty((n, 0)), time_labels={},
                             records=[("x", None, "T")])
        vals = np.asarray(model.terminal(rec[("x", None, "T")]), float)
        return vals, np.ones(n, bool)

    return kernel


def _k_z0(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    model.require("terminal_dx")

    def kernel(gen, n, x_t):
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=np.empty((n, 0)), time_labels={},
                             flow_anchors=["t"],
                             records=[("x", None, "T"), ("y", "t", "T")])
        xT = rec[("x", None, "T")]
        gamma_t = np.asarray(model.vol_free(cfg.t, np.asarray(x_t, float)[None, :]), float)[0]
        dpsi = np.asarray(model.terminal_dx(xT), float)
        yg = np.einsum("nij,ja->nia", rec[("y", "t", "T")], gamma_t)
        vals = np.einsum("ni,nia->na", dpsi, yg)
        return vals, np.ones(n, bool)

    return kernel


def _k_v1(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        tau = _draw_sequential(gen, lam, cfg.t, n, 1)
        labels = {"tau1": tau[:, 0]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=tau, time_labels=labels,
                             records=[("x", None, "tau1")])
        t1 = np.minimum(tau[:, 0], cfg.T)
        contrib = tau[:, 0] < cfg.T
        (w1,) = _weights(lam, t1 - cfg.t)
        f = drv.at(t1, rec[("x", None, "tau1")]).f()
        return np.where(contrib, w1 * f, 0.0), contrib

    return kernel


def _k_z1(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        tau = _draw_sequential(gen, lam, cfg.t, n, 1)
        labels = {"tau1": tau[:, 0]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=tau, time_labels=labels,
                             flow_anchors=["t"],
                             records=[("x", None, "tau1"), ("y", "t", "tau1")])
        t1 = np.minimum(tau[:, 0], cfg.T)
        contrib = tau[:, 0] < cfg.T
        (w1,) = _weights(lam, t1 - cfg.t)
        gamma_t = np.asarray(model.vol_free(cfg.t, np.asarray(x_t, float)[None, :]), float)[0]
        yg = np.einsum("nij,ja->nia", rec[("y", "t", "tau1")], gamma_t)
        nab = drv.at(t1, rec[("x", None, "tau1")]).nabla()
        vals = np.einsum("nia,ni->na", yg, nab) * w1[:, None]
        vals[~contrib] = 0.0
        return vals, contrib

    return kernel


def _k_v2(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        taus = _draw_sequential(gen, lam, cfg.t, n, 2)
        labels = {"tau1": taus[:, 0], "tau2": taus[:, 1]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=taus, time_labels=labels,
                             flow_anchors=["tau1"],
                             records=[("x", None, "tau1"), ("x", None, "tau2"),
                                      ("y", "tau1", "tau2")])
        t1 = np.minimum(taus[:, 0], cfg.T)
        t2 = np.minimum(taus[:, 1], cfg.T)
        contrib = taus[:, 1] < cfg.T
        w1, w2 = _weights(lam, t1 - cfg.t, t2 - t1)
        x1 = rec[("x", None, "tau1")]
        x2 = rec[("x", None, "tau2")]
        d1 = drv.at(t1, x1)
        d2 = drv.at(t2, x2)
        gamma1 = np.asarray(model.vol_free(t1, x1), float)
        y12g = np.einsum("nij,nja->nia", rec[("y", "tau1", "tau2")], gamma1)
        term_v = d1.dv() * d2.f()
        term_z = np.einsum("na,nia,ni->n", d1.dz(), y12g, d2.nabla())
        vals = np.where(contrib, w1 * w2 * (term_v + term_z), 0.0)
        return vals, contrib

    return kernel


def _z2_terms(dA, dB, gamma_anchor, gamma_A, dgamma_A,
              Y_anchor_A, Y_anchor_B, Y_A_B, Gamma) -> np.ndarray:
    """Six-term martingale integrand of the two-interaction cascade, (n, r).

    ``anchor`` is where the Malliavin derivative is taken, ``A``/``B`` the
    first/second interaction.  Weights are applied by the caller.
    """
    nv = dA.nabla_dv()
    nz = dA.nabla_dz()
    dvA = dA.dv()
    dzA = dA.dz()
    fB = dB.f()
    nB = dB.nabla()
    HB = dB.hessian()
    YAg = np.einsum("nij,nja->nia", Y_anchor_A, gamma_anchor)
    YBg = np.einsum("nij,nja->nia", Y_anchor_B, gamma_anchor)
    YABg = np.einsum("nij,nja->nia", Y_A_B, gamma_A)
    out = np.einsum("nia,ni->na", YAg, nv) * fB[:, None]
    out += np.einsum("nia,nib,njb,nj->na", YAg, nz, YABg, nB)
    out += dvA[:, None] * np.einsum("nia,ni->na", YBg, nB)
    out += np.einsum("nimj,nma,njb,nb,ni->na", Gamma, gamma_anchor, gamma_A, dzA, nB)
    out += np.einsum("nja,nkbj,nb,nik,ni->na", YAg, dgamma_A, dzA, Y_A_B, nB)
    out += np.einsum("nja,nib,nb,nji->na", YBg, YABg, dzA, HB)
    return out


def _k_z2(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        taus = _draw_sequential(gen, lam, cfg.t, n, 2)
        labels = {"tau1": taus[:, 0], "tau2": taus[:, 1]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=taus, time_labels=labels,
                             flow_anchors=["t", "tau1"],
                             second_flow_anchors=[("t", "tau1")],
                             records=[("x", None, "tau1"), ("x", None, "tau2"),
                                      ("y", "t", "tau1"), ("y", "t", "tau2"),
                                      ("y", "tau1", "tau2"),
                                      ("g", ("t", "tau1"), "tau2")])
        t1 = np.minimum(taus[:, 0], cfg.T)
        t2 = np.minimum(taus[:, 1], cfg.T)
        contrib = taus[:, 1] < cfg.T
        w1, w2 = _weights(lam, t1 - cfg.t, t2 - t1)
        x1 = rec[("x", None, "tau1")]
        x2 = rec[("x", None, "tau2")]
        gamma_t = np.asarray(model.vol_free(cfg.t, np.asarray(x_t, float)[None, :]), float)[0]
        gamma_t = np.broadcast_to(gamma_t, (n,) + gamma_t.shape)
        gamma1 = np.asarray(model.vol_free(t1, x1), float)
        dgamma1 = np.asarray(model.require("vol_free_dx")(t1, x1), float)
        vals = _z2_terms(
            drv.at(t1, x1), drv.at(t2, x2),
            gamma_anchor=gamma_t, gamma_A=gamma1, dgamma_A=dgamma1,
            Y_anchor_A=rec[("y", "t", "tau1")],
            Y_anchor_B=rec[("y", "t", "tau2")],
            Y_A_B=rec[("y", "tau1", "tau2")],
            Gamma=rec[("g", ("t", "tau1"), "tau2")],
        )
        vals = vals * (w1 * w2)[:, None]
        vals[~contrib] = 0.0
        return vals, contrib

    return kernel


def _k_v3_first(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        taus = _draw_sequential(gen, lam, cfg.t, n, 3)
        labels = {"tau1": taus[:, 0], "tau2": taus[:, 1], "tau3": taus[:, 2]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=taus, time_labels=labels,
                             flow_anchors=["tau1", "tau2"],
                             second_flow_anchors=[("tau1", "tau2")],
                             records=[("x", None, "tau1"), ("x", None, "tau2"),
                                      ("x", None, "tau3"),
                                      ("y", "tau1", "tau2"), ("y", "tau1", "tau3"),
                                      ("y", "tau2", "tau3"),
                                      ("g", ("tau1", "tau2"), "tau3")])
        t1 = np.minimum(taus[:, 0], cfg.T)
        t2 = np.minimum(taus[:, 1], cfg.T)
        t3 = np.minimum(taus[:, 2], cfg.T)
        contrib = taus[:, 2] < cfg.T
        w1, w2, w3 = _weights(lam, t1 - cfg.t, t2 - t1, t3 - t2)
        x1 = rec[("x", None, "tau1")]
        x2 = rec[("x", None, "tau2")]
        x3 = rec[("x", None, "tau3")]
        d1 = drv.at(t1, x1)
        d2 = drv.at(t2, x2)
        d3 = drv.at(t3, x3)
        gamma1 = np.asarray(model.vol_free(t1, x1), float)
        gamma2 = np.asarray(model.vol_free(t2, x2), float)
        dgamma2 = np.asarray(model.require("vol_free_dx")(t2, x2), float)

        # d_v branch: the two-interaction value cascade re-based at tau1
        y23g2 = np.einsum("nij,nja->nia", rec[("y", "tau2", "tau3")], gamma2)
        v2part = d2.dv() * d3.f() + np.einsum("na,nia,ni->n", d2.dz(), y23g2, d3.nabla())

        # d_z branch: the six-term martingale cascade re-based at tau1
        z2vec = _z2_terms(
            d2, d3,
            gamma_anchor=gamma1, gamma_A=gamma2, dgamma_A=dgamma2,
            Y_anchor_A=rec[("y", "tau1", "tau2")],
            Y_anchor_B=rec[("y", "tau1", "tau3")],
            Y_A_B=rec[("y", "tau2", "tau3")],
            Gamma=rec[("g", ("tau1", "tau2"), "tau3")],
        )
        vals = w1 * w2 * w3 * (
            d1.dv() * v2part + np.einsum("na,na->n", d1.dz(), z2vec)
        )
        return np.where(contrib, vals, 0.0), contrib

    return kernel


def _k_v3_second(model: ModelSpec, z0f: ZerothOrderFunctions, cfg: MonteCarloConfig):
    drv = DriverOnZeroth(model, z0f)

    def kernel(gen, n, x_t):
        lam = cfg.intensity
        e1 = gen.exponential(scale=1.0 / lam, size=(n, 1))
        tau1 = cfg.t + e1[:, 0]
        tau2p = tau1[:, None] + gen.exponential(scale=1.0 / lam, size=(n, 2))
        inserts = np.concatenate([tau1[:, None], tau2p], axis=1)
        labels = {"tau1": tau1, "b0": tau2p[:, 0], "b1": tau2p[:, 1]}
        rec = simulate_batch(model, x_t, cfg.t, cfg.T, cfg.step, gen,
                             insert_times=inserts, time_labels=labels,
                             records=[("x", None, "tau1"),
                                      ("xb", 0, "b0"), ("xb", 1, "b1"),
                                      ("yb", 0, "b0"), ("yb", 1, "b1")],
                             branch_anchor="tau1", branch_targets=["b0", "b1"])
        t1 = np.minimum(tau1, cfg.T)
        w1 = np.exp(lam * (t1 - cfg.t)) / lam
        x1 = rec[("x", None, "tau1")]
        d1 = drv.at(t1, x1)
        gamma1 = np.asarray(model.vol_free(t1, x1), float)

        F = []
        Gz = []
        for p, lbl in enumerate(("b0", "b1")):
            tp = np.minimum(tau2p[:, p], cfg.T)
            ind = tau2p[:, p] < cfg.T
            wp = np.exp(lam * (tp - t1)) / lam
            dp = drv.at(tp, rec[("xb", p, lbl)])
            ypg = np.einsum("nij,nja->nia", rec[("yb", p, lbl)], gamma1)
            F.append(np.where(ind, wp * dp.f(), 0.0))
            gz = np.einsum("nia,ni->na", ypg, dp.nabla()) * wp[:, None]
            gz[~ind] = 0.0
            Gz.append(gz)

        vals = 0.5 * d1.dvv() * F[0] * F[1]
        vals += np.einsum("na,na->n", d1.dvz(), Gz[1]) * F[0]
        vals += 0.5 * np.einsum("na,nab,nb->n", Gz[0], d1.dzz(), Gz[1])
        vals = np.where(tau1 < cfg.T, w1 * vals, 0.0)
        return vals, tau1 < cfg.T

    return kernel


KERNELS = {
    "v0": _k_v0, "z0": _k_z0, "v1": _k_v1, "z1": _k_z1,
    "v2": _k_v2, "z2": _k_z2,
    "v3_first": _k_v3_first, "v3_second": _k_v3_second,
}


def raw_values(name: str, model: ModelSpec, z0f: ZerothOrderFunctions, x_t,
               cfg: MonteCarloConfig, n: int, gen=None):
    """Per-cascade values of one kernel, for tests and paired-bump oracles."""
    kernel = KERNELS[name](model, z0f, cfg)
    if gen is None:
        gen = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(_NS, EST_IDS.get(name, 99), 0))
        )
    return kernel(gen, n, np.asarray(x_t, float))


def _estimate(name: str, order: int, component: str, vec: bool,
              model: ModelSpec, z0f: ZerothOrderFunctions, x_t,
              cfg: MonteCarloConfig) -> OrderEstimate:
    kernel = KERNELS[name](model, z0f, cfg)
    vec_len = model.dim_w if vec else 0
    mean, se, n, contrib = run_kernel(kernel, cfg, EST_IDS[name],
                                      np.asarray(x_t, float), vec_len)
    return OrderEstimate(order=order, component=component, value=mean,
                         std_error=se, n_particles=n, n_contributing=contrib)


def estimate_v0(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Plain Monte Carlo of the terminal payoff."""
    return _estimate("v0", 0, "V", False, model, z0f, x_t, cfg)


def estimate_z0(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Plain Monte Carlo of d_i Psi(X_T) (Y_{tT} gamma(x_t))^i_a."""
    return _estimate("z0", 0, "Z", True, model, z0f, x_t, cfg)


def estimate_v1(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Single-interaction value cascade: 1_{tau<T} fhat_t(X_tau, v0, z0)."""
    return _estimate("v1", 1, "V", False, model, z0f, x_t, cfg)


def estimate_z1(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """(X, Y) pair annihilating at tau with the chained-gradient payoff."""
    return _estimate("z1", 1, "Z", True, model, z0f, x_t, cfg)


def estimate_v2(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Two-interaction cascade; the second fhat re-bases its weight at tau1."""
    return _estimate("v2", 2, "V", False, model, z0f, x_t, cfg)


def estimate_z2(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Six-term two-interaction martingale cascade with the second-order flow."""
    return _estimate("z2", 2, "Z", True, model, z0f, x_t, cfg)


def estimate_v3(model, z0f, x_t, cfg: MonteCarloConfig) -> OrderEstimate:
    """Both halves of the order-3 value term.

    The sequential half reuses the martingale cascade re-based at tau1; the
    branching half spawns two independent sub-systems at tau1.  Each half gets
    the full particle budget on its own stream; the halves add and their
    variances propagate independently.
    """
    first = _estimate("v3_first", 3, "V", False, model, z0f, x_t, cfg)
    second = _estimate("v3_second", 3, "V", False, model, z0f, x_t, cfg)
    return OrderEstimate(
        order=3, component="V",
        value=first.value + second.value,
        std_error=float(np.hypot(first.std_error, second.std_error)),
        n_particles=cfg.n_particles,
        n_contributing=first.n_contributing,
    )


def combine_orders(estimates: Sequence[OrderEstimate], epsilon: float = 1.0) -> ExpansionResult:
    """Epsilon-weighted totals with propagated standard errors."""
    seen = set()
    for est in estimates:
        key = (est.order, est.component)
        if key in seen:
            raise ConfigurationError(f"duplicate estimate for order {key}")
        seen.add(key)
    v_est = sorted((e for e in estimates if e.component == "V"), key=lambda e: e.order)
    z_est = sorted((e for e in estimates if e.component == "Z"), key=lambda e: e.order)
    if not any(e.order == 0 for e in v_est) and not any(e.order == 0 for e in z_est):
        raise ConfigurationError("at least the order-0 estimate is required")

    total_v = sum(epsilon ** e.order * e.value for e in v_est)
    total_v_se = float(np.sqrt(sum((epsilon ** e.order * e.std_error) ** 2 for e in v_est)))
    total_z = None
    total_z_se = None
    if z_est:
        total_z = sum(epsilon ** e.order * np.asarray(e.value, float) for e in z_est)
        total_z_se = np.sqrt(
            sum((epsilon ** e.order * np.asarray(e.std_error, float)) ** 2 for e in z_est)
        )
    return ExpansionResult(
        estimates=tuple(estimates), epsilon=epsilon,
        total_v=float(total_v), total_v_se=total_v_se,
        total_z=total_z, total_z_se=total_z_se,
    )
