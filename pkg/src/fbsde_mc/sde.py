"""Forward simulation of the augmented system: state X, first-order stochastic
flows Y anchored at arbitrary grid times, and second-order flows (three-index
for the decoupled estimators, two-index for the coupled ones).

Two entry points:

* :func:`simulate_path` evolves a single trajectory on an explicit
  :class:`TimeGrid` and stores everything per node (used by oracles and
  flow-correctness checks).
* :func:`simulate_batch` evolves many trajectories at once on per-path grids
  refined by interaction times, recording values only at requested target
  times.  This is the workhorse behind all estimators.

Everything is Euler-Maruyama on a shared grid; all flows along one path reuse
the path's Brownian increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, SimulationError
from .model import ModelSpec


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0

    def generator(self, *extra_keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *extra_keys))
        return np.random.default_rng(ss)

    def substream(self, *keys: int) -> "RngStream":
        # flatten extra keys into the id space via a SeedSequence-derived int
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *keys))
        return RngStream(seed=self.seed, stream_id=int(ss.generate_state(1)[0]))


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    base_step: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, float)
        if nodes.ndim != 1 or len(nodes) < 2 or np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("grid nodes must be strictly increasing with >= 2 entries")
        object.__setattr__(self, "nodes", nodes)

    def index_of(self, s: float) -> int:
        i = int(np.searchsorted(self.nodes, s))
        if i >= len(self.nodes) or self.nodes[i] != s:
            raise ConfigurationError(f"time {s} is not a grid node")
        return i


def build_grid(t: float, T: float, base_step: float, taus: Sequence[float] = ()) -> TimeGrid:
    """Uniform grid of step <= base_step on [t, T] with every tau inserted exactly."""
    if not t < T:
        raise ConfigurationError(f"need t < T, got t={t}, T={T}")
    if not base_step > 0:
        raise ConfigurationError("base_step must be positive")
    for tau in taus:
        if not (t < tau < T):
            raise ConfigurationError(f"interaction time {tau} outside ({t}, {T})")
    m = int(np.ceil((T - t) / base_step))
    nodes = np.union1d(np.linspace(t, T, m + 1), np.asarray(list(taus), float))
    return TimeGrid(nodes=nodes, base_step=base_step)


@dataclass
class AugmentedPath:
    """One simulated trajectory with all spawned flows, keyed by anchor times.

    ``flows[s][k]`` is Y_{s, nodes[k]} (identity frozen before the anchor);
    ``second_flows[(t1, s)]`` the three-index flow, zero before its spawn;
    ``coupled_flows[s]`` the two-index flow of the coupled case.
    """

    grid: TimeGrid
    x: np.ndarray
    noise: np.ndarray
    flows: Dict[float, np.ndarray] = field(default_factory=dict)
    second_flows: Dict[Tuple[float, float], np.ndarray] = field(default_factory=dict)
    coupled_flows: Dict[float, np.ndarray] = field(default_factory=dict)

    def at(self, s: float) -> np.ndarray:
        return self.x[self.grid.index_of(s)]

    def flow_at(self, anchor: float, s: float) -> np.ndarray:
        return self.flows[anchor][self.grid.index_of(s)]


def malliavin_x(Y: np.ndarray, gamma_t: np.ndarray) -> np.ndarray:
    """Malliavin derivative of X via the flow chain rule: (D_t X_u)_a = (Y gamma)^i_a."""
    Y = np.atleast_2d(np.asarray(Y, float))
    gamma_t = np.atleast_2d(np.asarray(gamma_t, float))
    if Y.shape[-1] != gamma_t.shape[-2]:
        raise ConfigurationError(
            f"shape mismatch: flow {Y.shape} vs coefficient {gamma_t.shape}"
        )
    return Y @ gamma_t


class PathSimulation:
    """Incremental single-path simulation with spawnable flow anchors.

    Anchors must be registered before the simulation cursor passes them;
    spawning behind the cursor raises :class:`SimulationError`.
    """

    def __init__(self, model: ModelSpec, x_t, grid: TimeGrid, rng: RngStream):
        self.model = model
        self.grid = grid
        self.d = model.dim_x
        self.r = model.dim_w
        x_t = np.asarray(x_t, float).reshape(self.d)
        if not np.all(np.isfinite(x_t)):
            raise SimulationError("initial state is not finite")
        n = len(grid.nodes)
        self._cursor = 0
        self.x = np.empty((n, self.d))
        self.x[0] = x_t
        gen = rng.generator()
        dt = np.diff(grid.nodes)
        self.noise = gen.standard_normal((n - 1, self.r)) * np.sqrt(dt)[:, None]
        self._first: Dict[float, np.ndarray] = {}
        self._second: Dict[Tuple[float, float], np.ndarray] = {}
        self._coupled: Dict[float, np.ndarray] = {}

    def spawn_anchor(self, s: float, kind: str = "first",
                     parent_anchor: Optional[float] = None) -> object:
        """Register a flow starting at grid node s with its forced initial value."""
        idx = self.grid.index_of(s)
        if idx < self._cursor:
            raise SimulationError(
                f"cannot spawn at {s}: simulation cursor already passed node {idx}"
            )
        n = len(self.grid.nodes)
        if kind == "first":
            arr = np.empty((n, self.d, self.d))
            arr[: idx + 1] = np.eye(self.d)
            self._first[s] = arr
            return ("first", s)
        if kind == "second":
            if parent_anchor is None:
                raise ConfigurationError("second-order flow needs a parent_anchor")
            arr = np.zeros((n, self.d, self.d, self.d))
            self._second[(parent_anchor, s)] = arr
            return ("second", (parent_anchor, s))
        if kind == "coupled_second":
            arr = np.zeros((n, self.d, self.d, self.d))
            self._coupled[s] = arr
            return ("coupled_second", s)
        raise ConfigurationError(f"unknown anchor kind {kind!r}")

    def _need_second(self) -> bool:
        return bool(self._second) or bool(self._coupled)

    def advance_to(self, s: float) -> None:
        target = self.grid.index_of(s)
        m = self.model
        nodes = self.grid.nodes
        while self._cursor < target:
            j = self._cursor
            tj = nodes[j]
            dt = nodes[j + 1] - tj
            dW = self.noise[j]
            xb = self.x[j][None, :]
            b = np.asarray(m.drift_free(tj, xb), float)[0]
            s_ = np.asarray(m.vol_free(tj, xb), float)[0]
            self.x[j + 1] = self.x[j] + b * dt + s_ @ dW
            if not np.all(np.isfinite(self.x[j + 1])):
                raise SimulationError(f"non-finite state at node {j + 1}")
            if self._first or self._need_second():
                db = np.asarray(m.require("drift_free_dx")(tj, xb), float)[0]
                ds = np.asarray(m.require("vol_free_dx")(tj, xb), float)[0]
                coef = db * dt + np.einsum("iak,a->ik", ds, dW)
                for anchor, arr in self._first.items():
                    if tj < anchor:
                        continue
                    arr[j + 1] = arr[j] + coef @ arr[j]
            if self._need_second():
                ddb = np.asarray(m.require("drift_free_dxx")(tj, xb), float)[0]
                dds = np.asarray(m.require("vol_free_dxx")(tj, xb), float)[0]
                coef2 = ddb * dt + np.einsum("iakl,a->ikl", dds, dW)
                for (t1, t2), arr in self._second.items():
                    if tj < t2:
                        continue
                    if t1 not in self._first or t2 not in self._first:
                        raise ConfigurationError(
                            f"second-order flow ({t1}, {t2}) needs first-order flows at both anchors"
                        )
                    ya = self._first[t1][j]
                    yb = self._first[t2][j]
                    lin = np.einsum("il,ljk->ijk", coef, arr[j])
                    src = np.einsum("ilm,mj,lk->ijk", coef2, ya, yb)
                    arr[j + 1] = arr[j] + lin + src
                for anchor, arr in self._coupled.items():
                    if tj < anchor:
                        continue
                    ya = self._first[anchor][j]
                    lin = np.einsum("kl,lij->kij", coef, arr[j])
                    src = np.einsum("klm,li,mj->kij", coef2, ya, ya)
                    arr[j + 1] = arr[j] + lin + src
            self._cursor = j + 1

    def finish(self) -> AugmentedPath:
        self.advance_to(self.grid.nodes[-1])
        return AugmentedPath(
            grid=self.grid,
            x=self.x,
            noise=self.noise,
            flows=self._first,
            second_flows=self._second,
            coupled_flows=self._coupled,
        )


def simulate_path(model: ModelSpec, x_t, grid: TimeGrid, rng: RngStream,
                  flow_anchors: Sequence[float] = (),
                  second_flow_anchors: Sequence[Tuple[float, float]] = (),
                  coupled_flow_anchors: Sequence[float] = ()) -> AugmentedPath:
    """Euler-Maruyama trajectory of X with all requested flows on one noise."""
    sim = PathSimulation(model, x_t, grid, rng)
    needed_first = set(flow_anchors)
    for (t1, t2) in second_flow_anchors:
        needed_first.update((t1, t2))
    needed_first.update(coupled_flow_anchors)
    for s in sorted(needed_first):
        sim.spawn_anchor(s, kind="first")
    for (t1, t2) in second_flow_anchors:
        sim.spawn_anchor(t2, kind="second", parent_anchor=t1)
    for s in coupled_flow_anchors:
        sim.spawn_anchor(s, kind="coupled_second")
    return sim.finish()


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------


def simulate_batch(model: ModelSpec, x_t, t: float, T: float, base_step: float,
                   gen: np.random.Generator,
                   insert_times: np.ndarray,
                   time_labels: Dict[str, np.ndarray],
                   flow_anchors: Sequence[str] = (),
                   second_flow_anchors: Sequence[Tuple[str, str]] = (),
                   coupled_flow_anchors: Sequence[str] = (),
                   records: Sequence[Tuple] = (),
                   branch_anchor: Optional[str] = None,
                   branch_targets: Sequence[str] = ()) -> Dict[Tuple, np.ndarray]:
    """Vectorized Euler stepping of X and flows on per-path refined grids.

    ``insert_times`` (n, k) are raw per-path times; values beyond T are
    clipped to T for grid insertion (the corresponding cascades are gated to
    zero by the caller).  ``time_labels`` maps labels such as ``"tau1"`` to
    (n,) arrays of raw times; labels ``"t"`` and ``"T"`` are implicit.

    Flows are registered by anchor label: a flow anchored at a path-specific
    time starts at its forced initial value and only accumulates updates once
    the path clock passes its anchor.  ``records`` lists tuples
    ``("x"|"y"|"g"|"gc"|"xb"|"yb", key, target_label)`` naming what to record
    and where; the returned dict is keyed by those tuples.  ``"xb"``/``"yb"``
    record branch states: independent continuations spawned at
    ``branch_anchor`` (one branch per entry of ``branch_targets``), sharing
    the main path before the anchor and using fresh noise after it.
    """
    d, r = model.dim_x, model.dim_w
    x_t = np.asarray(x_t, float).reshape(d)
    insert_times = np.asarray(insert_times, float)
    n, k = insert_times.shape

    m_nodes = int(np.ceil((T - t) / base_step))
    nodes = np.linspace(t, T, m_nodes + 1)
    times = np.sort(
        np.concatenate(
            [np.broadcast_to(nodes, (n, m_nodes + 1)), np.minimum(insert_times, T)],
            axis=1,
        ),
        axis=1,
    )
    cols = times.shape[1]

    def anchor_time(label):
        if label == "t":
            return None  # always active
        return np.asarray(time_labels[label], float)

    X = np.broadcast_to(x_t, (n, d)).copy()
    Y = {lbl: np.broadcast_to(np.eye(d), (n, d, d)).copy() for lbl in flow_anchors}
    G = {pair: np.zeros((n, d, d, d)) for pair in second_flow_anchors}
    GC = {lbl: np.zeros((n, d, d, d)) for lbl in coupled_flow_anchors}
    anchors = {lbl: anchor_time(lbl) for lbl in
               set(flow_anchors) | set(coupled_flow_anchors)
               | {a for pair in second_flow_anchors for a in pair}}

    n_branch = len(branch_targets)
    if n_branch:
        banchor = anchor_time(branch_anchor)
        XB = [X.copy() for _ in range(n_branch)]
        YB = [np.broadcast_to(np.eye(d), (n, d, d)).copy() for _ in range(n_branch)]

    need_dx = bool(Y) or bool(G) or bool(GC) or n_branch > 0
    need_dxx = bool(G) or bool(GC)
    drift = model.drift_free
    vol = model.vol_free
    drift_dx = model.require("drift_free_dx") if need_dx else None
    vol_dx = model.require("vol_free_dx") if need_dx else None
    drift_dxx = model.require("drift_free_dxx") if need_dxx else None
    vol_dxx = model.require("vol_free_dxx") if need_dxx else None

    out: Dict[Tuple, np.ndarray] = {}
    rec_by_target: Dict[str, List[Tuple]] = {}
    for rec in records:
        rec_by_target.setdefault(rec[2], []).append(rec)
        kind = rec[0]
        shape = {"x": (n, d), "xb": (n, d), "y": (n, d, d), "yb": (n, d, d),
                 "g": (n, d, d, d), "gc": (n, d, d, d)}[kind]
        out[rec] = np.zeros(shape)

    def current(rec):
        kind, key, _ = rec
        if kind == "x":
            return X
        if kind == "y":
            return Y[key]
        if kind == "g":
            return G[key]
        if kind == "gc":
            return GC[key]
        if kind == "xb":
            return XB[key]
        if kind == "yb":
            return YB[key]
        raise ConfigurationError(f"unknown record kind {kind!r}")

    sqrt = np.sqrt
    for j in range(cols - 1):
        tj = times[:, j]
        dt = times[:, j + 1] - tj
        sdt = sqrt(dt)
        dW = gen.standard_normal((n, r)) * sdt[:, None]

        b = np.asarray(drift(tj, X), float)
        s = np.asarray(vol(tj, X), float)
        if need_dx:
            db = np.asarray(drift_dx(tj, X), float)
            ds = np.asarray(vol_dx(tj, X), float)
            # per-step linear multiplier: db*dt + ds.dW, shape (n, d, d)
            coef = db * dt[:, None, None] + np.einsum("niak,na->nik", ds, dW)
        if need_dxx:
            ddb = np.asarray(drift_dxx(tj, X), float)
            dds = np.asarray(vol_dxx(tj, X), float)
            coef2 = ddb * dt[:, None, None, None] + np.einsum("niakl,na->nikl", dds, dW)

        newX = X + b * dt[:, None] + np.einsum("nia,na->ni", s, dW)

        newY = {}
        for lbl, arr in Y.items():
            at = anchors[lbl]
            dY = np.einsum("nik,nkj->nij", coef, arr)
            if at is not None:
                dY *= (tj >= at)[:, None, None]
            newY[lbl] = arr + dY
        newG = {}
        for (la, lb), arr in G.items():
            at = anchors[lb]
            dG = np.einsum("nil,nljk->nijk", coef, arr)
            dG += np.einsum("nilm,nmj,nlk->nijk", coef2, Y[la], Y[lb])
            if at is not None:
                dG *= (tj >= at)[:, None, None, None]
            newG[(la, lb)] = arr + dG
        newGC = {}
        for lbl, arr in GC.items():
            at = anchors[lbl]
            dG = np.einsum("nkl,nlij->nkij", coef, arr)
            dG += np.einsum("nklm,nli,nmj->nkij", coef2, Y[lbl], Y[lbl])
            if at is not None:
                dG *= (tj >= at)[:, None, None, None]
            newGC[lbl] = arr + dG

        if n_branch:
            active = (tj >= banchor)
            for p in range(n_branch):
                dWb = gen.standard_normal((n, r)) * sdt[:, None]
                xb = XB[p]
                bb = np.asarray(drift(tj, xb), float)
                sb = np.asarray(vol(tj, xb), float)
                dbb = np.asarray(drift_dx(tj, xb), float)
                dsb = np.asarray(vol_dx(tj, xb), float)
                coefb = dbb * dt[:, None, None] + np.einsum("niak,na->nik", dsb, dWb)
                stepped = xb + bb * dt[:, None] + np.einsum("nia,na->ni", sb, dWb)
                dYb = np.einsum("nik,nkj->nij", coefb, YB[p])
                YB[p] = YB[p] + dYb * active[:, None, None]
                # before its anchor a branch shadows the main path exactly
                XB[p] = np.where(active[:, None], stepped, newX)

        X = newX
        Y = newY
        G = newG
        GC = newGC

        if not np.all(np.isfinite(X)):
            raise SimulationError(f"non-finite state at step {j + 1}")

        tnext = times[:, j + 1]
        for target, recs in rec_by_target.items():
            if target == "T":
                continue
            tt = np.minimum(np.asarray(time_labels[target], float), T)
            mask = (tnext == tt) & (tj < tt)
            if mask.any():
                for rec in recs:
                    out[rec][mask] = current(rec)[mask]

    for target, recs in rec_by_target.items():
        if target == "T":
            for rec in recs:
                out[rec][:] = current(rec)
    return out
