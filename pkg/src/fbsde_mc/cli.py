"""Batch front-end: config parsing, experiment orchestration, report files.

Configs are single JSON documents; nothing else (environment variables,
machine state) influences the numerics, and a rerun with the same seed and
worker count reproduces the report files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import cascade, coupled as coupled_mod, oracle as oracle_mod
from .cascade import MonteCarloConfig, OrderEstimate, combine_orders
from .errors import ConfigurationError, FbsdeError, OracleFailure
from .model import CATALOG, ModelSpec, ZerothOrderFunctions, builtin_model

log = logging.getLogger(__name__)

_KNOWN_KEYS = {
    "model", "params", "x0", "t", "T", "orders_v", "orders_z", "lambda",
    "n_particles", "base_step", "seed", "workers", "epsilon", "oracles",
    "output",
}
_KNOWN_ORACLES = {"quadrature_v1", "pde", "gradient_v1", "gradient_v2"}


@dataclass(frozen=True)
class RunConfig:
    model: str
    x0: Tuple[float, ...]
    t: float
    T: float
    orders_v: int = 3
    orders_z: int = 2
    lam: Optional[float] = None
    n_particles: int = 100_000
    base_step: Optional[float] = None
    seed: int = 0
    workers: int = 1
    epsilon: float = 1.0
    params: Dict = field(default_factory=dict)
    oracles: Tuple[str, ...] = ()
    output: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.orders_z <= 2:
            raise ConfigurationError("orders_z must be between 0 and 2")
        if not self.orders_z <= self.orders_v <= 3:
            raise ConfigurationError(
                "orders_v must satisfy orders_z <= orders_v <= 3"
            )
        if self.n_particles < 100:
            raise ConfigurationError("n_particles must be at least 100")
        if not self.t < self.T:
            raise ConfigurationError(f"need t < T, got t={self.t}, T={self.T}")
        if self.lam is not None and not self.lam > 0:
            raise ConfigurationError("lambda must be positive")
        unknown = set(self.oracles) - _KNOWN_ORACLES
        if unknown:
            raise ConfigurationError(
                f"unknown oracles {sorted(unknown)}; known: {sorted(_KNOWN_ORACLES)}"
            )

    @property
    def intensity(self) -> float:
        return self.lam if self.lam is not None else 2.0 / (self.T - self.t)

    @property
    def step(self) -> float:
        return self.base_step if self.base_step is not None else (self.T - self.t) / 200.0

    def mc(self) -> MonteCarloConfig:
        return MonteCarloConfig(
            t=self.t, T=self.T, n_particles=self.n_particles, lam=self.lam,
            base_step=self.base_step, seed=self.seed, workers=self.workers,
        )


def parse_config(text: str) -> RunConfig:
    """Validate a JSON config document and fill defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {sorted(unknown)}; known: {sorted(_KNOWN_KEYS)}"
        )
    for key in ("model", "T"):
        if key not in doc:
            raise ConfigurationError(f"config key {key!r} is required")
    x0 = doc.get("x0", 100.0)
    if np.isscalar(x0):
        x0 = (float(x0),)
    else:
        x0 = tuple(float(v) for v in x0)
    return RunConfig(
        model=str(doc["model"]),
        params=dict(doc.get("params", {})),
        x0=x0,
        t=float(doc.get("t", 0.0)),
        T=float(doc["T"]),
        orders_v=int(doc.get("orders_v", 3)),
        orders_z=int(doc.get("orders_z", 2)),
        lam=None if doc.get("lambda") is None else float(doc["lambda"]),
        n_particles=int(doc.get("n_particles", 100_000)),
        base_step=None if doc.get("base_step") is None else float(doc["base_step"]),
        seed=int(doc.get("seed", 0)),
        workers=int(doc.get("workers", 1)),
        epsilon=float(doc.get("epsilon", 1.0)),
        oracles=tuple(doc.get("oracles", [])),
        output=doc.get("output"),
    )


@dataclass(frozen=True)
class OracleCheck:
    estimator: str
    oracle_value: float
    mc_value: float
    abs_diff: float
    combined_se: float
    passed: bool


@dataclass(frozen=True)
class RunReport:
    config: RunConfig
    result: cascade.ExpansionResult
    oracle_checks: Tuple[OracleCheck, ...]


def _decoupled_estimates(model, z0f, x0, cfg, config) -> List[OrderEstimate]:
    v_fns = [cascade.estimate_v0, cascade.estimate_v1,
             cascade.estimate_v2, cascade.estimate_v3]
    z_fns = [cascade.estimate_z0, cascade.estimate_z1, cascade.estimate_z2]
    out = [v_fns[k](model, z0f, x0, cfg) for k in range(config.orders_v + 1)]
    out += [z_fns[k](model, z0f, x0, cfg) for k in range(config.orders_z + 1)]
    return out


def _coupled_estimates(model, z0f, x0, cfg, config) -> List[OrderEstimate]:
    if config.orders_v > 2:
        raise ConfigurationError(
            "feedback models support orders_v <= 2 (higher orders have no "
            "implemented source transport)"
        )
    if config.orders_z > 1:
        raise ConfigurationError("feedback models support orders_z <= 1")
    sources = coupled_mod.build_sources(model, z0f)
    out = [cascade.estimate_v0(model, z0f, x0, cfg)]
    if config.orders_v >= 1:
        out.append(coupled_mod.estimate_v1_coupled(sources, x0, cfg))
    if config.orders_v >= 2:
        out.append(coupled_mod.estimate_v2_coupled(sources, x0, cfg))
    if config.orders_z >= 0:
        out.append(cascade.estimate_z0(model, z0f, x0, cfg))
    if config.orders_z >= 1:
        out.append(coupled_mod.estimate_z1_coupled(sources, x0, cfg))
    return out


def _run_oracles(config, model, z0f, x0, cfg, result) -> List[OracleCheck]:
    by_key = {(e.component, e.order): e for e in result.estimates}
    checks: List[OracleCheck] = []
    for name in config.oracles:
        if name == "quadrature_v1":
            est = by_key.get(("V", 1))
            if est is None:
                raise ConfigurationError("quadrature_v1 oracle needs orders_v >= 1")
            ov = oracle_mod.quadrature_v1(model, z0f, x0, t=config.t, T=config.T)
            se = float(est.std_error)
            diff = abs(float(est.value) - ov)
            checks.append(OracleCheck("v1", ov, float(est.value), diff, se,
                                      diff <= 3.0 * max(se, 1e-15)))
        elif name == "pde":
            if model.has_feedback:
                raise ConfigurationError("the pde oracle covers decoupled models only")
            x = float(x0[0])
            sig = float(np.asarray(model.vol_free(config.t, np.asarray(x0)[None, :]),
                                   float)[0, 0, 0]) / max(x, 1e-12)
            spread = np.exp(5.0 * sig * np.sqrt(config.T - config.t))
            grid = oracle_mod.Grid1D(x_min=max(x / spread, 1e-8) / 2.0,
                                     x_max=x * spread * 2.0,
                                     n_space=400, n_time=400)
            surf = oracle_mod.solve_semilinear_pde(model, grid,
                                                   epsilon=config.epsilon,
                                                   t0=config.t, T=config.T)
            ov = surf.value(config.t, x)
            mc = result.total_v
            # fold the series-truncation allowance into the tolerance band
            v_top = by_key.get(("V", config.orders_v))
            trunc = abs(float(v_top.value)) * (config.T - config.t) if v_top else 0.0
            se = float(np.hypot(result.total_v_se, trunc / 3.0))
            diff = abs(mc - ov)
            checks.append(OracleCheck("v_total", ov, mc, diff, se,
                                      diff <= 3.0 * max(se, 1e-15)))
        elif name in ("gradient_v1", "gradient_v2"):
            if model.has_feedback:
                raise ConfigurationError("gradient oracles cover decoupled models only")
            vname = name[len("gradient_"):]
            rep = oracle_mod.check_gradient_vs_bump(
                vname, model, z0f, x0, cfg, h=1e-2 * float(x0[0]),
                n=min(config.n_particles, 200_000),
            )
            checks.append(OracleCheck(vname.replace("v", "z"), rep.bump_value,
                                      rep.z_value, abs(rep.difference),
                                      rep.combined_se, rep.passed))
    return checks


def run_experiment(config: RunConfig) -> RunReport:
    """Run every configured estimator order and the enabled oracle checks."""
    model, z0f = builtin_model(config.model, config.params)
    x0 = np.asarray(config.x0, float)
    if x0.shape != (model.dim_x,):
        raise ConfigurationError(
            f"x0 has shape {x0.shape}, model expects ({model.dim_x},)"
        )
    cfg = config.mc()
    if model.has_feedback:
        estimates = _coupled_estimates(model, z0f, x0, cfg, config)
    else:
        estimates = _decoupled_estimates(model, z0f, x0, cfg, config)
    result = combine_orders(estimates, epsilon=config.epsilon)
    checks = _run_oracles(config, model, z0f, x0, cfg, result)
    return RunReport(config=config, result=result, oracle_checks=tuple(checks))


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_report(report: RunReport, out_dir: str) -> List[str]:
    """results.csv, manifest.json and (when oracles ran) oracle_checks.csv."""
    os.makedirs(out_dir, exist_ok=True)
    config = report.config
    r = max((np.size(e.value) for e in report.result.estimates), default=1)
    written = []

    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", newline="") as fh:
        cols = (["order", "component"]
                + [f"value_{a + 1}" for a in range(r)]
                + [f"std_error_{a + 1}" for a in range(r)]
                + ["n_particles", "n_contributing"])
        fh.write(",".join(cols) + "\n")
        for e in sorted(report.result.estimates,
                        key=lambda e: (e.component, e.order)):
            vals = np.atleast_1d(np.asarray(e.value, float))
            ses = np.atleast_1d(np.asarray(e.std_error, float))
            row = [str(e.order), e.component]
            row += [_fmt(v) for v in vals] + [""] * (r - vals.size)
            row += [_fmt(s) for s in ses] + [""] * (r - ses.size)
            row += [str(e.n_particles), str(e.n_contributing)]
            fh.write(",".join(row) + "\n")
    written.append(path)

    manifest = {
        "model": config.model,
        "params": config.params,
        "x0": list(config.x0),
        "t": config.t,
        "T": config.T,
        "orders_v": config.orders_v,
        "orders_z": config.orders_z,
        "lambda": config.intensity,
        "n_particles": config.n_particles,
        "base_step": config.step,
        "seed": config.seed,
        "workers": config.workers,
        "epsilon": config.epsilon,
        "oracles": list(config.oracles),
        "totals": {
            "v": report.result.total_v,
            "v_std_error": report.result.total_v_se,
            "z": None if report.result.total_z is None
                 else list(map(float, np.atleast_1d(report.result.total_z))),
            "z_std_error": None if report.result.total_z_se is None
                 else list(map(float, np.atleast_1d(report.result.total_z_se))),
        },
        "oracle_checks_passed": all(c.passed for c in report.oracle_checks),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)

    if report.oracle_checks:
        path = os.path.join(out_dir, "oracle_checks.csv")
        with open(path, "w", newline="") as fh:
            fh.write("estimator,oracle_value,mc_value,abs_diff,combined_se,pass\n")
            for c in report.oracle_checks:
                fh.write(",".join([
                    c.estimator, _fmt(c.oracle_value), _fmt(c.mc_value),
                    _fmt(c.abs_diff), _fmt(c.combined_se),
                    "true" if c.passed else "false",
                ]) + "\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _print_summary(report: RunReport, stream) -> None:
    res = report.result
    for e in sorted(res.estimates, key=lambda e: (e.component, e.order)):
        vals = np.atleast_1d(np.asarray(e.value, float))
        ses = np.atleast_1d(np.asarray(e.std_error, float))
        body = "  ".join(f"{v:.8g} (se {s:.3g})" for v, s in zip(vals, ses))
        print(f"{e.component}({e.order}): {body}", file=stream)
    print(f"total V = {res.total_v:.10g} (se {res.total_v_se:.3g})", file=stream)
    if res.total_z is not None:
        zs = np.atleast_1d(res.total_z)
        print(f"total Z = {np.array2string(zs, precision=8)}", file=stream)
    for c in report.oracle_checks:
        tag = "PASS" if c.passed else "FAIL"
        print(f"oracle {c.estimator}: mc={c.mc_value:.8g} "
              f"ref={c.oracle_value:.8g} diff={c.abs_diff:.3g} "
              f"(3 c.s.e. = {3 * c.combined_se:.3g}) {tag}", file=stream)


def _load(path: str) -> str:
    with open(path, "r") as fh:
        return fh.read()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbsde-mc",
        description="Perturbative particle Monte Carlo for nonlinear FBSDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured estimators and oracles")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--out", default=None)

    sub.add_parser("catalog", help="list builtin models")

    p_ver = sub.add_parser("verify", help="run only the oracle suite")
    p_ver.add_argument("config")
    p_ver.add_argument("--seed", type=int, default=None)
    p_ver.add_argument("--workers", type=int, default=None)

    args = parser.parse_args(argv)

    if args.command == "catalog":
        for name in sorted(CATALOG):
            print(name)
        return 0

    try:
        config = parse_config(_load(args.config))
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.workers is not None:
            config = replace(config, workers=args.workers)
        if args.command == "run" and args.out is not None:
            config = replace(config, output=args.out)

        report = run_experiment(config)
        _print_summary(report, sys.stdout)
        if args.command == "run":
            out_dir = config.output or "."
            for path in write_report(report, out_dir):
                print(f"wrote {path}")
    except FbsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    failed = [c for c in report.oracle_checks if not c.passed]
    for c in failed:
        print(f"failed check {c.estimator}: |diff| {c.abs_diff:.6g} > "
              f"3 x {c.combined_se:.6g}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
