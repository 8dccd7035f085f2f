"""Batch front-end: run tasks, sweep parameter grids, validate exported
strategies.  Results are JSON documents and CSV series with deterministic
content, suitable for regenerating the benchmark figure data.

Exit codes: 0 ok, 2 solver failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .comb_algebra import FactorizedComb
from .errors import CombValidationError, ConfigError, SolverFailureError, SynthesisFailureError
from .metrology_zoo import (
    ChannelSpec,
    build_channel,
    nonidentical_pair,
    nonmarkovian_swap_comb,
    swap_slot_order,
)
from .qfi_oracle import verify_strategy
from .strategy_spaces import StrategySetSpec, control_free_dual_space, primal_space
from .strategy_synthesis import StrategyChoi, optimal_strategy, purify_strategy, saddle_residual
from .task_qfi import product_comb, solve_task, task_qfi
from .tensor_algebra import LabeledMatrix, SubsystemLayout

SCHEMA_VERSION = 1
SET_NAMES = ("par", "seq", "swi", "sup", "ico", "control_free")
SIG_DIGITS = 12


def _fmt(x: float) -> str:
    return f"{x:.{SIG_DIGITS - 1}e}"


@dataclass
class ExperimentConfig:
    """One task: a process family, a working point, strategy sets to score."""

    process: dict
    n_steps: int
    phi: float
    strategies: tuple[str, ...]
    sweep: dict | None = None
    gap_tol: float = 1e-8
    synthesize: bool = False
    validate_oracle: bool = True
    seed: int = 0
    signal_after_noise: bool = True

    @staticmethod
    def from_json(doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {doc.get('schema_version')!r}"
            )
        try:
            process = doc["process"]
            n = int(doc["N"])
            phi = float(doc["phi"])
            strategies = tuple(doc["strategies"])
        except KeyError as e:
            raise ConfigError(f"missing config key {e.args[0]!r}") from None
        for s in strategies:
            if s not in SET_NAMES:
                raise ConfigError(f"unknown strategy set {s!r}")
        if n < 1:
            raise ConfigError("N must be positive")
        if n > 3 and any(s in ("swi", "sup", "ico") for s in strategies):
            raise ConfigError("swi/sup/ico are limited to N <= 3")
        sweep = doc.get("sweep")
        if sweep is not None:
            if "parameter" not in sweep or "grid" not in sweep:
                raise ConfigError("sweep needs 'parameter' and 'grid'")
            if len(sweep["grid"]) == 0:
                raise ConfigError("sweep grid is empty")
        return ExperimentConfig(
            process=process,
            n_steps=n,
            phi=phi,
            strategies=strategies,
            sweep=sweep,
            gap_tol=float(doc.get("tolerances", {}).get("gap", 1e-8)),
            synthesize=bool(doc.get("synthesize", False)),
            validate_oracle=bool(doc.get("validate_oracle", True)),
            seed=int(doc.get("seed", 0)),
        )


def _channel_spec_from_doc(doc: dict) -> ChannelSpec:
    kind = doc.get("kind")
    if kind is None:
        raise ConfigError("process needs a 'kind'")
    parts = tuple(_channel_spec_from_doc(p) for p in doc.get("parts", []))
    params = {k: v for k, v in doc.items() if k not in ("kind", "parts")}
    return ChannelSpec(kind=kind, params=params, parts=parts)


def build_process(config: ExperimentConfig, override: dict | None = None):
    """Materialize the process family at the working point.

    Returns (factorized comb, family callable for oracle derivatives,
    alternate-order comb or None).
    """
    doc = dict(config.process)
    if override:
        doc.update(override)
    kind = doc.get("kind")
    if kind == "nonmarkovian_swap":
        g = float(doc.get("g", 1.0))
        t = float(doc.get("t", 1.0))
        markovian = bool(doc.get("markovian", False))
        if config.n_steps != 2:
            raise ConfigError("the exchange-coupling process has two steps")

        def family(phi):
            return nonmarkovian_swap_comb(phi, g, t, markovian=markovian)

        return family(config.phi), family, None
    if kind == "nonidentical_ad_pair":
        p1 = float(doc["p1"])
        p2 = float(doc["p2"])
        if config.n_steps != 2:
            raise ConfigError("the non-identical pair has two steps")

        def family(phi):
            return nonidentical_pair(p1, p2, phi)

        fc = family(config.phi)
        return fc, family, swap_slot_order(fc)
    spec = _channel_spec_from_doc(doc)

    def family(phi):
        return product_comb(build_channel(spec, phi), config.n_steps)

    return family(config.phi), family, None


def _score_one(args):
    """Worker: score every requested set at one parameter point."""
    config, override = args
    try:
        fc, family, alt = build_process(config, override)
        out = {}
        for name in config.strategies:
            if name == "control_free":
                d = fc.layout.dims[0]
                space = control_free_dual_space(config.n_steps, d)
                res = solve_task(fc, [space], gap_tol=config.gap_tol)
                value, stats = res.value, res.solver
                oracle_gap = None
            else:
                spec = StrategySetSpec(
                    name,
                    config.n_steps,
                    tuple(
                        (fc.layout.dims[2 * k], fc.layout.dims[2 * k + 1])
                        for k in range(config.n_steps)
                    ),
                )
                res = task_qfi(fc, spec, gap_tol=config.gap_tol)
                value, stats = res.value, res.solver
                if alt is not None and name == "seq":
                    res2 = task_qfi(alt, spec, gap_tol=config.gap_tol)
                    if res2.value > value:
                        value, stats = res2.value, res2.solver
                oracle_gap = None
                if config.validate_oracle:
                    try:
                        strat = purify_strategy(optimal_strategy(fc, spec, res))
                        ver = verify_strategy(
                            strat.purification,
                            strat.purification_layout,
                            strat.future_labels,
                            fc,
                            res.value,
                        )
                        oracle_gap = ver.relative_gap
                    except (SynthesisFailureError, SolverFailureError):
                        oracle_gap = None
            out[name] = {
                "value": value,
                "status": stats.status,
                "gap": stats.gap,
                "iterations": stats.iterations,
                "oracle_gap": oracle_gap,
            }
        return {"ok": True, "sets": out}
    except (SolverFailureError, SynthesisFailureError) as e:
        return {"ok": False, "error": f"solver: {e}"}
    except (ConfigError, CombValidationError, ValueError) as e:
        return {"ok": False, "error": f"config: {e}"}


def run_task(config: ExperimentConfig, out_path: str | None, jobs: int = 1) -> int:
    result = _score_one((config, None))
    if not result["ok"]:
        print(f"error: {result['error']}", file=sys.stderr)
        return 2
    doc = {
        "schema_version": SCHEMA_VERSION,
        "phi": config.phi,
        "N": config.n_steps,
        "process": config.process,
        "results": {
            name: {
                "value": float(f"{r['value']:.{SIG_DIGITS - 1}e}"),
                "status": r["status"],
                "gap": r["gap"],
                "iterations": r["iterations"],
                "oracle_gap": r["oracle_gap"],
            }
            for name, r in result["sets"].items()
        },
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def sweep(config: ExperimentConfig, out_path: str | None, jobs: int = 1) -> int:
    if config.sweep is None:
        print("error: config has no sweep section", file=sys.stderr)
        return 3
    param = config.sweep["parameter"]
    grid = list(config.sweep["grid"])
    tasks = []
    for val in grid:
        if param == "phi":
            cfg = ExperimentConfig(**{**config.__dict__, "phi": float(val), "sweep": None})
            tasks.append((cfg, None))
        else:
            tasks.append((config, {param: val}))
    if jobs > 1:
        with get_context("spawn").Pool(jobs) as pool:
            rows = pool.map(_score_one, tasks)
    else:
        rows = [_score_one(t) for t in tasks]
    names = list(config.strategies)
    header = ["grid_value"] + [f"J_{n}" for n in names] + [
        f"oracle_gap_{n}" for n in names
    ] + ["status"]
    lines = [",".join(header)]
    any_solver_failure = False
    for val, row in zip(grid, rows):
        if row["ok"]:
            cells = [_fmt(float(val))]
            cells += [_fmt(row["sets"][n]["value"]) for n in names]
            cells += [
                _fmt(row["sets"][n]["oracle_gap"])
                if row["sets"][n]["oracle_gap"] is not None
                else ""
                for n in names
            ]
            cells.append("ok")
        else:
            any_solver_failure = any_solver_failure or row["error"].startswith("solver")
            cells = [_fmt(float(val))] + [""] * (2 * len(names)) + [
                "failed:" + row["error"].replace(",", ";")
            ]
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def export_strategy(strategy: StrategyChoi, path: str) -> None:
    """Write a synthesized strategy as JSON (row-major re/im entry pairs)."""

    def cplx(m):
        m = np.asarray(m, dtype=complex)
        return [[[float(x.real), float(x.imag)] for x in row] for row in m]

    doc = {
        "schema_version": SCHEMA_VERSION,
        "layout": [[l, d] for l, d in strategy.marginal.layout.factors],
        "marginal": cplx(strategy.marginal.entries),
        "set": strategy.spec.kind if strategy.spec else None,
        "n_steps": strategy.spec.n_steps if strategy.spec else None,
        "branches": None,
        "purification": None,
    }
    if strategy.branches is not None:
        doc["branches"] = [
            {
                "perm": list(b.perm),
                "weight": b.weight,
                "rank": b.rank,
                "op": cplx(b.op.entries) if b.op is not None else None,
            }
            for b in strategy.branches
        ]
    if strategy.purification is not None:
        doc["purification"] = {
            "layout": [[l, d] for l, d in strategy.purification_layout.factors],
            "future_labels": list(strategy.future_labels),
            "amplitudes": [
                [float(x.real), float(x.imag)] for x in strategy.purification
            ],
        }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_strategy(path: str) -> StrategyChoi:
    with open(path) as f:
        doc = json.load(f)

    def uncplx(m):
        return np.array([[complex(a, b) for a, b in row] for row in m])

    layout = SubsystemLayout.of(*[(l, int(d)) for l, d in doc["layout"]])
    marg = LabeledMatrix(layout, uncplx(doc["marginal"]), hermitian=True)
    spec = None
    if doc.get("set"):
        n = int(doc["n_steps"])
        spec = StrategySetSpec(
            doc["set"],
            n,
            tuple((layout.dims[2 * k], layout.dims[2 * k + 1]) for k in range(n)),
        )
    s = StrategyChoi(marginal=marg, spec=spec)
    if doc.get("purification"):
        p = doc["purification"]
        s.purification = np.array([complex(a, b) for a, b in p["amplitudes"]])
        s.purification_layout = SubsystemLayout.of(
            *[(l, int(d)) for l, d in p["layout"]]
        )
        s.future_labels = tuple(p["future_labels"])
    return s


def validate_strategy_file(strategy_path: str, config_path: str) -> int:
    config = _load_config(config_path)
    s = load_strategy(strategy_path)
    fc, family, _ = build_process(config, None)
    report = {"schema_version": SCHEMA_VERSION}
    if s.spec is not None:
        spaces = primal_space(s.spec)
        if s.spec.kind in ("par", "seq", "ico"):
            report["membership_residual"] = spaces[0].residual(s.marginal)
        else:
            # a branch-structured marginal is a mixture; report the residual
            # against the convex hull via the branch sum if available,
            # otherwise the best single branch
            report["membership_residual"] = min(
                sp.residual(s.marginal) for sp in spaces
            )
    if s.purification is not None:
        res = task_qfi(fc, s.spec) if s.spec else None
        lam = res.value if res else 0.0
        ver = verify_strategy(
            s.purification, s.purification_layout, s.future_labels, fc, lam
        )
        report["oracle_qfi"] = ver.j_oracle
        report["task_qfi"] = lam
        report["relative_gap"] = ver.relative_gap
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from None
    return ExperimentConfig.from_json(doc)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="combqfi",
        description="Exact task QFI of N-step processes under strategy constraints",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--tol-gap", type=float, default=None)
    pv = sub.add_parser("validate")
    pv.add_argument("strategy")
    pv.add_argument("config")
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return validate_strategy_file(args.strategy, args.config)
        config = _load_config(args.config)
        if args.tol_gap is not None:
            config.gap_tol = args.tol_gap
        if args.command == "run":
            return run_task(config, args.out, jobs=args.jobs)
        return sweep(config, args.out, jobs=args.jobs)
    except (ConfigError, CombValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except (SolverFailureError, SynthesisFailureError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
