"""JSON-config experiment runner.

Verbs::

    nncontrol run <config.json>        solve, evaluate, optionally sweep an M ladder
    nncontrol validate <config.json>   list every config violation, run nothing
    nncontrol oracle <config.json>     oracle tables only
    nncontrol quantize <config.json>   noise quantizer and distortion curve only

Relative ``output_dir`` values are resolved against ``$NNCONTROL_OUTPUT_ROOT``
when that variable is set, otherwise against the working directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import traceback
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from . import algos
from .errors import ConfigurationError, NNControlError
from .optim import VARIANTS, GdConfig, Schedule
from .oracle import GridSpec, LqSpec, export_grid_csv, grid_dp_solve, riccati_solve
from .problem import DiscreteNoise, FiniteControls
from .problems import PROBLEMS, build_problem, grid_toy_spec
from .quantize import clvq_train, distortion

ENV_OUTPUT_ROOT = "NNCONTROL_OUTPUT_ROOT"
CSV_VERSION = 1
CONVERGENCE_HEADER = ["M", "seed", "value_error"]
LOSS_HEADER = ["n", "network", "iteration", "loss", "gradient_norm"]
DISTORTION_HEADER = ["K", "distortion"]
ORACLES = ("riccati", "grid_dp")
ERROR_METRICS = ("suboptimality", "value_estimate")
TRAINING_KINDS = ("gaussian", "uniform", "grid", "explore_then_exploit")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


def value_header(state_dim: int) -> list:
    return ["n"] + [f"x{j}" for j in range(state_dim)] + ["mean", "stderr", "model_value", "oracle"]


# ---------------------------------------------------------------------------
# config parsing


@dataclass
class EvaluationSpec:
    states: list = field(default_factory=list)
    time: int = 0
    num_samples: int = 100_000
    seed: int = 12345
    m_ladder: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    x0: Optional[list] = None
    error_metric: str = "suboptimality"
    batch_size: Optional[int] = None


@dataclass
class ExperimentConfig:
    name: str
    problem_name: str
    problem_params: dict
    solver: dict
    oracle: Optional[str]
    grid: Optional[dict]
    evaluation: EvaluationSpec
    quantize: Optional[dict]
    output_dir: str
    raw: dict


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def parse_gd(d: dict) -> GdConfig:
    d = dict(d)
    lr = d.pop("lr", {})
    if isinstance(lr, (int, float)):
        lr = {"kind": "constant", "c": lr}
    return GdConfig(lr=Schedule(**lr), **d)


def _gd_echo(g: GdConfig) -> dict:
    return {"variant": g.variant, "iterations": g.iterations, "num_batches": g.num_batches,
            "lr": {"kind": g.lr.kind, "c": g.lr.c, "k0": g.lr.k0}, "seed": g.seed,
            "early_stop": g.early_stop}


def _positive_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def validate_config(data: dict) -> list[str]:
    """Every schema and cross-field violation of a raw config dict; empty when valid."""
    out: list[str] = []
    if not isinstance(data, dict):
        return ["config root must be a JSON object"]
    for key in ("problem", "solver"):
        if key not in data:
            out.append(f"missing required section '{key}'")
    problem = None
    prob = data.get("problem", {})
    if "problem" in data:
        name = prob.get("name")
        if name not in PROBLEMS:
            out.append(f"problem.name: unknown problem {name!r} (choose from {list(PROBLEMS)})")
        else:
            try:
                problem = build_problem(name, prob.get("params"))
            except (TypeError, ValueError, NNControlError) as exc:
                out.append(f"problem.params: {exc}")

    sol = data.get("solver", {})
    M = sol.get("sample_size")
    if "solver" in data:
        alg = sol.get("algorithm")
        if alg not in algos.ALGORITHMS:
            out.append(f"solver.algorithm: unknown algorithm {alg!r} (choose from {list(algos.ALGORITHMS)})")
        if not _positive_int(M):
            out.append("solver.sample_size: must be an integer >= 1")
        for key in ("policy_net", "value_net"):
            if key in sol:
                try:
                    sh = algos.NetworkShape(**sol[key])
                    if not _positive_int(sh.hidden_units) or sh.eta <= 0 or sh.gamma <= 0:
                        out.append(f"solver.{key}: hidden_units, eta and gamma must be positive")
                except TypeError as exc:
                    out.append(f"solver.{key}: {exc}")
        gds = ("policy_gd", "value_gd") if alg in ("hybrid_now", "hybrid_laterq") else ("policy_gd",)
        ms = [M] if _positive_int(M) else []
        ev = data.get("evaluation", {})
        ladder = ev.get("m_ladder", [])
        for key in gds:
            if key not in sol:
                continue
            try:
                gd = parse_gd(sol[key])
            except (TypeError, ValueError) as exc:
                out.append(f"solver.{key}: {exc}")
                continue
            if gd.variant == "minibatch":
                # with evaluation.batch_size the ladder rescales num_batches itself
                rungs = [] if ev.get("batch_size") else [m for m in ladder if _positive_int(m)]
                for m in ms + rungs:
                    if m % gd.num_batches:
                        field_m = "solver.sample_size" if m == M else "evaluation.m_ladder"
                        out.append(f"solver.{key}.num_batches={gd.num_batches} does not divide "
                                   f"{field_m}={m}")
        if alg in ("hybrid_now", "hybrid_laterq"):
            cb = sol.get("cost_bounds")
            if (not isinstance(cb, list) or len(cb) != 2
                    or not all(isinstance(v, (int, float)) and np.isfinite(v) and v > 0 for v in cb)):
                out.append("solver.cost_bounds: hybrid solvers need [sup|f|, sup|g|], finite and positive")
        if alg == "hybrid_laterq" and not _positive_int(sol.get("quantizer_size", 64)):
            out.append("solver.quantizer_size: must be an integer >= 1")
        if problem is not None and alg == "classification_pi":
            limit = sol.get("max_actions", algos.MAX_ACTIONS)
            cs = problem.control_set
            if not isinstance(cs, FiniteControls):
                out.append("solver.algorithm: classification_pi needs a finite control set")
            elif cs.size > limit:
                out.append(f"problem.params.actions: {cs.size} actions exceed the documented limit "
                           f"solver.max_actions={limit}")
        if problem is not None and alg in ("nncontpi", "hybrid_now", "hybrid_laterq") \
                and not problem.differentiable:
            out.append(f"solver.algorithm: {alg} needs a problem with dynamics and cost derivatives")
        tr = sol.get("training", {})
        kind = tr.get("kind")
        if kind not in TRAINING_KINDS:
            out.append(f"solver.training.kind: unknown kind {kind!r} (choose from {list(TRAINING_KINDS)})")
        elif kind in ("uniform", "explore_then_exploit"):
            lo, hi = np.asarray(tr.get("low", []), float), np.asarray(tr.get("high", []), float)
            if lo.shape != hi.shape or lo.size == 0 or np.any(hi <= lo):
                out.append("solver.training: uniform box has zero volume")
        elif kind == "gaussian" and ("mean" not in tr or "std" not in tr):
            out.append("solver.training: gaussian training needs mean and std")
        elif kind == "grid" and data.get("oracle") != "grid_dp":
            out.append("solver.training.kind: 'grid' needs oracle 'grid_dp'")

    oracle = data.get("oracle")
    if oracle is not None and oracle not in ORACLES:
        out.append(f"oracle: unknown oracle {oracle!r} (choose from {list(ORACLES)})")
    if oracle == "riccati" and prob.get("name") != "lq":
        out.append("oracle: riccati needs problem 'lq'")
    if oracle == "grid_dp" and prob.get("name") != "grid_toy" and "grid" not in data:
        out.append("grid: grid_dp on this problem needs an explicit 'grid' section")

    ev = data.get("evaluation", {})
    if ev.get("error_metric", "suboptimality") not in ERROR_METRICS:
        out.append(f"evaluation.error_metric: choose from {list(ERROR_METRICS)}")
    if ev.get("m_ladder"):
        if not all(_positive_int(m) for m in ev["m_ladder"]):
            out.append("evaluation.m_ladder: entries must be integers >= 1")
        if not ev.get("seeds"):
            out.append("evaluation.seeds: an M ladder needs an explicit seed list")
        if oracle is None:
            out.append("evaluation.m_ladder: value errors need an oracle")
        if ev.get("x0") is None:
            out.append("evaluation.x0: an M ladder needs the evaluation state x0")
        bs = ev.get("batch_size")
        if bs is not None:
            if not _positive_int(bs):
                out.append("evaluation.batch_size: must be an integer >= 1")
            else:
                for m in ev["m_ladder"]:
                    if _positive_int(m) and m % bs:
                        out.append(f"evaluation.batch_size={bs} does not divide evaluation.m_ladder={m}")
    if "num_samples" in ev and not _positive_int(ev["num_samples"]):
        out.append("evaluation.num_samples: must be an integer >= 1")
    if "seed" in sol and not isinstance(sol["seed"], int):
        out.append("solver.seed: seeds must be explicit integers")
    q = data.get("quantize")
    if q is not None and not all(_positive_int(k) for k in q.get("sizes", [])):
        out.append("quantize.sizes: entries must be integers >= 1")
    return out


def parse_config(data: dict) -> ExperimentConfig:
    violations = validate_config(data)
    if violations:
        raise ConfigurationError("; ".join(violations))
    prob = data["problem"]
    ev = EvaluationSpec(**data.get("evaluation", {}))
    return ExperimentConfig(
        name=data.get("name", "experiment"),
        problem_name=prob["name"],
        problem_params=dict(prob.get("params", {})),
        solver=data["solver"],
        oracle=data.get("oracle"),
        grid=data.get("grid"),
        evaluation=ev,
        quantize=data.get("quantize"),
        output_dir=data.get("output_dir", os.path.join("runs", data.get("name", "experiment"))),
        raw=data,
    )


def build_solver_config(cfg: ExperimentConfig, problem, grid: Optional[GridSpec]):
    """Returns ``(SolverConfig, two_phase_params or None)``."""
    s = dict(cfg.solver)
    tr = dict(s.pop("training"))
    kind = tr.pop("kind")
    two_phase = None
    if kind == "gaussian":
        training = algos.gaussian_training(tr["mean"], tr["std"])
    elif kind == "uniform":
        training = algos.uniform_training(tr["low"], tr["high"])
    elif kind == "grid":
        training = algos.empirical_training([grid.states] * problem.horizon)
    else:
        training = algos.uniform_training(tr["low"], tr["high"])
        two_phase = tr
    kw = {}
    for key in ("policy_net", "value_net"):
        if key in s:
            kw[key] = algos.NetworkShape(**s.pop(key))
    for key in ("policy_gd", "value_gd"):
        if key in s:
            kw[key] = parse_gd(s.pop(key))
    if "cost_bounds" in s and s["cost_bounds"] is not None:
        s["cost_bounds"] = tuple(s["cost_bounds"])
    return algos.SolverConfig(training=training, **kw, **s), two_phase


# ---------------------------------------------------------------------------
# oracles


def _lq_spec(cfg: ExperimentConfig) -> LqSpec:
    params = {k: v for k, v in cfg.problem_params.items() if k != "control_box"}
    defaults = dict(A=1.0, B=1.0, Sigma=1.0, Q=0.1, R=1.0, QT=1.0, horizon=3)
    defaults.update(params)
    return LqSpec(**defaults)


def build_grid(cfg: ExperimentConfig, problem) -> GridSpec:
    if cfg.grid is None:
        return grid_toy_spec(problem, int(cfg.problem_params.get("half_width", 10)))
    g = cfg.grid
    axes = tuple(np.linspace(lo, hi, int(num)) for lo, hi, num in g["axes"])
    controls = np.asarray(g["controls"], dtype=float)
    if isinstance(problem.noise, DiscreteNoise):
        atoms, probs = problem.noise.atoms, problem.noise.probs
    else:
        q = clvq_train(problem.noise, int(g.get("noise_points", 32)), int(g.get("clvq_steps", 200_000)),
                       seed=int(g.get("seed", 0)))
        atoms, probs = q.grid, q.weights
    return GridSpec(axes, controls, atoms, probs)


@dataclass
class OracleHandle:
    kind: str
    solution: object

    def value(self, n, x) -> np.ndarray:
        return self.solution.value(n, x)

    def policies(self, horizon: int) -> list:
        return [self.solution.policy(n) for n in range(horizon)]


def build_oracle(cfg: ExperimentConfig, problem) -> tuple[Optional[OracleHandle], Optional[GridSpec]]:
    if cfg.oracle == "riccati":
        return OracleHandle("riccati", riccati_solve(_lq_spec(cfg))), None
    if cfg.oracle == "grid_dp":
        grid = build_grid(cfg, problem)
        return OracleHandle("grid_dp", grid_dp_solve(problem, grid)), grid
    return None, None


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else _fmt(r) for r in row])


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def resolve_output_dir(path: str) -> str:
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def write_manifest(out_dir, cfg: ExperimentConfig, verb: str, outputs: list, extra=None) -> None:
    manifest = {
        "verb": verb,
        "library_version": __version__,
        "csv_version": CSV_VERSION,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": cfg.raw,
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


# ---------------------------------------------------------------------------
# experiment pieces


def _solve(problem, scfg, two_phase):
    if two_phase is None:
        return algos.solve(problem, scfg)
    res = algos.design_training_sets("explore_then_exploit", problem, scfg, **two_phase)
    return res.phase2


def value_rows(problem, solved, oracle, ev: EvaluationSpec):
    rows = []
    n = ev.time
    for x in ev.states:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mean, se = algos.estimate_value_pi(problem, solved, n, x, ev.num_samples, ev.seed)
        model = None
        if solved.algorithm in ("hybrid_now", "hybrid_laterq"):
            model = float(solved.value_function(n)(x[None])[0])
        orc = None if oracle is None else float(oracle.value(n, x[None])[0])
        rows.append([n, *x.tolist(), mean, se, model, orc])
    return rows


def loss_rows(solved) -> list:
    rows = []
    for n in sorted(solved.traces):
        for net, trace in sorted(solved.traces[n].items()):
            for k, loss, g in trace.rows():
                rows.append([n, net, k, loss, g])
    return rows


def value_error(problem, solved, oracle: OracleHandle, ev: EvaluationSpec) -> float:
    x0 = np.atleast_1d(np.asarray(ev.x0, dtype=float))
    if ev.error_metric == "suboptimality":
        err, _ = algos.policy_suboptimality(problem, solved, oracle.policies(problem.horizon), 0, x0,
                                            ev.num_samples, ev.seed)
        return err
    ref = float(oracle.value(0, x0[None])[0])
    if solved.algorithm in ("hybrid_now", "hybrid_laterq"):
        est = float(solved.value_function(0)(x0[None])[0])
    else:
        est, _ = algos.estimate_value_pi(problem, solved, 0, x0, ev.num_samples, ev.seed)
    return abs(est - ref)


def ladder_config(scfg: algos.SolverConfig, M: int, seed: int, batch_size: Optional[int]):
    kw = {"sample_size": M, "seed": seed}
    if batch_size:
        for key in ("policy_gd", "value_gd"):
            gd = getattr(scfg, key)
            if gd.variant == "minibatch":
                kw[key] = replace(gd, num_batches=M // batch_size)
    return replace(scfg, **kw)


def convergence_rows(problem, scfg, two_phase, oracle, ev: EvaluationSpec) -> list:
    rows = []
    for M in ev.m_ladder:
        for seed in ev.seeds:
            solved = _solve(problem, ladder_config(scfg, M, seed, ev.batch_size), two_phase)
            rows.append([M, seed, value_error(problem, solved, oracle, ev)])
    return rows


def quantizer_rows(problem, sizes, steps, seed, num_samples) -> list:
    rows = []
    for K in sizes:
        q = clvq_train(problem.noise, K, steps, seed=seed)
        rows.append([K, distortion(q, problem.noise, num_samples, seed)])
    return rows


# ---------------------------------------------------------------------------
# verbs


def run_experiment(cfg: ExperimentConfig) -> str:
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    problem = build_problem(cfg.problem_name, cfg.problem_params)
    oracle, grid = build_oracle(cfg, problem)
    scfg, two_phase = build_solver_config(cfg, problem, grid)
    solved = _solve(problem, scfg, two_phase)
    outputs = ["solved", "value_estimates.csv", "losses.csv"]
    solved.save(os.path.join(out_dir, "solved"))
    write_csv(os.path.join(out_dir, "value_estimates.csv"), value_header(problem.state_dim),
              value_rows(solved.problem, solved, oracle, cfg.evaluation))
    write_csv(os.path.join(out_dir, "losses.csv"), LOSS_HEADER, loss_rows(solved))
    if solved.quantizer is not None:
        q = solved.quantizer
        d = distortion(q, problem.noise, cfg.evaluation.num_samples, cfg.evaluation.seed)
        write_csv(os.path.join(out_dir, "quantizer_distortion.csv"), DISTORTION_HEADER, [[q.size, d]])
        outputs.append("quantizer_distortion.csv")
    if cfg.evaluation.m_ladder:
        rows = convergence_rows(problem, scfg, two_phase, oracle, cfg.evaluation)
        write_csv(os.path.join(out_dir, "convergence.csv"), CONVERGENCE_HEADER, rows)
        outputs.append("convergence.csv")
    if oracle is not None and oracle.kind == "grid_dp":
        export_grid_csv(oracle.solution, os.path.join(out_dir, "oracle_grid.csv"))
        outputs.append("oracle_grid.csv")
    write_manifest(out_dir, cfg, "run", outputs)
    return out_dir


def riccati_rows(sol) -> tuple[list, list]:
    d = sol.P.shape[1]
    q = sol.gains.shape[1]
    header = ["n", "c"] + [f"P{i}{j}" for i in range(d) for j in range(d)] \
        + [f"K{i}{j}" for i in range(q) for j in range(d)]
    rows = []
    for n in range(sol.P.shape[0]):
        gains = sol.gains[n].ravel().tolist() if n < sol.gains.shape[0] else [None] * (q * d)
        rows.append([n, sol.c[n], *sol.P[n].ravel().tolist(), *gains])
    return header, rows


def run_oracle(cfg: ExperimentConfig) -> str:
    if cfg.oracle is None:
        raise ConfigurationError("oracle: the config selects no oracle")
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    problem = build_problem(cfg.problem_name, cfg.problem_params)
    oracle, _ = build_oracle(cfg, problem)
    if oracle.kind == "riccati":
        header, rows = riccati_rows(oracle.solution)
        write_csv(os.path.join(out_dir, "oracle_riccati.csv"), header, rows)
        outputs = ["oracle_riccati.csv"]
    else:
        export_grid_csv(oracle.solution, os.path.join(out_dir, "oracle_grid.csv"))
        outputs = ["oracle_grid.csv"]
    write_manifest(out_dir, cfg, "oracle", outputs)
    return out_dir


def run_quantize(cfg: ExperimentConfig) -> str:
    q = cfg.quantize or {}
    sizes = q.get("sizes", [cfg.solver.get("quantizer_size", 64)])
    steps = int(q.get("steps", cfg.solver.get("quantizer_steps", 1_000_000)))
    seed = int(q.get("seed", cfg.solver.get("seed", 0)))
    num = int(q.get("num_samples", cfg.evaluation.num_samples))
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    problem = build_problem(cfg.problem_name, cfg.problem_params)
    rows = quantizer_rows(problem, sizes, steps, seed, num)
    write_csv(os.path.join(out_dir, "quantizer_distortion.csv"), DISTORTION_HEADER, rows)
    extra = {}
    if len(rows) >= 2:
        k = np.log([r[0] for r in rows])
        dist = np.log([r[1] for r in rows])
        extra["distortion_loglog_slope"] = float(np.polyfit(k, dist, 1)[0])
    write_manifest(out_dir, cfg, "quantize", ["quantizer_distortion.csv"], extra)
    return out_dir


def _error_record(out_dir: Optional[str], exc: BaseException, verb: str) -> dict:
    rec = {"verb": verb, "error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "iteration", None) is not None:
        rec["iteration"] = exc.iteration
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "error.json"), rec)
    return rec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nncontrol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "solve and evaluate"), ("validate", "check a config"),
                       ("oracle", "oracle tables only"), ("quantize", "quantizer only")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("config", help="path to a JSON config")
    args = parser.parse_args(argv)

    try:
        data = load_json(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"verb": args.verb, "error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_INVALID

    if args.verb == "validate":
        violations = validate_config(data)
        for v in violations:
            print(v)
        if not violations:
            print("ok")
        return EXIT_INVALID if violations else EXIT_OK

    out_dir = None
    if isinstance(data, dict) and isinstance(data.get("output_dir"), str):
        out_dir = resolve_output_dir(data["output_dir"])
    try:
        cfg = parse_config(data)
        out_dir = resolve_output_dir(cfg.output_dir)
        runner = {"run": run_experiment, "oracle": run_oracle, "quantize": run_quantize}[args.verb]
        result = runner(cfg)
    except ConfigurationError as exc:
        print(json.dumps(_error_record(out_dir, exc, args.verb)), file=sys.stderr)
        return EXIT_INVALID
    except (NNControlError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(json.dumps(_error_record(out_dir, exc, args.verb)), file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return EXIT_FAILED
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
