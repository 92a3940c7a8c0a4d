"""Command-line harness: run experiments from a JSON config, emit artifacts.

Exit codes: 0 success, 1 theorem violation (or training abort), 2 bad config,
3 I/O failure.  Seed precedence: --seed flag > SPECFAIR_SEED env var > config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import fairness, mitigation, svg
from .config import (ConfigError, ExperimentConfig, RunManifest, TOOL_VERSION,
                     build_family, config_hash, load_config, utc_now_iso,
                     write_manifest)
from .engine import speculative_step
from .family import FamilySpec, TaskSpec
from .fairness import (METRICS_HEADER, estimate_representation, family_metrics,
                       metrics_csv_rows, task_metrics, unfairness,
                       validate_chain, validate_disparity_condition,
                       validate_fitness_bound, write_metrics_csv)
from .mitigation import (TRAINLOG_HEADER, DivergenceAbort, data_balance_finetune,
                         run_scdf, temperature_sweep, trainlog_csv_line)
from .rng import substream

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3

SIMULATE_HEADER = ("task,steps,drafted_tokens,accepted_tokens,"
                   "realized_acceptance,pos0_acceptance,exact_alpha")
SUMMARY_HEADER = "step,u_exact,star_task,d_min,direction_norm"
SWEEP_HEADER = "task,temp,alpha,quality_adjusted"
BALANCE_HEADER = "mix,task,d,alpha,u"
REPRESENTATION_HEADER = "task,probability,count"


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    seed = None
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    elif os.environ.get("SPECFAIR_SEED"):
        raw = os.environ["SPECFAIR_SEED"]
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"SPECFAIR_SEED: expected an integer, got {raw!r}")
    if seed is not None:
        trainer = cfg.trainer
        if trainer.seed == cfg.seed:
            trainer = dataclasses.replace(trainer, seed=seed)
        cfg = dataclasses.replace(cfg, seed=seed, trainer=trainer)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(
            cfg, outputs=dataclasses.replace(cfg.outputs, directory=args.out))
    return cfg


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.outputs.directory, exist_ok=True)
    return cfg.outputs.directory


def _finish(cfg: ExperimentConfig, started: str, artifacts: list[str]) -> None:
    write_manifest(cfg.outputs.directory, RunManifest(
        config_hash=config_hash(cfg), tool_version=TOOL_VERSION,
        started=started, finished=utc_now_iso(), artifacts=artifacts))


# -- subcommands -------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    outdir = _outdir(cfg)
    artifacts = ["simulate.csv"]
    lines = [SIMULATE_HEADER]
    trace_fh = None
    if args.trace:
        trace_fh = open(os.path.join(outdir, "traces.jsonl"), "w", encoding="utf-8")
        artifacts.append("traces.jsonl")
    try:
        for task in built.family:
            drafted = accepted = pos0 = 0
            for step in range(args.steps):
                rng = substream(cfg.seed, "simulate", task.id, step)
                prefix = task.sample_prefix(rng)
                trace = speculative_step(built.verifier, built.drafter, prefix, cfg.spec, rng)
                drafted += len(trace.drafted)
                accepted += trace.accepted_prefix_len
                pos0 += 1 if trace.accepted_prefix_len > 0 else 0
                if trace_fh is not None:
                    trace_fh.write(json.dumps({
                        "step": step, "context": list(prefix),
                        "drafted": trace.drafted,
                        "accepted_prefix_len": trace.accepted_prefix_len,
                        "emitted": trace.emitted,
                    }) + "\n")
            m = task_metrics(built.verifier, built.drafter, task, cfg.spec, cfg.epsilon_floor)
            lines.append(",".join([
                task.id, str(args.steps), str(drafted), str(accepted),
                _fmt(accepted / max(drafted, 1)), _fmt(pos0 / max(args.steps, 1)),
                _fmt(m.alpha)]))
    finally:
        if trace_fh is not None:
            trace_fh.close()
    with open(os.path.join(outdir, "simulate.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, started, artifacts)
    print(f"simulated {args.steps} steps/task over {len(built.family)} tasks -> {outdir}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    outdir = _outdir(cfg)
    metrics = family_metrics(built.verifier, built.drafter, built.family,
                             cfg.spec, cfg.epsilon_floor)
    write_metrics_csv(os.path.join(outdir, "metrics.csv"), metrics, cfg.spec)
    u = unfairness([m.ce for m in metrics])
    for m in metrics:
        print(f"{m.task_id}: alpha={m.alpha:.6f} ce={m.ce:.6f} speedup={m.s:.6f}")
    print(f"unfairness U = {u:.9g}")
    _finish(cfg, started, ["metrics.csv"])
    return EXIT_OK


def _random_family_spec(rng: np.random.Generator, order: int) -> FamilySpec:
    n_tasks = int(rng.integers(2, 5))
    tasks = []
    for i in range(n_tasks):
        r_q = float(rng.uniform(0.0, 0.45))
        r_p = float(rng.uniform(0.0, min(r_q + 1e-9, 0.1)))
        if r_p > r_q:
            r_p = r_q
        tasks.append(TaskSpec(id=f"t{i}", r_p=r_p, r_q=r_q, prefix_support=3))
    return FamilySpec(tasks=tuple(tasks), prefix_length=max(order, 2),
                      matched_entropy=bool(rng.random() < 0.5))


def _cmd_verify(args) -> int:
    from .family import make_synthetic_family

    cfg = _load(args)
    started = utc_now_iso()
    outdir = _outdir(cfg)
    violations: list[str] = []
    checks = {"chain": 0, "fitness": 0, "disparity": 0}

    def check_family(verifier, drafter, family) -> None:
        for rep in validate_chain(verifier, drafter, family, cfg.spec,
                                  eps=cfg.epsilon_floor):
            checks["chain"] += 1
            if not rep.ok:
                violations.append(f"chain: task {rep.task_id} margins {rep.margins}")
        metrics = family_metrics(verifier, drafter, family, cfg.spec, cfg.epsilon_floor)
        for rep in validate_fitness_bound(metrics):
            if not rep.skipped:
                checks["fitness"] += 1
            if not rep.ok:
                violations.append(f"fitness: task {rep.task_id} deviation {rep.deviation}")
        for i, m_i in enumerate(metrics):
            for j, m_j in enumerate(metrics):
                if i == j:
                    continue
                rep = validate_disparity_condition(m_i, m_j, cfg.spec)
                if rep.condition_met:
                    checks["disparity"] += 1
                    if not rep.ok:
                        violations.append(
                            f"disparity: {rep.task_i} vs {rep.task_j} "
                            f"alpha_gap {rep.alpha_gap}")

    built = build_family(cfg)
    check_family(built.verifier, built.drafter, built.family)
    for trial in range(args.trials):
        rng = substream(cfg.seed, "verify", trial)
        spec = _random_family_spec(rng, cfg.context_order)
        trial_seed = int(rng.integers(0, 2**63))
        b = make_synthetic_family(spec, cfg.vocab_size, cfg.context_order,
                                  trial_seed, cfg.epsilon_floor)
        check_family(b.verifier, b.drafter, b.family)

    summary = {"trials": args.trials, "checks": checks, "violations": violations}
    with open(os.path.join(outdir, "verify_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _finish(cfg, started, ["verify_summary.json"])
    print(f"checks: {checks}")
    if violations:
        for v in violations:
            print(f"VIOLATION {v}", file=sys.stderr)
        return EXIT_VIOLATION
    print("all bounds hold")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    outdir = _outdir(cfg)

    before = family_metrics(built.verifier, built.drafter, built.family,
                            cfg.spec, cfg.epsilon_floor)
    write_metrics_csv(os.path.join(outdir, "metrics_before.csv"), before, cfg.spec)

    log_path = os.path.join(outdir, "trainlog.csv")
    with open(log_path, "w", encoding="utf-8") as log_fh:
        log_fh.write(TRAINLOG_HEADER + "\n")
        log_fh.flush()

        def writer(rows):
            for row in rows:
                log_fh.write(trainlog_csv_line(row) + "\n")
            log_fh.flush()

        history, trained = run_scdf(built.verifier, built.drafter, built.family,
                                    cfg.trainer, cfg.spec, eps=cfg.epsilon_floor,
                                    log_writer=writer)

    after = family_metrics(built.verifier, trained, built.family,
                           cfg.spec, cfg.epsilon_floor)
    write_metrics_csv(os.path.join(outdir, "metrics_after.csv"), after, cfg.spec)

    summary_lines = [SUMMARY_HEADER]
    for rec in history.records:
        summary_lines.append(",".join([
            str(rec.step), _fmt(rec.u_exact), rec.star_task,
            _fmt(min(rec.d_hats.values())), _fmt(rec.direction_norm)]))
    with open(os.path.join(outdir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary_lines) + "\n")

    with open(os.path.join(outdir, "model_final.json"), "w", encoding="utf-8") as fh:
        fh.write(trained.to_json() + "\n")

    _finish(cfg, started, ["metrics_before.csv", "metrics_after.csv",
                           "trainlog.csv", "summary.csv", "model_final.json"])
    stopped = (f"converged at step {history.converged_at}"
               if history.converged_at is not None else "ran full budget")
    print(f"U: {history.initial_u:.6g} -> {history.final_u:.6g} ({stopped})")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    outdir = _outdir(cfg)
    try:
        temps = [float(t) for t in args.temps.split(",") if t != ""]
    except ValueError:
        raise ConfigError(f"--temps: expected comma-separated reals, got {args.temps!r}")
    if not temps:
        raise ConfigError("--temps: no temperatures given")
    quality = None
    if args.quality:
        with open(args.quality, "r", encoding="utf-8") as fh:
            quality = json.load(fh)
        if not isinstance(quality, dict):
            raise ConfigError(f"{args.quality}: expected a task->quality object")
    rows = temperature_sweep(built.verifier, built.drafter, built.family,
                             temps, cfg.spec, quality, cfg.epsilon_floor)
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(",".join([r.task, _fmt(r.temp), _fmt(r.alpha),
                               _fmt(r.quality_adjusted)]))
    with open(os.path.join(outdir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, started, ["sweep.csv"])
    print(f"swept {len(temps)} temperatures over {len(built.family)} tasks -> {outdir}")
    return EXIT_OK


def _cmd_balance(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    if len(built.family) != 2:
        raise ConfigError(
            f"balance-data needs a 2-task family, config has {len(built.family)}")
    try:
        grid = [float(g) for g in args.grid.split(",") if g != ""]
    except ValueError:
        raise ConfigError(f"--grid: expected comma-separated reals, got {args.grid!r}")
    if not grid:
        raise ConfigError("--grid: no mixes given")
    outdir = _outdir(cfg)
    task_a, task_b = built.family.tasks
    results = data_balance_finetune(built.verifier, built.drafter, task_a, task_b,
                                    grid, cfg.trainer, cfg.spec, cfg.epsilon_floor)
    lines = [BALANCE_HEADER]
    for res in results:
        for task in (task_a, task_b):
            lines.append(",".join([
                _fmt(res.mix), task.id, _fmt(res.divergences[task.id]),
                _fmt(res.alphas[task.id]), _fmt(res.u)]))
    with open(os.path.join(outdir, "balance.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, started, ["balance.csv"])
    for res in results:
        print(f"mix={res.mix}: U={res.u:.6g}")
    return EXIT_OK


def _cmd_represent(args) -> int:
    cfg = _load(args)
    started = utc_now_iso()
    built = build_family(cfg)
    outdir = _outdir(cfg)
    rng = substream(cfg.seed, "representation")
    est = estimate_representation(built.drafter, built.classifier,
                                  built.family.ids(), args.k, rng,
                                  gen_tokens=args.gen_tokens)
    lines = [REPRESENTATION_HEADER]
    for tid, prob in est.ranked:
        lines.append(",".join([tid, _fmt(prob), str(est.counts[tid])]))
    with open(os.path.join(outdir, "representation.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, started, ["representation.csv"])
    for tid, prob in est.ranked:
        print(f"{tid}: {prob:.4f}")
    print(f"rejected {est.rejected}/{est.samples}")
    return EXIT_OK


def _read_csv(path: str) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _cmd_report(args) -> int:
    rundir = args.run
    if not os.path.isdir(rundir):
        print(f"report: {rundir} is not a directory", file=sys.stderr)
        return EXIT_IO
    snapshot = None
    for name in ("metrics_after.csv", "metrics.csv", "metrics_before.csv"):
        candidate = os.path.join(rundir, name)
        if os.path.exists(candidate):
            snapshot = candidate
            break
    written = []
    if snapshot is not None:
        rows = _read_csv(snapshot)
        labels = [r["task"] for r in rows]
        alphas = [float(r["alpha"]) for r in rows]
        out = os.path.join(rundir, "alpha_by_task.svg")
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(svg.bar_chart(labels, alphas, "acceptance rate by task", "alpha"))
        written.append(out)
        r_qs = [float(r["r_q"]) for r in rows]
        if not any(np.isnan(r_qs)):
            out = os.path.join(rundir, "alpha_vs_fitness.svg")
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(svg.scatter_chart(
                    [1.0 - r for r in r_qs], alphas, labels,
                    "acceptance vs drafter fitness", "1 - r_q", "alpha"))
            written.append(out)
    summary = os.path.join(rundir, "summary.csv")
    if os.path.exists(summary):
        rows = _read_csv(summary)
        steps = [float(r["step"]) for r in rows]
        us = [float(r["u_exact"]) for r in rows]
        out = os.path.join(rundir, "unfairness_over_steps.svg")
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(svg.line_chart(steps, us, "unfairness during training",
                                    "step", "U"))
        written.append(out)
    if not written:
        print(f"report: no renderable CSVs found in {rundir}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# -- argument plumbing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specfair",
        description="speculative decoding fairness laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
            p.add_argument("--seed", type=int, default=None,
                           help="override config seed (beats SPECFAIR_SEED)")
            p.add_argument("--out", default=None, help="override outputs.directory")

    p = sub.add_parser("simulate", help="run speculative decoding steps per task")
    common(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--trace", action="store_true", help="also write traces.jsonl")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("metrics", help="exact per-task metrics snapshot")
    common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("verify-theorems", help="check bound chains on random families")
    common(p)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("train-scdf", help="fairness-weighted drafter fine-tuning")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep-temperature", help="joint temperature baseline")
    common(p)
    p.add_argument("--temps", required=True, help="comma-separated temperatures")
    p.add_argument("--quality", default=None,
                   help="JSON file mapping task id to a quality scalar")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("balance-data", help="data-mix fine-tuning baseline")
    common(p)
    p.add_argument("--grid", required=True, help="comma-separated mixes in [0,1]")
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("estimate-representation",
                       help="rank tasks by drafter prior mass")
    common(p)
    p.add_argument("--k", type=int, default=10000)
    p.add_argument("--gen-tokens", type=int, default=2)
    p.set_defaults(func=_cmd_represent)

    p = sub.add_parser("report", help="render SVG plots from a run directory")
    p.add_argument("--run", required=True, help="run directory with CSV artifacts")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
