"""Experiment configuration: strict JSON parsing, defaults, run manifests.

Configs are plain JSON.  Unknown keys are rejected anywhere in the tree with a
field-path diagnostic, wrong types likewise, so a typo cannot silently fall
back to a default.  Only family.tasks is required; everything else has the
documented default.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone

from .engine import SpecConfig
from .family import FamilySpec, SyntheticFamily, TaskSpec, make_synthetic_family
from .mitigation import TrainerConfig

TOOL_VERSION = "0.1.0"

__all__ = [
    "ConfigError",
    "OutputConfig",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_canonical_dict",
    "config_hash",
    "build_family",
    "RunManifest",
    "write_manifest",
    "utc_now_iso",
]


class ConfigError(ValueError):
    """Configuration rejected; the message carries the offending field path."""


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/out"
    emit_svg: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    vocab_size: int
    context_order: int
    epsilon_floor: float
    family: FamilySpec
    spec: SpecConfig
    trainer: TrainerConfig
    outputs: OutputConfig


def _reject_unknown(data: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")


def _pick(data: dict, key: str, kind, default, path: str, required: bool = False):
    if key not in data:
        if required:
            raise ConfigError(f"{path}: missing required key {key!r}")
        return default
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got a bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def config_from_dict(data: dict, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    _reject_unknown(data, {"seed", "vocab_size", "context_order", "epsilon_floor",
                           "family", "spec", "trainer", "outputs"}, source)

    seed = _pick(data, "seed", int, 0, source)
    vocab_size = _pick(data, "vocab_size", int, 64, source)
    context_order = _pick(data, "context_order", int, 1, source)
    epsilon_floor = _pick(data, "epsilon_floor", float, 1e-12, source)
    if vocab_size < 2:
        raise ConfigError(f"{source}.vocab_size: must be >= 2, got {vocab_size}")
    if context_order < 1:
        raise ConfigError(f"{source}.context_order: must be >= 1, got {context_order}")
    if not (0.0 < epsilon_floor <= 1e-6):
        raise ConfigError(f"{source}.epsilon_floor: must lie in (0, 1e-6], got {epsilon_floor}")

    fam_data = _pick(data, "family", dict, None, source, required=True)
    fam_path = f"{source}.family"
    _reject_unknown(fam_data, {"tasks", "prefix_length", "matched_entropy",
                               "concentration", "prefix_support"}, fam_path)
    default_support = _pick(fam_data, "prefix_support", int, 8, fam_path)
    tasks_data = _pick(fam_data, "tasks", list, None, fam_path, required=True)
    task_specs = []
    for i, entry in enumerate(tasks_data):
        tpath = f"{fam_path}.tasks[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{tpath}: expected an object")
        _reject_unknown(entry, {"id", "r_p", "r_q", "prior", "prefix_support"}, tpath)
        try:
            task_specs.append(TaskSpec(
                id=_pick(entry, "id", str, None, tpath, required=True),
                r_p=_pick(entry, "r_p", float, None, tpath, required=True),
                r_q=_pick(entry, "r_q", float, None, tpath, required=True),
                prior=_pick(entry, "prior", float, 1.0, tpath),
                prefix_support=_pick(entry, "prefix_support", int, default_support, tpath),
            ))
        except ValueError as exc:
            raise ConfigError(f"{tpath}: {exc}") from exc
    try:
        family = FamilySpec(
            tasks=tuple(task_specs),
            prefix_length=_pick(fam_data, "prefix_length", int, 3, fam_path),
            matched_entropy=_pick(fam_data, "matched_entropy", bool, True, fam_path),
            concentration=_pick(fam_data, "concentration", float, 1.0, fam_path),
        )
    except ValueError as exc:
        raise ConfigError(f"{fam_path}: {exc}") from exc

    spec_data = _pick(data, "spec", dict, {}, source)
    spec_path = f"{source}.spec"
    _reject_unknown(spec_data, {"gamma", "cost_ratio"}, spec_path)
    try:
        spec = SpecConfig(
            gamma=_pick(spec_data, "gamma", int, 4, spec_path),
            cost_ratio=_pick(spec_data, "cost_ratio", float, 0.1, spec_path),
        )
    except ValueError as exc:
        raise ConfigError(f"{spec_path}: {exc}") from exc

    tr_data = _pick(data, "trainer", dict, {}, source)
    tr_path = f"{source}.trainer"
    _reject_unknown(tr_data, {"steps", "batch_per_task", "step_size", "optimizer",
                              "grad_clip", "tasks_per_step", "convergence_tol", "seed"}, tr_path)
    batch = tr_data.get("batch_per_task", 8)
    if batch is not None and (isinstance(batch, bool) or not isinstance(batch, int)):
        raise ConfigError(f"{tr_path}.batch_per_task: expected int or null")
    try:
        trainer = TrainerConfig(
            steps=_pick(tr_data, "steps", int, 2000, tr_path),
            batch_per_task=batch,
            step_size=_pick(tr_data, "step_size", float, 0.1, tr_path),
            optimizer=_pick(tr_data, "optimizer", str, "sgd", tr_path),
            grad_clip=_pick(tr_data, "grad_clip", float, 0.0, tr_path),
            tasks_per_step=_pick(tr_data, "tasks_per_step", int, 0, tr_path),
            convergence_tol=_pick(tr_data, "convergence_tol", float, 0.0, tr_path),
            seed=_pick(tr_data, "seed", int, seed, tr_path),
        )
    except ValueError as exc:
        raise ConfigError(f"{tr_path}: {exc}") from exc

    out_data = _pick(data, "outputs", dict, {}, source)
    out_path = f"{source}.outputs"
    _reject_unknown(out_data, {"directory", "emit_svg"}, out_path)
    outputs = OutputConfig(
        directory=_pick(out_data, "directory", str, "runs/out", out_path),
        emit_svg=_pick(out_data, "emit_svg", bool, True, out_path),
    )

    return ExperimentConfig(seed, vocab_size, context_order, epsilon_floor,
                            family, spec, trainer, outputs)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(data, source=path)


def config_canonical_dict(cfg: ExperimentConfig) -> dict:
    """Fully defaulted, order-canonical dict form (what gets hashed)."""
    return {
        "seed": cfg.seed,
        "vocab_size": cfg.vocab_size,
        "context_order": cfg.context_order,
        "epsilon_floor": cfg.epsilon_floor,
        "family": {
            "prefix_length": cfg.family.prefix_length,
            "matched_entropy": cfg.family.matched_entropy,
            "concentration": cfg.family.concentration,
            "tasks": [
                {"id": t.id, "r_p": t.r_p, "r_q": t.r_q, "prior": t.prior,
                 "prefix_support": t.prefix_support}
                for t in cfg.family.tasks
            ],
        },
        "spec": {"gamma": cfg.spec.gamma, "cost_ratio": cfg.spec.cost_ratio},
        "trainer": {
            "steps": cfg.trainer.steps,
            "batch_per_task": cfg.trainer.batch_per_task,
            "step_size": cfg.trainer.step_size,
            "optimizer": cfg.trainer.optimizer,
            "grad_clip": cfg.trainer.grad_clip,
            "tasks_per_step": cfg.trainer.tasks_per_step,
            "convergence_tol": cfg.trainer.convergence_tol,
            "seed": cfg.trainer.seed,
        },
        "outputs": {"directory": cfg.outputs.directory, "emit_svg": cfg.outputs.emit_svg},
    }


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_canonical_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_family(cfg: ExperimentConfig) -> SyntheticFamily:
    """Materialize the verifier/drafter/task family described by the config."""
    return make_synthetic_family(cfg.family, cfg.vocab_size, cfg.context_order,
                                 cfg.seed, cfg.epsilon_floor)


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    started: str
    finished: str
    artifacts: list[str]


def write_manifest(directory: str, manifest: RunManifest) -> str:
    """Atomically write manifest.json into the run directory."""
    path = os.path.join(directory, "manifest.json")
    tmp = path + ".tmp"
    doc = {
        "config_hash": manifest.config_hash,
        "tool_version": manifest.tool_version,
        "started": manifest.started,
        "finished": manifest.finished,
        "artifacts": sorted(manifest.artifacts),
    }
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)
    return path
