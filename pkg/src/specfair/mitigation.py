"""Fairness-weighted drafter fine-tuning (s-CDF) and the comparison baselines.

The trainer holds the verifier fixed and nudges only the drafter's logit
table.  Each step estimates every sampled task's cross-entropy against the
verifier, takes the best-served task's value as a constant floor, and descends
the excess-weighted direction

    delta = -(1/m) sum_T (d_hat_T - d_hat_min) grad d_hat_T,

so the currently best-served task gets weight exactly zero and cannot be
dragged along.  Baselines: a joint temperature sweep and plain mixed-data
fine-tuning over a grid of mixing proportions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Sequence

import numpy as np

from . import dist
from .dist import EPSILON_FLOOR
from .engine import SpecConfig
from .fairness import Task, TaskFamily, TaskMetrics, task_metrics, unfairness
from .models import TabularSoftmaxModel
from .rng import sample_index, substream

__all__ = [
    "TrainerConfig",
    "TrainLogRow",
    "TRAINLOG_HEADER",
    "DivergenceAbort",
    "estimate_task_ce",
    "fairness_weighted_direction",
    "acceptance_proxy",
    "ScdfStepRecord",
    "ScdfHistory",
    "run_scdf",
    "SweepRow",
    "temperature_sweep",
    "BalanceResult",
    "data_balance_finetune",
    "trainlog_csv_line",
]

TRAINLOG_HEADER = "timestamp,step,star_task,task,d_hat,acceptance,tv_q,tv_p"

CONVERGENCE_WINDOW = 50
DIVERGENCE_FACTOR = 10.0

_OPTIMIZERS = ("sgd", "momentum", "adaptive-moment")
_MOMENTUM_COEF = 0.9
_ADAM_BETAS = (0.9, 0.999)
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters for run_scdf (and budget/batch source for baselines).

    batch_per_task=None selects exact full-support batches instead of sampled
    ones.  tasks_per_step=0 means every task participates in every step.
    grad_clip=0 disables clipping; convergence_tol=0 disables the early-stop
    window, so exactly ``steps`` updates run.
    """

    steps: int = 2000
    batch_per_task: int | None = 8
    step_size: float = 0.1
    optimizer: str = "sgd"
    grad_clip: float = 0.0
    tasks_per_step: int = 0
    convergence_tol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_per_task is not None and self.batch_per_task < 1:
            raise ValueError(f"batch_per_task must be >= 1 or None, got {self.batch_per_task}")
        if not (self.step_size > 0.0):
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        name = "adaptive-moment" if self.optimizer == "adam" else self.optimizer
        if name not in _OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {_OPTIMIZERS}, got {self.optimizer!r}")
        object.__setattr__(self, "optimizer", name)
        if self.grad_clip < 0.0:
            raise ValueError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if self.tasks_per_step != 0 and self.tasks_per_step < 2:
            raise ValueError("tasks_per_step must be 0 (= all tasks) or >= 2")
        if self.convergence_tol < 0.0:
            raise ValueError(f"convergence_tol must be >= 0, got {self.convergence_tol}")


@dataclass(frozen=True)
class TrainLogRow:
    timestamp: str
    step: int
    star_task: str
    task: str
    d_hat: float
    acceptance: float
    tv_q: float
    tv_p: float


def trainlog_csv_line(row: TrainLogRow) -> str:
    fmt = lambda x: format(float(x), ".17g")
    return ",".join([row.timestamp, str(row.step), row.star_task, row.task,
                     fmt(row.d_hat), fmt(row.acceptance), fmt(row.tv_q), fmt(row.tv_p)])


class DivergenceAbort(RuntimeError):
    """Training unfairness blew past 10x its starting value."""

    def __init__(self, step: int, u: float, u_initial: float):
        super().__init__(
            f"aborting at step {step}: unfairness {u:.6g} exceeds "
            f"{DIVERGENCE_FACTOR:g}x its initial value {u_initial:.6g}"
        )
        self.step = step
        self.u = u
        self.u_initial = u_initial


# -- estimators --------------------------------------------------------------


def estimate_task_ce(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    batch: Sequence[tuple[int, ...]] | None = None,
    *,
    eps: float = EPSILON_FLOOR,
    sample_target_tokens: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[tuple[int, ...], np.ndarray]]:
    """Batched cross-entropy estimate and its logit-table gradient.

    With batch=None the full prefix support is used with its exact weights,
    so d_hat equals the task divergence D_T.  The gradient is returned as a
    dict keyed by drafter context key; by default the inner expectation over
    target tokens is taken exactly (grad row = q_row - p_row), the sampled
    single-token variant sits behind sample_target_tokens.
    """
    if batch is None:
        pairs = list(zip(task.weights, task.prefixes))
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        share = 1.0 / len(batch)
        pairs = [(share, tuple(prefix)) for prefix in batch]
    if sample_target_tokens and rng is None:
        raise ValueError("sample_target_tokens=True needs an rng")

    d_hat = 0.0
    grad: dict[tuple[int, ...], np.ndarray] = {}
    for w, prefix in pairs:
        p_row = p_model.predict(prefix)
        q_row = q_model.predict(prefix)
        d_hat += w * dist.cross_entropy(p_row, q_row, eps)
        if sample_target_tokens:
            target = np.zeros(q_model.vocab_size)
            target[sample_index(rng, p_row)] = 1.0
        else:
            target = p_row
        key = q_model.key(prefix)
        row = grad.get(key)
        if row is None:
            grad[key] = w * (q_row - target)
        else:
            row += w * (q_row - target)
    return d_hat, grad


def fairness_weighted_direction(
    d_hats: Sequence[float],
    gradients: Sequence[dict[tuple[int, ...], np.ndarray]],
) -> tuple[dict[tuple[int, ...], np.ndarray], np.ndarray]:
    """Excess-weighted descent direction; the best-served task's weight is 0.

    Returns (direction, weights) where direction = -(1/m) sum_i w_i g_i and
    w_i = d_hat_i - min(d_hat).  Zero-weight terms are skipped outright, so
    the minimizer contributes exactly nothing, not merely something small.
    """
    if len(d_hats) < 2:
        raise ValueError("need at least 2 tasks to form a fairness direction")
    if len(d_hats) != len(gradients):
        raise ValueError("d_hats and gradients must align")
    d = np.asarray(d_hats, dtype=float)
    weights = d - d.min()
    m = len(d_hats)
    direction: dict[tuple[int, ...], np.ndarray] = {}
    for w_i, grad in zip(weights, gradients):
        if w_i == 0.0:
            continue
        for key, row in grad.items():
            acc = direction.get(key)
            if acc is None:
                direction[key] = (-w_i / m) * row
            else:
                acc -= (w_i / m) * row
    return direction, weights


def acceptance_proxy(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    gamma: int,
    n_prefixes: int,
    rng: np.random.Generator,
) -> float:
    """Single-pass acceptance estimate without running the sampler.

    Drafts gamma tokens greedily from the drafter, accepts position i where
    min(1, p/q) exceeds a uniform draw, and averages the contiguous accepted
    prefix length normalized by gamma over sampled prefixes.
    """
    if gamma < 1 or n_prefixes < 1:
        raise ValueError("gamma and n_prefixes must be >= 1")
    total = 0.0
    for _ in range(n_prefixes):
        ctx = list(task.sample_prefix(rng))
        accepts = []
        for _ in range(gamma):
            q_row = q_model.predict(ctx)
            x = int(np.argmax(q_row))
            p_row = p_model.predict(ctx)
            prob = min(1.0, float(p_row[x] / q_row[x]))
            accepts.append(rng.random() < prob)
            ctx.append(x)
        run = 0
        for ok in accepts:
            if not ok:
                break
            run += 1
        total += run / gamma
    return total / n_prefixes


# -- optimizers --------------------------------------------------------------


class _Optimizer:
    """Applies theta <- theta + beta * update(direction) per logit row."""

    def __init__(self, kind: str, beta: float):
        self.kind = kind
        self.beta = beta
        self.t = 0
        self._m: dict[tuple[int, ...], np.ndarray] = {}
        self._v: dict[tuple[int, ...], np.ndarray] = {}

    def step(self, model: TabularSoftmaxModel, direction: dict[tuple[int, ...], np.ndarray]) -> None:
        self.t += 1
        if self.kind == "sgd":
            for key, delta in direction.items():
                model.add_to_row(key, self.beta * delta)
            return
        if self.kind == "momentum":
            for key, delta in direction.items():
                vel = self._m.get(key)
                if vel is None:
                    vel = np.zeros_like(delta)
                    self._m[key] = vel
                vel *= _MOMENTUM_COEF
                vel += delta
                model.add_to_row(key, self.beta * vel)
            return
        # adaptive-moment on the ascent gradient g = -direction
        b1, b2 = _ADAM_BETAS
        for key, delta in direction.items():
            g = -delta
            m = self._m.setdefault(key, np.zeros_like(delta))
            v = self._v.setdefault(key, np.zeros_like(delta))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            model.add_to_row(key, -self.beta * m_hat / (np.sqrt(v_hat) + _ADAM_EPS))


def _clip_direction(direction: dict[tuple[int, ...], np.ndarray], clip: float) -> float:
    norm = math.sqrt(sum(float(np.dot(row, row)) for row in direction.values()))
    if clip > 0.0 and norm > clip:
        scale = clip / norm
        for row in direction.values():
            row *= scale
    return norm


# -- the trainer -------------------------------------------------------------


@dataclass
class ScdfStepRecord:
    step: int
    task_ids: list[str]
    d_hats: dict[str, float]
    weights: dict[str, float]
    star_task: str
    u_exact: float
    direction_norm: float


@dataclass
class ScdfHistory:
    records: list[ScdfStepRecord] = field(default_factory=list)
    log_rows: list[TrainLogRow] = field(default_factory=list)
    initial_divergences: dict[str, float] = field(default_factory=dict)
    final_divergences: dict[str, float] = field(default_factory=dict)
    initial_u: float = 0.0
    final_u: float = 0.0
    converged_at: int | None = None

    def star_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records:
            counts[rec.star_task] = counts.get(rec.star_task, 0) + 1
        return counts


def run_scdf(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    family: TaskFamily,
    trainer: TrainerConfig,
    spec_cfg: SpecConfig,
    *,
    eps: float = EPSILON_FLOOR,
    sample_target_tokens: bool = False,
    log_proxy_prefixes: int = 4,
    log_writer: Callable[[list[TrainLogRow]], None] | None = None,
) -> tuple[ScdfHistory, TabularSoftmaxModel]:
    """Train a clone of the drafter with fairness-weighted corrective steps.

    The verifier is never touched (checked by fingerprint).  Per step, the
    sampled tasks' d_hat and gradients feed fairness_weighted_direction, the
    optimizer applies the clipped update, and exact unfairness over the full
    supports is recorded.  Aborts with DivergenceAbort if unfairness grows
    past 10x its starting value; stops early when the exact-U range over the
    last 50 steps falls below convergence_tol (when enabled).

    Returns (history, trained drafter); the input drafter is left unchanged.
    """
    p_before = p_model.fingerprint()
    q = q_model.clone()
    tasks = list(family)
    m_all = len(tasks)
    n_chosen = m_all if trainer.tasks_per_step == 0 else min(trainer.tasks_per_step, m_all)
    optimizer = _Optimizer(trainer.optimizer, trainer.step_size)

    def exact_divergences() -> dict[str, float]:
        return {t.id: estimate_task_ce(p_model, q, t, None, eps=eps)[0] for t in tasks}

    history = ScdfHistory()
    history.initial_divergences = exact_divergences()
    history.initial_u = unfairness(list(history.initial_divergences.values()))
    u_trace = []

    for step in range(trainer.steps):
        if n_chosen == m_all:
            chosen = list(range(m_all))
        else:
            rng = substream(trainer.seed, "scdf", "tasks", step)
            chosen = sorted(int(i) for i in rng.choice(m_all, size=n_chosen, replace=False))

        d_hats: list[float] = []
        grads = []
        batches = []
        for idx in chosen:
            t = tasks[idx]
            if trainer.batch_per_task is None:
                batch = None
            else:
                brng = substream(trainer.seed, "scdf", "batch", step, t.id)
                batch = [t.sample_prefix(brng) for _ in range(trainer.batch_per_task)]
            target_rng = (
                substream(trainer.seed, "scdf", "target", step, t.id)
                if sample_target_tokens
                else None
            )
            d_hat, grad = estimate_task_ce(
                p_model, q, t, batch, eps=eps,
                sample_target_tokens=sample_target_tokens, rng=target_rng,
            )
            d_hats.append(d_hat)
            grads.append(grad)
            batches.append(batch)

        direction, weights = fairness_weighted_direction(d_hats, grads)
        norm = _clip_direction(direction, trainer.grad_clip)
        optimizer.step(q, direction)

        star_local = int(np.argmin(d_hats))
        star_task = tasks[chosen[star_local]].id

        exact = exact_divergences()
        u = unfairness(list(exact.values()))
        if u > DIVERGENCE_FACTOR * max(history.initial_u, 1e-12):
            raise DivergenceAbort(step, u, history.initial_u)

        timestamp = datetime.now(timezone.utc).isoformat()
        step_rows = []
        for local, idx in enumerate(chosen):
            t = tasks[idx]
            prng = substream(trainer.seed, "scdf", "proxy", step, t.id)
            acc = acceptance_proxy(p_model, q, t, spec_cfg.gamma, log_proxy_prefixes, prng)
            tv_q, tv_p = _batch_misfits(p_model, q, t, batches[local])
            step_rows.append(TrainLogRow(timestamp, step, star_task, t.id,
                                         d_hats[local], acc, tv_q, tv_p))
        history.log_rows.extend(step_rows)
        if log_writer is not None:
            log_writer(step_rows)

        history.records.append(ScdfStepRecord(
            step=step,
            task_ids=[tasks[i].id for i in chosen],
            d_hats={tasks[i].id: d_hats[l] for l, i in enumerate(chosen)},
            weights={tasks[i].id: float(weights[l]) for l, i in enumerate(chosen)},
            star_task=star_task,
            u_exact=u,
            direction_norm=norm,
        ))

        u_trace.append(u)
        if (trainer.convergence_tol > 0.0 and len(u_trace) > CONVERGENCE_WINDOW
                and max(u_trace[-CONVERGENCE_WINDOW - 1:]) - min(u_trace[-CONVERGENCE_WINDOW - 1:])
                < trainer.convergence_tol):
            history.converged_at = step
            break

    history.final_divergences = exact_divergences()
    history.final_u = unfairness(list(history.final_divergences.values()))
    if p_model.fingerprint() != p_before:
        raise RuntimeError("verifier parameters changed during training")
    return history, q


def _batch_misfits(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    batch: Sequence[tuple[int, ...]] | None,
) -> tuple[float, float]:
    """Batch-averaged TV of drafter / verifier against the task posterior."""
    if task.posterior is None:
        return float("nan"), float("nan")
    if batch is None:
        pairs = list(zip(task.weights, task.prefixes))
    else:
        share = 1.0 / len(batch)
        pairs = [(share, prefix) for prefix in batch]
    tv_q = tv_p = 0.0
    for w, prefix in pairs:
        u_row = task.posterior.predict(prefix)
        tv_q += w * dist.total_variation(u_row, q_model.predict(prefix))
        tv_p += w * dist.total_variation(u_row, p_model.predict(prefix))
    return tv_q, tv_p


# -- baselines ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    task: str
    temp: float
    alpha: float
    quality_adjusted: float


def temperature_sweep(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    family: TaskFamily,
    temps: Sequence[float],
    cfg: SpecConfig,
    quality: dict[str, float] | None = None,
    eps: float = EPSILON_FLOOR,
) -> list[SweepRow]:
    """Joint temperature baseline: scale p and q in tandem, report exact alpha.

    quality maps task id to an external quality scalar; quality_adjusted is
    alpha * quality (NaN when no quality is supplied).
    """
    rows = []
    for t in temps:
        for task in family:
            alpha = 0.0
            for w, prefix in zip(task.weights, task.prefixes):
                p_row = dist.temperature_scale(p_model.predict(prefix), t, eps)
                q_row = dist.temperature_scale(q_model.predict(prefix), t, eps)
                alpha += w * dist.acceptance_overlap(p_row, q_row)
            beta = quality.get(task.id, float("nan")) if quality else float("nan")
            rows.append(SweepRow(task.id, float(t), alpha, alpha * beta))
    return rows


@dataclass(frozen=True)
class BalanceResult:
    mix: float
    divergences: dict[str, float]
    alphas: dict[str, float]
    u: float


def data_balance_finetune(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task_a: Task,
    task_b: Task,
    mix_grid: Sequence[float],
    trainer: TrainerConfig,
    spec_cfg: SpecConfig,
    eps: float = EPSILON_FLOOR,
) -> list[BalanceResult]:
    """Plain-CE fine-tuning baseline over a grid of data mixes.

    For each mix, a fresh clone of the drafter trains for the same budget on
    batches containing round(mix * batch) prefixes from task_b and the rest
    from task_a, with unweighted cross-entropy descent.  Reports exact
    per-task divergence, acceptance and the two-task unfairness per mix.
    """
    if trainer.batch_per_task is None:
        raise ValueError("data_balance_finetune needs an integer batch_per_task")
    results = []
    for mix_idx, mix in enumerate(mix_grid):
        if not (0.0 <= mix <= 1.0):
            raise ValueError(f"mix must lie in [0, 1], got {mix!r}")
        q = q_model.clone()
        optimizer = _Optimizer(trainer.optimizer, trainer.step_size)
        batch_size = trainer.batch_per_task
        n_b = round(mix * batch_size)
        n_a = batch_size - n_b
        for step in range(trainer.steps):
            rng_a = substream(trainer.seed, "balance", mix_idx, step, "a")
            rng_b = substream(trainer.seed, "balance", mix_idx, step, "b")
            batch = [task_a.sample_prefix(rng_a) for _ in range(n_a)]
            batch += [task_b.sample_prefix(rng_b) for _ in range(n_b)]
            _, grad = estimate_task_ce(p_model, q, task_a, batch, eps=eps)
            direction = {key: -row for key, row in grad.items()}
            _clip_direction(direction, trainer.grad_clip)
            optimizer.step(q, direction)
        divergences = {}
        alphas = {}
        for task in (task_a, task_b):
            d, _ = estimate_task_ce(p_model, q, task, None, eps=eps)
            divergences[task.id] = d
            m = task_metrics(p_model, q, task, spec_cfg, eps)
            alphas[task.id] = m.alpha
        results.append(BalanceResult(float(mix), divergences, alphas,
                                     unfairness(list(divergences.values()))))
    return results
