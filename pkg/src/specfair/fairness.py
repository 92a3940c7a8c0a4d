"""Task-level acceptance, divergence and speed-up accounting.

A task is a finite distribution over prompt prefixes plus an optional latent
posterior model describing what the "true" next-token law looks like on those
prefixes.  All metrics here are exact expectations over the prefix support
unless the sampled variants are asked for explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import dist
from .dist import EPSILON_FLOOR
from .engine import SpecConfig, expected_tokens, speedup
from .models import TabularSoftmaxModel
from .rng import sample_index

__all__ = [
    "Task",
    "TaskFamily",
    "TaskMetrics",
    "task_metrics",
    "sampled_task_metrics",
    "family_metrics",
    "unfairness",
    "certified_envelope",
    "ChainReport",
    "validate_chain",
    "FitnessReport",
    "validate_fitness_bound",
    "DisparityReport",
    "validate_disparity_condition",
    "RepresentationEstimate",
    "estimate_representation",
    "METRICS_HEADER",
    "metrics_csv_rows",
    "write_metrics_csv",
]

METRICS_HEADER = "task,alpha,kl,ce,speedup,r_p,r_q,envelope"

# arguments of f_gamma are clamped into [0, 1 - ENVELOPE_CLAMP] before use in
# the certified envelope, so d = 0 never degenerates
ENVELOPE_CLAMP = 1e-9


@dataclass(frozen=True)
class Task:
    """A named, finite distribution over prompt prefixes.

    weights must be non-negative and sum to 1 (drift up to 1e-6 is
    renormalized, as for any categorical).  posterior, when present, supplies
    the latent next-token law used for misalignment measurements.
    """

    id: str
    prefixes: tuple[tuple[int, ...], ...]
    weights: np.ndarray
    posterior: TabularSoftmaxModel | None = None

    def __post_init__(self):
        if len(self.prefixes) == 0:
            raise ValueError(f"task {self.id!r} has an empty prefix support")
        prefixes = tuple(tuple(int(t) for t in s) for s in self.prefixes)
        object.__setattr__(self, "prefixes", prefixes)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(prefixes),):
            raise ValueError(f"task {self.id!r}: {len(prefixes)} prefixes but weight shape {w.shape}")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError(f"task {self.id!r}: weights must be finite and non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"task {self.id!r}: weights sum to {total!r}")
        if abs(total - 1.0) > 1e-12:
            w = w / total
        object.__setattr__(self, "weights", w)

    def sample_prefix(self, rng: np.random.Generator) -> tuple[int, ...]:
        return self.prefixes[sample_index(rng, self.weights)]


@dataclass(frozen=True)
class TaskFamily:
    """At least two tasks with unique ids; order fixes tie-breaks."""

    tasks: tuple[Task, ...]

    def __post_init__(self):
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        if len(tasks) < 2:
            raise ValueError(f"a task family needs at least 2 tasks, got {len(tasks)}")
        ids = [t.id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"task ids must be unique, got {ids}")

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def ids(self) -> list[str]:
        return [t.id for t in self.tasks]


@dataclass(frozen=True)
class TaskMetrics:
    """Exact (or sampled) per-task quantities.

    alpha: expected acceptance rate E_s[sum_x min(p, q)].
    kl:    expected KL(p || q) in nats.
    ce:    expected cross-entropy -E_s sum_x p log q (the task divergence D_T).
    s:     expected speed-up E_s[f_gamma(alpha(s)) / (gamma c + 1)].
    r_p / r_q: expected total variation of verifier / drafter against the
        task posterior; NaN when the task carries no posterior.
    exact: False when estimated from sampled prefixes.
    """

    task_id: str
    alpha: float
    kl: float
    ce: float
    s: float
    r_p: float
    r_q: float
    exact: bool = True


def _metrics_over(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    prefixes: Sequence[tuple[int, ...]],
    weights: np.ndarray,
    cfg: SpecConfig,
    eps: float,
    exact: bool,
) -> TaskMetrics:
    alpha = kl = ce = s = 0.0
    r_p = r_q = 0.0
    has_u = task.posterior is not None
    for w, prefix in zip(weights, prefixes):
        p_row = p_model.predict(prefix)
        q_row = q_model.predict(prefix)
        a = dist.acceptance_overlap(p_row, q_row)
        alpha += w * a
        kl += w * dist.kl_divergence(p_row, q_row, eps)
        ce += w * dist.cross_entropy(p_row, q_row, eps)
        s += w * speedup(min(a, 1.0), cfg)
        if has_u:
            u_row = task.posterior.predict(prefix)
            r_p += w * dist.total_variation(u_row, p_row)
            r_q += w * dist.total_variation(u_row, q_row)
    if not has_u:
        r_p = r_q = float("nan")
    return TaskMetrics(task.id, alpha, kl, ce, s, r_p, r_q, exact)


def task_metrics(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    cfg: SpecConfig,
    eps: float = EPSILON_FLOOR,
) -> TaskMetrics:
    """Exact expectations of alpha, KL, cross-entropy, speed-up and misfits."""
    return _metrics_over(p_model, q_model, task, task.prefixes, task.weights, cfg, eps, True)


def sampled_task_metrics(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    task: Task,
    cfg: SpecConfig,
    n_samples: int,
    rng: np.random.Generator,
    eps: float = EPSILON_FLOOR,
) -> tuple[TaskMetrics, dict[str, float]]:
    """Monte Carlo variant for supports too large to sweep; returns standard errors."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    prefixes = [task.sample_prefix(rng) for _ in range(n_samples)]
    per = [
        _metrics_over(p_model, q_model, task, [s], np.asarray([1.0]), cfg, eps, False)
        for s in prefixes
    ]
    fields = ["alpha", "kl", "ce", "s", "r_p", "r_q"]
    means = {f: float(np.mean([getattr(m, f) for m in per])) for f in fields}
    stderr = {
        f: float(np.std([getattr(m, f) for m in per], ddof=1) / math.sqrt(n_samples))
        for f in fields
    }
    return TaskMetrics(task.id, exact=False, **means), stderr


def family_metrics(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    family: TaskFamily,
    cfg: SpecConfig,
    eps: float = EPSILON_FLOOR,
) -> list[TaskMetrics]:
    """task_metrics for every task, in family order."""
    return [task_metrics(p_model, q_model, t, cfg, eps) for t in family]


def unfairness(d_values: Sequence[float]) -> float:
    """Mean squared excess divergence over the best-served task.

    U = (1/m) sum_T (D_T - D_min)^2 with D_min = min_T D_T.  Invariant under
    shifting all divergences by a constant; zero iff all tasks are served
    equally.
    """
    d = np.asarray(d_values, dtype=float)
    if d.size == 0:
        raise ValueError("unfairness needs at least one divergence value")
    return float(np.mean((d - d.min()) ** 2))


def certified_envelope(d: float, cfg: SpecConfig) -> float:
    """Certified speed-up lower bound from a task divergence of d nats.

    g(d) = f_gamma(1 - sqrt(d/2)) / (gamma c + 1), with the f argument clamped
    into [0, 1 - 1e-9].  Decreasing in d, so a divergence gap certifies a
    speed-up gap.
    """
    if d < 0.0:
        raise ValueError(f"divergence must be >= 0, got {d!r}")
    arg = min(max(1.0 - math.sqrt(d / 2.0), 0.0), 1.0 - ENVELOPE_CLAMP)
    return speedup(arg, cfg)


# -- theorem validators -----------------------------------------------------


@dataclass(frozen=True)
class ChainReport:
    """Per-task check of S_T >= f(alpha_T)/(gc+1) >= f-of-KL >= f-of-CE bounds.

    margins holds the three successive differences; all must be >= -slack.
    """

    task_id: str
    s_expected: float
    s_at_mean_alpha: float
    kl_bound: float
    ce_bound: float
    margins: tuple[float, float, float]
    ok: bool


def _clamped_speedup(arg: float, cfg: SpecConfig) -> float:
    return speedup(min(max(arg, 0.0), 1.0 - ENVELOPE_CLAMP), cfg)


def validate_chain(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    family: TaskFamily,
    cfg: SpecConfig,
    slack: float = 1e-9,
    eps: float = EPSILON_FLOOR,
) -> list[ChainReport]:
    """Check the monotone speed-up bound chain for every task.

    S_T >= f(alpha_T)/(gc+1) by convexity of f, >= the KL-based bound by
    Pinsker, >= the cross-entropy bound because CE >= KL.  The gap between
    s_expected and s_at_mean_alpha is the Jensen slack from averaging over
    prefixes and is reported, not asserted.
    """
    reports = []
    for task in family:
        m = task_metrics(p_model, q_model, task, cfg, eps)
        s1 = _clamped_speedup(m.alpha, cfg) if m.alpha >= 1.0 else speedup(m.alpha, cfg)
        s2 = _clamped_speedup(1.0 - math.sqrt(m.kl / 2.0), cfg)
        s3 = _clamped_speedup(1.0 - math.sqrt(m.ce / 2.0), cfg)
        margins = (m.s - s1, s1 - s2, s2 - s3)
        ok = all(g >= -slack for g in margins)
        reports.append(ChainReport(task.id, m.s, s1, s2, s3, margins, ok))
    return reports


@dataclass(frozen=True)
class FitnessReport:
    """|alpha_T - (1 - r_q)| <= r_p check; skipped when r_p > r_q."""

    task_id: str
    alpha: float
    r_p: float
    r_q: float
    deviation: float
    skipped: bool
    ok: bool


def validate_fitness_bound(
    metrics: Sequence[TaskMetrics], slack: float = 1e-9
) -> list[FitnessReport]:
    """Check that acceptance tracks drafter fitness within the verifier misfit.

    Tasks whose measured r_p exceeds r_q violate the bound's hypothesis and
    are flagged as skipped rather than failed.  Tasks without a posterior are
    skipped likewise.
    """
    reports = []
    for m in metrics:
        if math.isnan(m.r_p) or math.isnan(m.r_q) or m.r_p > m.r_q:
            reports.append(FitnessReport(m.task_id, m.alpha, m.r_p, m.r_q, float("nan"), True, True))
            continue
        deviation = abs(m.alpha - (1.0 - m.r_q))
        ok = deviation <= m.r_p + slack
        reports.append(FitnessReport(m.task_id, m.alpha, m.r_p, m.r_q, deviation, False, ok))
    return reports


@dataclass(frozen=True)
class DisparityReport:
    """Outcome of the constructive disparity check for an ordered task pair.

    When r_q^j - r_q^i > r_p^i + r_p^j, task i must beat task j strictly on
    acceptance, and the certified speed-ups (at the task-mean alpha) must gap
    by at least (alpha_i - alpha_j)/(gamma c + 1).  expected_gap carries the
    expectation-form speed-up difference for reference; it is reported only.
    """

    task_i: str
    task_j: str
    condition_met: bool
    alpha_gap: float
    certified_gap: float
    required_gap: float
    expected_gap: float
    ok: bool


def validate_disparity_condition(
    m_i: TaskMetrics, m_j: TaskMetrics, cfg: SpecConfig, slack: float = 1e-9
) -> DisparityReport:
    """Check that a sufficient misfit gap forces an acceptance/speed-up gap."""
    condition = (m_j.r_q - m_i.r_q) > (m_i.r_p + m_j.r_p)
    alpha_gap = m_i.alpha - m_j.alpha
    s_i = _clamped_speedup(m_i.alpha, cfg) if m_i.alpha >= 1.0 else speedup(m_i.alpha, cfg)
    s_j = _clamped_speedup(m_j.alpha, cfg) if m_j.alpha >= 1.0 else speedup(m_j.alpha, cfg)
    certified_gap = s_i - s_j
    required = alpha_gap / (cfg.gamma * cfg.cost_ratio + 1.0)
    if not condition:
        return DisparityReport(m_i.task_id, m_j.task_id, False, alpha_gap,
                               certified_gap, required, m_i.s - m_j.s, True)
    ok = alpha_gap > 0.0 and certified_gap >= required - slack
    return DisparityReport(m_i.task_id, m_j.task_id, True, alpha_gap,
                           certified_gap, required, m_i.s - m_j.s, ok)


# -- representation estimation ----------------------------------------------


@dataclass(frozen=True)
class RepresentationEstimate:
    """Ranked task frequencies among drafter generations from the empty prefix.

    ranked is (task_id, probability) sorted most- to least-represented, with
    probabilities normalized over classified samples only; rejected counts
    unclassifiable generations.
    """

    ranked: tuple[tuple[str, float], ...]
    counts: dict[str, int]
    rejected: int
    samples: int


def estimate_representation(
    q_model: TabularSoftmaxModel,
    classifier: Callable[[tuple[int, ...]], str | None],
    task_ids: Sequence[str],
    k: int,
    rng: np.random.Generator,
    gen_tokens: int = 2,
) -> RepresentationEstimate:
    """Estimate the drafter's task prior by sampling K short generations.

    Each sample is gen_tokens of autoregressive drafter output starting from
    the empty prefix, classified into a task (or rejected).  Deterministic
    given the generator.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if gen_tokens < 1:
        raise ValueError(f"gen_tokens must be >= 1, got {gen_tokens}")
    counts = {tid: 0 for tid in task_ids}
    rejected = 0
    cdf_cache: dict[tuple[int, ...], np.ndarray] = {}
    for _ in range(k):
        ctx: tuple[int, ...] = ()
        for _ in range(gen_tokens):
            key = q_model.key(ctx)
            cdf = cdf_cache.get(key)
            if cdf is None:
                cdf = np.cumsum(q_model.predict(ctx))
                cdf_cache[key] = cdf
            u = rng.random() * cdf[-1]
            token = min(int(np.searchsorted(cdf, u, side="right")), q_model.vocab_size - 1)
            ctx = ctx + (token,)
        label = classifier(ctx)
        if label is None or label not in counts:
            rejected += 1
        else:
            counts[label] += 1
    classified = k - rejected
    if classified == 0:
        probs = {tid: float("nan") for tid in task_ids}
    else:
        probs = {tid: counts[tid] / classified for tid in task_ids}
    ranked = tuple(sorted(probs.items(), key=lambda kv: -kv[1]))
    return RepresentationEstimate(ranked, counts, rejected, k)


# -- CSV snapshot ------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def metrics_csv_rows(metrics: Sequence[TaskMetrics], cfg: SpecConfig) -> list[str]:
    rows = [METRICS_HEADER]
    for m in metrics:
        envelope = certified_envelope(m.ce, cfg)
        rows.append(
            ",".join(
                [m.task_id, _fmt(m.alpha), _fmt(m.kl), _fmt(m.ce), _fmt(m.s),
                 _fmt(m.r_p), _fmt(m.r_q), _fmt(envelope)]
            )
        )
    return rows


def write_metrics_csv(path, metrics: Sequence[TaskMetrics], cfg: SpecConfig) -> None:
    """Write the per-task snapshot with 17-significant-digit floats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(metrics_csv_rows(metrics, cfg)) + "\n")
