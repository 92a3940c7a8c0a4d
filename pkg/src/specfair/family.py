"""Construction of synthetic task families with controlled misfits.

Tasks get disjoint, equally sized contiguous token ranges, so one verifier and
one drafter can behave differently per task while classification of generated
text stays exact.  Per task, a latent posterior u is drawn over the task's
range, and the verifier/drafter rows are mixtures (1 - w) u + w z toward a
seeded anchor z; the mix weight w is found by bisection until the measured
prefix-averaged total variation hits the requested misfit.  Targets are
reachable up to 1 - 1/range_size; beyond that the family is declared
infeasible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dist import EPSILON_FLOOR
from .fairness import Task, TaskFamily
from .models import PAD_TOKEN, TabularSoftmaxModel
from .rng import substream

__all__ = [
    "TaskSpec",
    "FamilySpec",
    "InfeasibleFamilyError",
    "SyntheticFamily",
    "make_synthetic_family",
    "token_range_classifier",
]

# fully enumerate per-task context keys up to this many; beyond it only the
# support keys are materialized and off-support contexts fall back to uniform
_MAX_ENUMERATED_KEYS = 4096


@dataclass(frozen=True)
class TaskSpec:
    """Requested misfits for one synthetic task.

    r_p / r_q are the target expected total variation of verifier / drafter
    against the latent posterior over the task's prefix distribution.  prior
    is the task's relative weight in the drafter's empty-context row.
    """

    id: str
    r_p: float
    r_q: float
    prior: float = 1.0
    prefix_support: int = 8

    def __post_init__(self):
        for name in ("r_p", "r_q"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"task {self.id!r}: {name} must lie in [0, 1), got {v!r}")
        if self.prior < 0.0:
            raise ValueError(f"task {self.id!r}: prior must be >= 0")
        if self.prefix_support < 1:
            raise ValueError(f"task {self.id!r}: prefix_support must be >= 1")


@dataclass(frozen=True)
class FamilySpec:
    """Family-wide construction knobs plus the per-task specs."""

    tasks: tuple[TaskSpec, ...]
    prefix_length: int = 3
    matched_entropy: bool = True
    concentration: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if len(self.tasks) < 2:
            raise ValueError(f"a family spec needs at least 2 tasks, got {len(self.tasks)}")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"task ids must be unique, got {ids}")
        if self.prefix_length < 1:
            raise ValueError("prefix_length must be >= 1")
        if self.concentration <= 0.0:
            raise ValueError("concentration must be > 0")


class InfeasibleFamilyError(ValueError):
    """A requested misfit exceeds what the vocabulary partition can express."""


@dataclass
class SyntheticFamily:
    """Built artifacts: shared verifier/drafter pair plus the task family."""

    verifier: TabularSoftmaxModel
    drafter: TabularSoftmaxModel
    family: TaskFamily
    ranges: dict[str, tuple[int, int]] = field(default_factory=dict)
    classifier: Callable[[tuple[int, ...]], str | None] = lambda seq: None


def token_range_classifier(ranges: dict[str, tuple[int, int]]) -> Callable[[tuple[int, ...]], str | None]:
    """Classify a generation by which task's token range its first token hits."""
    lookup: dict[int, str] = {}
    for tid, (start, stop) in ranges.items():
        for tok in range(start, stop):
            lookup[tok] = tid

    def classify(seq: tuple[int, ...]) -> str | None:
        if len(seq) == 0:
            return None
        return lookup.get(int(seq[0]))

    return classify


def _embed(range_probs: np.ndarray, start: int, vocab_size: int, eps: float) -> np.ndarray:
    """Logit row for a distribution supported on [start, start+len); off-range
    mass sits at the eps floor."""
    full = np.full(vocab_size, eps)
    full[start : start + range_probs.size] = np.maximum(range_probs, eps)
    return np.log(full)


def _distinct_keys(
    tokens: np.ndarray, order: int, count: int, rng: np.random.Generator
) -> tuple[list[tuple[int, ...]], list[tuple[int, ...]]]:
    """(support keys, all materialized keys) over the task's token range."""
    n_keys = len(tokens) ** order
    if count > n_keys:
        raise InfeasibleFamilyError(
            f"prefix_support {count} exceeds the {n_keys} distinct order-{order} contexts "
            f"available on a range of {len(tokens)} tokens"
        )
    if n_keys <= _MAX_ENUMERATED_KEYS:
        universe = [tuple(int(t) for t in key) for key in itertools.product(tokens, repeat=order)]
        picked = rng.choice(n_keys, size=count, replace=False)
        support = [universe[i] for i in sorted(int(i) for i in picked)]
        return support, universe
    seen: set[tuple[int, ...]] = set()
    support = []
    while len(support) < count:
        key = tuple(int(tokens[i]) for i in rng.integers(0, len(tokens), size=order))
        if key not in seen:
            seen.add(key)
            support.append(key)
    return support, list(support)


def _anchor_rows(
    u_rows: np.ndarray, target: float, range_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Seeded anchors z with prefix-averaged TV(u, z) guaranteed >= target.

    Each anchor blends a Dirichlet draw with the one-hot at u's least likely
    token; the blend leans further onto the one-hot as the target approaches
    the 1 - 1/range_size ceiling.
    """
    g = rng.dirichlet(np.ones(range_size), size=u_rows.shape[0])
    eta = min(0.5, max(0.0, 1.0 - 1.0 / range_size - target))
    while True:
        z = eta * g
        z[np.arange(u_rows.shape[0]), np.argmin(u_rows, axis=1)] += 1.0 - eta
        tv = 0.5 * np.abs(u_rows - z).sum(axis=1)
        if tv.mean() >= target or eta <= 1e-9:
            return z
        eta *= 0.5


def _bisect_mix(
    u_rows: np.ndarray, z_rows: np.ndarray, weights: np.ndarray, target: float
) -> float:
    """Mix weight w with weighted-average TV(u, (1-w)u + w z) == target."""
    if target <= 0.0:
        return 0.0

    def measured(w: float) -> float:
        mixed = (1.0 - w) * u_rows + w * z_rows
        return float(np.dot(weights, 0.5 * np.abs(u_rows - mixed).sum(axis=1)))

    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if measured(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def make_synthetic_family(
    spec: FamilySpec,
    vocab_size: int,
    order: int,
    seed: int,
    eps: float = EPSILON_FLOOR,
) -> SyntheticFamily:
    """Build a verifier/drafter pair and tasks matching the requested misfits.

    Deterministic given (spec, vocab_size, order, seed): identical inputs give
    bit-identical models.  Measured misfits land within 0.02 of the targets
    (in practice within bisection precision).
    """
    if order < 1:
        raise ValueError("family construction needs order >= 1 (order 0 has a single shared row)")
    if spec.prefix_length < order:
        raise ValueError(f"prefix_length {spec.prefix_length} must be >= order {order}")
    m = len(spec.tasks)
    range_size = vocab_size // m
    if range_size < 2:
        raise InfeasibleFamilyError(
            f"vocab_size {vocab_size} too small for {m} tasks (needs >= 2 tokens each)"
        )
    ceiling = 1.0 - 1.0 / range_size
    for ts in spec.tasks:
        for name, target in (("r_p", ts.r_p), ("r_q", ts.r_q)):
            if target > ceiling + 1e-12:
                raise InfeasibleFamilyError(
                    f"task {ts.id!r}: {name}={target} exceeds the reachable ceiling "
                    f"{ceiling:.6f} for a range of {range_size} tokens"
                )

    verifier = TabularSoftmaxModel(vocab_size, order, role="verifier")
    drafter = TabularSoftmaxModel(vocab_size, order, role="drafter")

    max_support = max(ts.prefix_support for ts in spec.tasks)
    base_rows = None
    if spec.matched_entropy:
        base_rng = substream(seed, "family", "base")
        base_rows = base_rng.dirichlet(spec.concentration * np.ones(range_size), size=max_support)

    tasks = []
    ranges: dict[str, tuple[int, int]] = {}
    for i, ts in enumerate(spec.tasks):
        start = i * range_size
        tokens = np.arange(start, start + range_size)
        ranges[ts.id] = (start, start + range_size)

        key_rng = substream(seed, "family", i, "keys")
        support_keys, all_keys = _distinct_keys(tokens, order, ts.prefix_support, key_rng)
        support_index = {key: j for j, key in enumerate(support_keys)}

        post_rng = substream(seed, "family", i, "posterior")
        if spec.matched_entropy:
            perm = post_rng.permutation(range_size)
            u_support = base_rows[: ts.prefix_support][:, perm]
            weights = np.full(ts.prefix_support, 1.0 / ts.prefix_support)
        else:
            u_support = post_rng.dirichlet(spec.concentration * np.ones(range_size),
                                           size=ts.prefix_support)
            weights = post_rng.dirichlet(np.ones(ts.prefix_support))

        extra_keys = [key for key in all_keys if key not in support_index]
        u_extra = post_rng.dirichlet(spec.concentration * np.ones(range_size),
                                     size=len(extra_keys)) if extra_keys else np.zeros((0, range_size))

        role_rows = {}
        for role, target in (("p", ts.r_p), ("q", ts.r_q)):
            anchor_rng = substream(seed, "family", i, "anchor", role)
            z_support = _anchor_rows(u_support, target, range_size, anchor_rng)
            w = _bisect_mix(u_support, z_support, weights, target)
            rows_support = (1.0 - w) * u_support + w * z_support if w > 0.0 else u_support.copy()
            if extra_keys:
                z_extra = _anchor_rows(u_extra, target, range_size, anchor_rng)
                rows_extra = (1.0 - w) * u_extra + w * z_extra if w > 0.0 else u_extra.copy()
            else:
                rows_extra = u_extra
            role_rows[role] = (rows_support, rows_extra)

        posterior = TabularSoftmaxModel(vocab_size, order, role="posterior")
        for j, key in enumerate(support_keys):
            posterior.set_row(key, _embed(u_support[j], start, vocab_size, eps))
            verifier.set_row(key, _embed(role_rows["p"][0][j], start, vocab_size, eps))
            drafter.set_row(key, _embed(role_rows["q"][0][j], start, vocab_size, eps))
        for j, key in enumerate(extra_keys):
            posterior.set_row(key, _embed(u_extra[j], start, vocab_size, eps))
            verifier.set_row(key, _embed(role_rows["p"][1][j], start, vocab_size, eps))
            drafter.set_row(key, _embed(role_rows["q"][1][j], start, vocab_size, eps))

        pad_rng = substream(seed, "family", i, "prefixpad")
        prefixes = []
        for key in support_keys:
            head = tuple(int(tokens[t]) for t in
                         pad_rng.integers(0, range_size, size=spec.prefix_length - order))
            prefixes.append(head + key)
        tasks.append(Task(ts.id, tuple(prefixes), weights, posterior))

    # empty-context row: the drafter's (and verifier's) prior over task ranges
    priors = np.asarray([ts.prior for ts in spec.tasks], dtype=float)
    if priors.sum() <= 0.0:
        raise ValueError("at least one task prior must be positive")
    priors = priors / priors.sum()
    boundary = np.zeros(vocab_size)
    for i, ts in enumerate(spec.tasks):
        start, stop = ranges[ts.id]
        boundary[start:stop] = priors[i] / (stop - start)
    boundary_key = (PAD_TOKEN,) * order
    boundary_logits = np.log(np.maximum(boundary, eps))
    verifier.set_row(boundary_key, boundary_logits)
    drafter.set_row(boundary_key, boundary_logits)

    family = TaskFamily(tuple(tasks))
    built = SyntheticFamily(verifier, drafter, family, ranges, token_range_classifier(ranges))
    _check_measured_misfits(built, spec)
    return built


def _check_measured_misfits(built: SyntheticFamily, spec: FamilySpec) -> None:
    from .dist import total_variation

    for ts, task in zip(spec.tasks, built.family):
        r_p = r_q = 0.0
        for w, prefix in zip(task.weights, task.prefixes):
            u_row = task.posterior.predict(prefix)
            r_p += w * total_variation(u_row, built.verifier.predict(prefix))
            r_q += w * total_variation(u_row, built.drafter.predict(prefix))
        if abs(r_p - ts.r_p) > 0.02 or abs(r_q - ts.r_q) > 0.02:
            raise RuntimeError(
                f"task {ts.id!r}: constructed misfits (r_p={r_p:.4f}, r_q={r_q:.4f}) "
                f"missed targets ({ts.r_p}, {ts.r_q})"
            )
