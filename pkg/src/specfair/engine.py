"""Speculative decoding: draft with q, verify with p, resample on rejection.

One verifier iteration drafts gamma tokens autoregressively from the drafter
q, then walks them left to right accepting each token x with probability
min(1, p(x)/q(x)).  The first rejected position is replaced by a draw from the
residual distribution norm(max(p - q, 0)) and the step ends; if every draft
survives, one bonus token is drawn from p at the extended context.  The law of
the emitted tokens is exactly the verifier's, which enumerate_step_distribution
checks by brute force.

Wall time is modeled, not measured: a step that emits k tokens costs
gamma * cost_ratio + 1 verifier-equivalent passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import VocabularyMismatchError, acceptance_overlap, residual
from .models import TabularSoftmaxModel
from .rng import sample_index

__all__ = [
    "SpecConfig",
    "StepTrace",
    "EnumerationTooLargeError",
    "speculative_step",
    "enumerate_step_distribution",
    "expected_tokens",
    "speedup",
    "vanilla_decode",
]

_MAX_ENUM_VOCAB = 16
_MAX_ENUM_GAMMA = 3


@dataclass(frozen=True)
class SpecConfig:
    """Speculation span gamma >= 1 and drafter/verifier cost ratio in [0, 1)."""

    gamma: int = 4
    cost_ratio: float = 0.1

    def __post_init__(self):
        if not isinstance(self.gamma, int) or self.gamma < 1:
            raise ValueError(f"gamma must be an integer >= 1, got {self.gamma!r}")
        if not (0.0 <= self.cost_ratio < 1.0):
            raise ValueError(f"cost_ratio must lie in [0, 1), got {self.cost_ratio!r}")


@dataclass
class StepTrace:
    """Record of one speculative step.

    emitted always holds accepted_prefix_len + 1 tokens: the surviving draft
    prefix plus either the residual replacement or the bonus token.
    per_token_accept_probs holds min(1, p/q) at each draft position that was
    examined (accepted positions plus the rejected one, if any).
    """

    drafted: list[int]
    accepted_prefix_len: int
    emitted: list[int]
    per_token_accept_probs: list[float] = field(default_factory=list)


class EnumerationTooLargeError(ValueError):
    """Branch enumeration was asked for beyond its tractable size limits."""


def _check_models(p_model: TabularSoftmaxModel, q_model: TabularSoftmaxModel) -> None:
    if p_model.vocab_size != q_model.vocab_size:
        raise VocabularyMismatchError(
            f"vocabulary mismatch: verifier {p_model.vocab_size} vs drafter {q_model.vocab_size}"
        )


def speculative_step(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    prefix: Sequence[int],
    cfg: SpecConfig,
    rng: np.random.Generator,
) -> StepTrace:
    """Run one draft/verify/resample iteration starting from ``prefix``."""
    _check_models(p_model, q_model)
    ctx = list(prefix)
    drafted: list[int] = []
    draft_rows: list[np.ndarray] = []
    for _ in range(cfg.gamma):
        q_row = q_model.predict(ctx)
        token = sample_index(rng, q_row)
        drafted.append(token)
        draft_rows.append(q_row)
        ctx.append(token)

    accept_probs: list[float] = []
    accepted = 0
    for i, token in enumerate(drafted):
        p_row = p_model.predict(list(prefix) + drafted[:i])
        q_row = draft_rows[i]
        ratio = p_row[token] / q_row[token]
        prob = min(1.0, float(ratio))
        accept_probs.append(prob)
        if rng.random() < prob:
            accepted += 1
            continue
        replacement = sample_index(rng, residual(p_row, q_row))
        emitted = drafted[:accepted] + [replacement]
        return StepTrace(drafted, accepted, emitted, accept_probs)

    bonus_row = p_model.predict(ctx)
    bonus = sample_index(rng, bonus_row)
    return StepTrace(drafted, accepted, drafted + [bonus], accept_probs)


def enumerate_step_distribution(
    p_model: TabularSoftmaxModel,
    q_model: TabularSoftmaxModel,
    prefix: Sequence[int],
    cfg: SpecConfig,
) -> np.ndarray:
    """Exact law of the first emitted token, by summing over every branch.

    Walks the full tree of (draft token, accept/reject, residual draw)
    outcomes with exact probabilities and accumulates the marginal of the
    first emitted token.  Only feasible at toy sizes, hence the hard limits
    |V| <= 16 and gamma <= 3.  Agreement of this law with the verifier's
    next-token distribution is what makes the sampler lossless.
    """
    _check_models(p_model, q_model)
    vocab = p_model.vocab_size
    if vocab > _MAX_ENUM_VOCAB or cfg.gamma > _MAX_ENUM_GAMMA:
        raise EnumerationTooLargeError(
            f"enumeration supports |V| <= {_MAX_ENUM_VOCAB} and gamma <= {_MAX_ENUM_GAMMA}, "
            f"got |V| = {vocab}, gamma = {cfg.gamma}"
        )

    out = np.zeros(vocab)
    base = tuple(int(t) for t in prefix)

    def walk(ctx: tuple[int, ...], pos: int, weight: float, first: int | None) -> None:
        if pos == cfg.gamma:
            # all gamma drafts accepted; the bonus draw cannot change the
            # first emitted token (gamma >= 1 guarantees `first` is set)
            out[first] += weight
            return
        q_row = q_model.predict(ctx)
        p_row = p_model.predict(ctx)
        for x in range(vocab):
            draft_w = weight * q_row[x]
            if draft_w == 0.0:
                continue
            accept = min(1.0, float(p_row[x] / q_row[x]))
            if accept > 0.0:
                walk(ctx + (x,), pos + 1, draft_w * accept, x if first is None else first)
            reject_w = draft_w * (1.0 - accept)
            if reject_w > 0.0:
                if first is None:
                    out[:] = out + reject_w * residual(p_row, q_row)
                else:
                    out[first] += reject_w

    walk(base, 0, 1.0, None)
    return out


def expected_tokens(alpha: float, gamma: int) -> float:
    """Expected emitted tokens per step, sum_{k=0}^{gamma} alpha^k.

    The summation form stays exact across the whole closed interval [0, 1]
    (the rational form (1 - alpha^(gamma+1))/(1 - alpha) degenerates at 1).
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    if not isinstance(gamma, int) or gamma < 1:
        raise ValueError(f"gamma must be an integer >= 1, got {gamma!r}")
    return float(np.sum(np.asarray(alpha) ** np.arange(gamma + 1)))


def speedup(alpha: float, cfg: SpecConfig) -> float:
    """Modeled wall-time speed-up: expected_tokens / (gamma * cost_ratio + 1)."""
    return expected_tokens(alpha, cfg.gamma) / (cfg.gamma * cfg.cost_ratio + 1.0)


def vanilla_decode(
    p_model: TabularSoftmaxModel,
    prefix: Sequence[int],
    n_tokens: int,
    rng: np.random.Generator,
) -> list[int]:
    """Plain autoregressive sampling from the verifier, as a baseline."""
    ctx = list(prefix)
    out: list[int] = []
    for _ in range(n_tokens):
        token = sample_index(rng, p_model.predict(ctx))
        out.append(token)
        ctx.append(token)
    return out
