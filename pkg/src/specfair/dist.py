"""Exact arithmetic on categorical next-token distributions.

Distributions are 1-D numpy arrays over a shared token vocabulary.  All
logarithms are natural, so divergences come out in nats.  Wherever a log of the
second argument is taken it is floored at ``eps`` (default 1e-12) so that
divergences stay finite; the floor is small enough that it never moves a value
by more than ~1e-9 at desk-scale vocabularies.
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax

EPSILON_FLOOR = 1e-12

# sums within _SUM_TOL of 1 are accepted as-is, drift up to _RENORM_TOL is
# silently renormalized, anything worse is rejected
_SUM_TOL = 1e-12
_RENORM_TOL = 1e-6

__all__ = [
    "EPSILON_FLOOR",
    "VocabularyMismatchError",
    "DegenerateResidualError",
    "InvalidTemperatureError",
    "categorical",
    "acceptance_overlap",
    "total_variation",
    "kl_divergence",
    "cross_entropy",
    "entropy",
    "residual",
    "temperature_scale",
]


class VocabularyMismatchError(ValueError):
    """The two distributions do not share a vocabulary."""


class DegenerateResidualError(ValueError):
    """max(p - q, 0) carries no mass, so the residual distribution is undefined."""


class InvalidTemperatureError(ValueError):
    """Temperature must be a non-negative real."""


def categorical(probs, *, renormalize_tol: float = _RENORM_TOL) -> np.ndarray:
    """Validate a probability vector and return it as a float array.

    Entries must be finite and non-negative.  A total within 1e-12 of 1 is
    accepted unchanged, drift up to ``renormalize_tol`` is renormalized, and
    anything beyond that is rejected.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"expected a 1-D vector with at least 2 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any(p < 0.0):
        raise ValueError("probabilities must be non-negative")
    total = float(p.sum())
    if abs(total - 1.0) <= _SUM_TOL:
        return p
    if abs(total - 1.0) <= renormalize_tol:
        return p / total
    raise ValueError(f"probabilities sum to {total!r}, outside the renormalization tolerance")


def _check_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise VocabularyMismatchError(f"vocabulary mismatch: shapes {p.shape} vs {q.shape}")
    return p, q


def acceptance_overlap(p, q) -> float:
    """Mass where the two distributions agree: sum_x min(p(x), q(x)).

    This equals the marginal probability that a token drafted from q survives
    the min(1, p/q) acceptance test, and also 1 - total_variation(p, q).
    """
    p, q = _check_pair(p, q)
    return float(np.minimum(p, q).sum())


def total_variation(p, q) -> float:
    """Total variation distance, (1/2) sum_x |p(x) - q(x)|."""
    p, q = _check_pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


def kl_divergence(p, q, eps: float = EPSILON_FLOOR) -> float:
    """KL(p || q) in nats, with q floored at eps wherever p > 0.

    Terms with p(x) = 0 contribute nothing even if q(x) = 0.  The floor can
    push the sum microscopically negative when p itself has sub-eps mass, so
    the result is clamped at 0.
    """
    p, q = _check_pair(p, q)
    mask = p > 0.0
    ps = p[mask]
    val = float(np.dot(ps, np.log(ps) - np.log(np.maximum(q[mask], eps))))
    return max(0.0, val)


def cross_entropy(p, q, eps: float = EPSILON_FLOOR) -> float:
    """Cross-entropy -sum_x p(x) log q(x) in nats, q floored at eps.

    Decomposes exactly as entropy(p) + kl_divergence(p, q) under the same
    floor.
    """
    p, q = _check_pair(p, q)
    mask = p > 0.0
    return float(-np.dot(p[mask], np.log(np.maximum(q[mask], eps))))


def entropy(p) -> float:
    """Shannon entropy of p in nats."""
    p = np.asarray(p, dtype=float)
    mask = p > 0.0
    return float(-np.dot(p[mask], np.log(p[mask])))


def residual(p, q) -> np.ndarray:
    """Normalized positive part of p - q, i.e. max(p - q, 0) / sum(max(p - q, 0)).

    This is the distribution a rejected draft token is replaced from.  Its
    normalizer equals 1 - acceptance_overlap(p, q); when that mass is zero
    (p = q) the residual is undefined and DegenerateResidualError is raised.
    """
    p, q = _check_pair(p, q)
    diff = np.maximum(p - q, 0.0)
    mass = float(diff.sum())
    if mass <= _SUM_TOL:
        raise DegenerateResidualError("p and q coincide; residual has no mass")
    return diff / mass


def temperature_scale(d, t: float, eps: float = EPSILON_FLOOR) -> np.ndarray:
    """Rescale a distribution to temperature t.

    t = 1 is the identity, t = 0 collapses to a one-hot at the argmax (ties
    broken by lowest index), t -> inf flattens toward uniform.  For t > 0 the
    result is softmax(log(max(d, eps)) / t).  Negative or NaN temperatures are
    rejected.
    """
    d = np.asarray(d, dtype=float)
    if not isinstance(t, (int, float)) or np.isnan(t) or t < 0.0:
        raise InvalidTemperatureError(f"temperature must be >= 0, got {t!r}")
    if t == 0.0:
        out = np.zeros_like(d)
        out[int(np.argmax(d))] = 1.0
        return out
    if t == 1.0:
        return d.copy()
    return softmax(np.log(np.maximum(d, eps)) / t)
