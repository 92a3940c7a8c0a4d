"""Tabular softmax language models over short contexts.

A model of order k keeps one logit row per distinct length-k context key, where
the key is the last k tokens of the prefix, left-padded with PAD_TOKEN for
prefixes shorter than k.  Missing rows behave as all-zero logits, i.e. a
uniform next-token distribution.  Rows are plain numpy arrays, so prediction is
a dictionary lookup plus a softmax, and the cross-entropy gradient with respect
to a row is available in closed form.
"""

from __future__ import annotations

import json
from typing import Iterator, Sequence

import numpy as np
from scipy.special import softmax

PAD_TOKEN = -1

__all__ = ["PAD_TOKEN", "context_key", "TabularSoftmaxModel"]


def context_key(prefix: Sequence[int], order: int) -> tuple[int, ...]:
    """Last ``order`` tokens of the prefix, left-padded with PAD_TOKEN."""
    if order == 0:
        return ()
    tail = tuple(int(t) for t in prefix[-order:]) if len(prefix) else ()
    return (PAD_TOKEN,) * (order - len(tail)) + tail


class TabularSoftmaxModel:
    """Next-token model: softmax over a stored logit row per context key.

    Args:
        vocab_size: number of tokens, at least 2.
        order: context length k >= 0 used for keying.
        role: free-form tag ("drafter", "verifier", "posterior", ...); runtime
            metadata only, not serialized.
    """

    __slots__ = ("vocab_size", "order", "role", "_rows")

    def __init__(self, vocab_size: int, order: int = 1, role: str = "model"):
        if int(vocab_size) < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        if int(order) < 0:
            raise ValueError(f"order must be >= 0, got {order}")
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self.role = role
        self._rows: dict[tuple[int, ...], np.ndarray] = {}

    # -- row access ---------------------------------------------------------

    def key(self, prefix: Sequence[int]) -> tuple[int, ...]:
        return context_key(prefix, self.order)

    def has_row(self, key: tuple[int, ...]) -> bool:
        return key in self._rows

    def logits(self, prefix: Sequence[int]) -> np.ndarray:
        """Logit row for a prefix (a copy; zeros when no row is stored)."""
        row = self._rows.get(self.key(prefix))
        if row is None:
            return np.zeros(self.vocab_size)
        return row.copy()

    def set_row(self, key: tuple[int, ...], logits) -> None:
        key = tuple(int(t) for t in key)
        if len(key) != self.order:
            raise ValueError(f"key length {len(key)} does not match order {self.order}")
        row = np.asarray(logits, dtype=float)
        if row.shape != (self.vocab_size,):
            raise ValueError(f"row shape {row.shape} does not match vocab size {self.vocab_size}")
        if not np.all(np.isfinite(row)):
            raise ValueError(f"logit row for key {key} contains non-finite values")
        self._rows[key] = row.copy()

    def add_to_row(self, key: tuple[int, ...], delta: np.ndarray) -> None:
        """Accumulate a logit update, materializing the row if needed."""
        row = self._rows.get(key)
        if row is None:
            row = np.zeros(self.vocab_size)
            self._rows[key] = row
        row += delta

    def items(self) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        """Stored rows in sorted key order (deterministic)."""
        for key in sorted(self._rows):
            yield key, self._rows[key]

    def __len__(self) -> int:
        return len(self._rows)

    # -- prediction and gradient --------------------------------------------

    def predict(self, prefix: Sequence[int]) -> np.ndarray:
        """Next-token distribution softmax(logit row) for the given prefix."""
        row = self._rows.get(self.key(prefix))
        if row is None:
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        return softmax(row)

    def ce_gradient(self, prefix: Sequence[int], target) -> np.ndarray:
        """Gradient of cross_entropy(target, predict(prefix)) w.r.t. the logit row.

        Closed form: predict(prefix) - target.  Entries always sum to zero.
        """
        target = np.asarray(target, dtype=float)
        if target.shape != (self.vocab_size,):
            raise ValueError(f"target shape {target.shape} does not match vocab size {self.vocab_size}")
        return self.predict(prefix) - target

    # -- lifecycle ----------------------------------------------------------

    def clone(self) -> "TabularSoftmaxModel":
        other = TabularSoftmaxModel(self.vocab_size, self.order, self.role)
        other._rows = {key: row.copy() for key, row in self._rows.items()}
        return other

    def fingerprint(self) -> str:
        """Hex digest over all rows; equal iff the parameters are bit-identical."""
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.vocab_size}:{self.order}".encode())
        for key, row in self.items():
            h.update(repr(key).encode())
            h.update(row.tobytes())
        return h.hexdigest()

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "vocab_size": self.vocab_size,
            "rows": [
                {"key": list(key), "logits": [float(v) for v in row]}
                for key, row in self.items()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, role: str = "model") -> "TabularSoftmaxModel":
        for field in ("order", "vocab_size", "rows"):
            if field not in doc:
                raise ValueError(f"model document is missing field {field!r}")
        model = cls(doc["vocab_size"], doc["order"], role)
        for entry in doc["rows"]:
            if "key" not in entry or "logits" not in entry:
                raise ValueError("model row entries need 'key' and 'logits'")
            model.set_row(tuple(entry["key"]), np.asarray(entry["logits"], dtype=float))
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, role: str = "model") -> "TabularSoftmaxModel":
        return cls.from_dict(json.loads(text), role)
