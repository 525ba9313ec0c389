"""Domain types shared across the package.

Policies are explicit lookup tables over a finite context set, and a nested
sequence of policy classes is stored as one policy table plus a list of
index sets.  Distributions are plain float arrays; the helpers here
validate them where a boundary needs it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

PROB_TOL = 1e-9


class PolicyNotInSequence(KeyError):
    pass


def check_distribution(probs: np.ndarray, *, floor: float = 0.0, what: str = "distribution") -> None:
    """Raise ``ValueError`` unless ``probs`` is a distribution with every entry >= ``floor``."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(probs)):
        raise ValueError(f"{what} has non-finite entries")
    if abs(probs.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{what} sums to {probs.sum():.12g}, not 1")
    if probs.min() < floor - PROB_TOL:
        raise ValueError(f"{what} entry {probs.min():.3g} below floor {floor:.3g}")


def normalize(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0 or not np.isfinite(total):
        raise ValueError("cannot normalize weights with non-positive or non-finite mass")
    return weights / total


def softmax(log_weights: np.ndarray) -> np.ndarray:
    z = np.exp(log_weights - log_weights.max())
    return z / z.sum()


def mix_with_uniform(probs: np.ndarray, gamma: float) -> np.ndarray:
    """Return ``(1 - gamma) * probs + gamma / K``, so every entry is at least ``gamma / K``."""
    if gamma == 0.0:
        return probs
    return (1.0 - gamma) * probs + gamma / probs.shape[0]


@dataclass(frozen=True)
class Policy:
    id: int
    table: tuple[int, ...]

    def __call__(self, context: int) -> int:
        return self.table[context]


@dataclass(frozen=True, eq=False)
class PolicyClassSequence:
    """Nested policy classes ``classes[0] ⊆ classes[1] ⊆ ... ⊆ classes[M-1]``.

    ``tables[i, x]`` is the action policy ``i`` takes in context ``x``.  The last
    class must contain every policy id.
    """

    K: int
    tables: np.ndarray
    classes: tuple[frozenset[int], ...]
    _min_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        tables = np.array(self.tables, dtype=np.int64)
        if tables.ndim != 2 or tables.shape[0] == 0 or tables.shape[1] == 0:
            raise ValueError("policy table must be a non-empty (n_policies, N_x) array")
        if self.K < 1 or tables.min() < 0 or tables.max() >= self.K:
            raise ValueError("policy table entries must be actions in [0, K)")
        if len(self.classes) == 0:
            raise ValueError("empty policy class sequence")
        classes = tuple(frozenset(int(i) for i in c) for c in self.classes)
        n = tables.shape[0]
        for m, c in enumerate(classes):
            if not c:
                raise ValueError(f"class {m + 1} is empty")
            if min(c) < 0 or max(c) >= n:
                raise ValueError(f"class {m + 1} references unknown policy ids")
            if m > 0 and not classes[m - 1] <= c:
                raise ValueError(f"classes are not nested at index {m}")
        if len(classes[-1]) != n:
            raise ValueError("last class must contain every policy")
        tables.setflags(write=False)
        min_index = np.empty(n, dtype=np.int64)
        for m in range(len(classes) - 1, -1, -1):
            min_index[sorted(classes[m])] = m + 1
        min_index.setflags(write=False)
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "_min_index", min_index)

    @property
    def M(self) -> int:
        return len(self.classes)

    @property
    def n_policies(self) -> int:
        return self.tables.shape[0]

    @property
    def N_x(self) -> int:
        return self.tables.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.classes]

    @property
    def policies(self) -> list[Policy]:
        return [Policy(i, tuple(int(a) for a in row)) for i, row in enumerate(self.tables)]

    def class_ids(self, m: int) -> np.ndarray:
        """Sorted policy ids of the 1-based class ``m``."""
        if not 1 <= m <= self.M:
            raise ValueError(f"class index {m} out of range [1, {self.M}]")
        return np.array(sorted(self.classes[m - 1]), dtype=np.int64)

    def minimal_indices(self) -> np.ndarray:
        return self._min_index

    def truncate(self, m: int) -> PolicyClassSequence:
        """The sequence restricted to ``Π_1 ⊂ ... ⊂ Π_m``, with policies renumbered in id order."""
        ids = self.class_ids(m)
        remap = {int(old): new for new, old in enumerate(ids)}
        return PolicyClassSequence(
            K=self.K,
            tables=self.tables[ids],
            classes=tuple(frozenset(remap[i] for i in c) for c in self.classes[:m]),
        )

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "N_x": self.N_x,
            "policies": self.tables.tolist(),
            "classes": [sorted(c) for c in self.classes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PolicyClassSequence:
        tables = np.array(data["policies"], dtype=np.int64)
        if tables.ndim != 2 or tables.shape[1] != data["N_x"]:
            raise ValueError("policy rows must have length N_x")
        return cls(K=int(data["K"]), tables=tables, classes=tuple(data["classes"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> PolicyClassSequence:
        return cls.from_dict(json.loads(Path(path).read_text()))


def constant_action_sequence(K: int, N_x: int = 1) -> PolicyClassSequence:
    """Single class holding the ``K`` constant-action policies."""
    tables = np.repeat(np.arange(K)[:, None], N_x, axis=1)
    return PolicyClassSequence(K=K, tables=tables, classes=(frozenset(range(K)),))


def minimal_class_index(policy_id: int, seq: PolicyClassSequence) -> int:
    """Smallest 1-based ``m`` with ``policy_id`` in class ``m``."""
    if not 0 <= policy_id < seq.n_policies:
        raise PolicyNotInSequence("policy not in sequence")
    return int(seq.minimal_indices()[policy_id])


def nested_prior(seq: PolicyClassSequence) -> np.ndarray:
    """Prior with mass proportional to ``1 / (|Π_m| m²)`` where ``m`` is the policy's minimal class index."""
    if seq.M == 0:
        raise ValueError("empty policy class sequence")
    m = seq.minimal_indices().astype(float)
    sizes = np.array(seq.sizes, dtype=float)
    weights = 1.0 / (sizes[seq.minimal_indices() - 1] * m**2)
    return weights / weights.sum()


def induced_action_distribution(P: np.ndarray, context: int, seq: PolicyClassSequence) -> np.ndarray:
    """Push a policy distribution forward through the policies' actions at ``context``."""
    return np.bincount(seq.tables[:, context], weights=P, minlength=seq.K)


def importance_weighted_loss(observed: float, action: int, probs: np.ndarray) -> np.ndarray:
    """Inverse-propensity estimate of the full loss vector from one observed entry."""
    p = probs[action]
    if p <= 0.0:
        raise ValueError("zero-probability action observed")
    est = np.zeros(probs.shape[0])
    est[action] = observed / p
    return est


@dataclass(frozen=True)
class RoundRecord:
    t: int
    context: int
    loss: np.ndarray
    action_dist: np.ndarray
    action: int
    realized_loss: float
    policy_dist: np.ndarray | None = None


@dataclass
class Trajectory:
    """Arrays indexed by round (0-based); ``rounds`` gives the 1-based record view."""

    contexts: np.ndarray
    losses: np.ndarray
    action_dists: np.ndarray
    actions: np.ndarray
    policy_dists: np.ndarray | None = None
    N_x: int | None = None

    def __post_init__(self) -> None:
        T = self.contexts.shape[0]
        if self.losses.shape[0] != T or self.actions.shape[0] != T or self.action_dists.shape[0] != T:
            raise ValueError("trajectory arrays disagree on the horizon")
        if self.policy_dists is not None and self.policy_dists.shape[0] != T:
            raise ValueError("policy distributions disagree on the horizon")
        if self.N_x is None:
            self.N_x = int(self.contexts.max()) + 1 if T else 0

    @property
    def T(self) -> int:
        return self.contexts.shape[0]

    @property
    def K(self) -> int:
        return self.losses.shape[1]

    @property
    def realized_losses(self) -> np.ndarray:
        return self.losses[np.arange(self.T), self.actions]

    @property
    def cumulative_loss(self) -> float:
        return float(self.realized_losses.sum())

    def __len__(self) -> int:
        return self.T

    def __iter__(self) -> Iterator[RoundRecord]:
        for i in range(self.T):
            yield self.record(i + 1)

    def record(self, t: int) -> RoundRecord:
        i = t - 1
        return RoundRecord(
            t=t,
            context=int(self.contexts[i]),
            loss=self.losses[i],
            action_dist=self.action_dists[i],
            action=int(self.actions[i]),
            realized_loss=float(self.losses[i, self.actions[i]]),
            policy_dist=None if self.policy_dists is None else self.policy_dists[i],
        )

    @property
    def rounds(self) -> list[RoundRecord]:
        return list(self)

    def context_loss_totals(self) -> np.ndarray:
        """``out[x, a]`` = total loss of action ``a`` over the rounds with context ``x``."""
        out = np.zeros((self.N_x, self.K))
        np.add.at(out, self.contexts, self.losses)
        return out

    def policy_losses(self, tables: np.ndarray) -> np.ndarray:
        """Cumulative realized loss of each policy row in ``tables``."""
        totals = self.context_loss_totals()
        return totals[np.arange(tables.shape[1])[None, :], tables].sum(axis=1)

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.contexts, self.losses, self.action_dists, self.actions):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.policy_dists is not None:
            h.update(np.ascontiguousarray(self.policy_dists).tobytes())
        return h.hexdigest()


def as_loss_vector(values: Sequence[float]) -> np.ndarray:
    vec = np.asarray(values, dtype=float)
    if vec.ndim != 1 or np.any(vec < 0.0) or np.any(vec > 1.0) or not np.all(np.isfinite(vec)):
        raise ValueError("loss vector entries must lie in [0, 1]")
    return vec
