"""Exact regret accounting on realized trajectories.

All regrets are per-trajectory (realized losses); averaging over seeds is
left to the harness.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import PolicyClassSequence, Trajectory


@dataclass(frozen=True)
class RegretEntry:
    m: int
    regret: float
    best_policy: int
    learner_loss: float
    comparator_loss: float


@dataclass(frozen=True)
class RegretReport:
    entries: tuple[RegretEntry, ...]

    CSV_HEADER = ("m", "regret", "best_policy", "learner_loss", "comparator_loss")

    def __getitem__(self, m: int) -> RegretEntry:
        return self.entries[m - 1]

    @property
    def regrets(self) -> list[float]:
        return [e.regret for e in self.entries]

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        for e in self.entries:
            writer.writerow([e.m, f"{e.regret:.9g}", e.best_policy, f"{e.learner_loss:.9g}", f"{e.comparator_loss:.9g}"])
        return buf.getvalue()


def class_regret(traj: Trajectory, seq: PolicyClassSequence, m: int, policy_losses: np.ndarray | None = None) -> RegretEntry:
    """Learner loss minus the best realized loss within ``Π_m``.

    ``policy_losses`` may be passed in to avoid recomputing it across ``m``.
    """
    if not 1 <= m <= seq.M:
        raise ValueError(f"class index {m} out of range [1, {seq.M}]")
    if policy_losses is None:
        policy_losses = traj.policy_losses(seq.tables)
    ids = seq.class_ids(m)
    j = int(np.argmin(policy_losses[ids]))
    learner = traj.cumulative_loss
    best = float(policy_losses[ids[j]])
    return RegretEntry(m, learner - best, int(ids[j]), learner, best)


def regret_report(traj: Trajectory, seq: PolicyClassSequence) -> RegretReport:
    losses = traj.policy_losses(seq.tables)
    return RegretReport(tuple(class_regret(traj, seq, m, losses) for m in range(1, seq.M + 1)))


def best_switching_sequence(losses: np.ndarray, S: int) -> tuple[float, np.ndarray]:
    """Minimal cumulative loss over action sequences with at most ``S`` switches.

    Dynamic program over (round, switches used, current arm).  The returned
    sequence is canonical: the final state is picked by (value, arm,
    switches), and each backtracking step prefers the lowest predecessor arm
    among equal values.
    """
    losses = np.asarray(losses, dtype=float)
    T, K = losses.shape
    if not 0 <= S < T:
        raise ValueError(f"need 0 <= S < T, got S={S}, T={T}")
    inf = np.inf
    V = np.full((S + 1, K), inf)
    V[0] = losses[0]
    back = np.zeros((T, S + 1, K), dtype=np.int64)
    back[0] = -1
    off_diag = ~np.eye(K, dtype=bool)
    arms = np.arange(K)
    for t in range(1, T):
        # cand[s, a, b]: arriving at arm a with s switches from arm b
        cand = np.full((S + 1, K, K), inf)
        cand[:, arms, arms] = V
        if S > 0:
            cand[1:] = np.where(off_diag, V[:-1, None, :], cand[1:])
        b = np.argmin(cand, axis=2)
        best = np.take_along_axis(cand, b[:, :, None], axis=2)[:, :, 0]
        V = best + losses[t]
        back[t] = b
    flat = [(V[s, a], a, s) for s in range(S + 1) for a in range(K) if np.isfinite(V[s, a])]
    value, a, s = min(flat)
    seq = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        seq[t] = a
        if t == 0:
            break
        b = int(back[t, s, a])
        if b != a:
            s -= 1
        a = b
    return float(value), seq


def count_switches(seq) -> int:
    seq = np.asarray(seq)
    return int(np.count_nonzero(seq[1:] != seq[:-1]))


def switching_class_regret(traj: Trajectory, S: int) -> float:
    """Regret to the best action sequence with at most ``S`` switches (contexts must be ``x_t = t``)."""
    if not np.array_equal(traj.contexts, np.arange(traj.T)):
        raise ValueError("switching regret needs contexts x_t = t")
    value, _ = best_switching_sequence(traj.losses, S)
    return traj.cumulative_loss - value


def quantile_comparator(traj: Trajectory, seq: PolicyClassSequence, eps: float) -> tuple[np.ndarray, float]:
    """Uniform distribution over the best ``ceil(eps |Π|)`` policies and its expected realized loss.

    Policies are ranked by realized cumulative loss, ties by policy id.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    losses = traj.policy_losses(seq.tables)
    n = seq.n_policies
    k = max(1, math.ceil(eps * n - 1e-9))
    order = np.lexsort((np.arange(n), losses))
    Q = np.zeros(n)
    Q[order[:k]] = 1.0 / k
    return Q, float(losses[order[:k]].mean())


@dataclass(frozen=True)
class AuditReport:
    lhs: float
    variance_sum: float
    kl: float
    rhs: float
    ratio: float

    CSV_HEADER = ("lhs", "variance_sum", "kl", "rhs", "ratio")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv_row(self) -> list[str]:
        return [f"{v:.9g}" for v in (self.lhs, self.variance_sum, self.kl, self.rhs, self.ratio)]


def kl_divergence(Q: np.ndarray, P: np.ndarray) -> float:
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    support = Q > 0
    if np.any(P[support] <= 0):
        raise ValueError("infinite KL: Q puts mass where the prior has none")
    # Gibbs' inequality; rounding can leave a -1e-17 residue when Q ≈ P
    return max(0.0, float(np.sum(Q[support] * np.log(Q[support] / P[support]))))


def per_round_policy_losses(traj: Trajectory, seq: PolicyClassSequence) -> np.ndarray:
    """``out[t, π] = ℓ_t(π(x_t))``."""
    acts = seq.tables[:, traj.contexts].T
    return np.take_along_axis(traj.losses, acts, axis=1)


def pacbayes_audit(traj: Trajectory, seq: PolicyClassSequence, Q: np.ndarray, prior: np.ndarray) -> AuditReport:
    """Both sides of the second-order KL bound on a full-information trajectory.

    ``lhs`` is the mixture's cumulative loss minus ``Q``'s; ``rhs`` is
    ``sqrt(Σ_t Var_{P_t}(ℓ_t(π(x_t))) · KL(Q‖P_1))`` with no constant.
    """
    if traj.policy_dists is None:
        raise ValueError("trajectory lacks policy distributions")
    kl = kl_divergence(Q, prior)
    L = per_round_policy_losses(traj, seq)
    P = traj.policy_dists
    mean = np.sum(P * L, axis=1)
    var = np.sum(P * (L - mean[:, None]) ** 2, axis=1)
    lhs = float(np.sum(mean - L @ Q))
    variance_sum = float(var.sum())
    rhs = math.sqrt(variance_sum * kl)
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs <= 0 else math.inf
    return AuditReport(lhs, variance_sum, kl, rhs, ratio)
