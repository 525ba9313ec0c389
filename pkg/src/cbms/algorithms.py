"""Online learners behind two small interfaces.

Bandit learners: ``begin_round(context)`` returns the action distribution the
harness samples from, then ``update(action, realized_loss)`` feeds back the one
observed entry.  Full-information learners: ``begin_round(context)`` returns a
distribution over policies and ``update(loss_vector)`` sees every action's loss.

Learners never sample; the harness draws actions from its own seeded
generator, so a learner's state is a deterministic function of its feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import (
    PolicyClassSequence,
    constant_action_sequence,
    importance_weighted_loss,
    mix_with_uniform,
    nested_prior,
    softmax,
)


def hedge_rate(n_experts: int, T: int) -> float:
    return math.sqrt(8.0 * math.log(max(n_experts, 1)) / T)


def bandit_rate(n_experts: int, T: int, K: int) -> float:
    return math.sqrt(2.0 * math.log(max(n_experts, 1)) / (T * K))


def bandit_exploration(n_experts: int, T: int, K: int) -> float:
    return min(1.0, math.sqrt(K * math.log(max(n_experts, 1)) / T))


def _prior_array(prior, seq: PolicyClassSequence) -> np.ndarray:
    if prior is None or (isinstance(prior, str) and prior == "uniform"):
        return np.full(seq.n_policies, 1.0 / seq.n_policies)
    if isinstance(prior, str):
        if prior == "nested":
            return nested_prior(seq)
        raise ValueError(f"unknown prior {prior!r}")
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (seq.n_policies,) or np.any(prior < 0) or prior.sum() <= 0:
        raise ValueError("prior must be a non-negative vector over the policies")
    return prior / prior.sum()


def _log(prior: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lw = np.log(prior)
    return lw - lw.max()


def _centred_softmax(log_weights: np.ndarray) -> np.ndarray:
    # log weights are kept with maximum exactly 0, so exp cannot overflow
    z = np.exp(log_weights)
    return z / z.sum()


# ---------------------------------------------------------------------------
# exponential weights


@dataclass(frozen=True)
class HedgeState:
    log_weights: np.ndarray
    prior: np.ndarray
    eta: float

    @classmethod
    def initial(cls, prior: np.ndarray, eta: float) -> HedgeState:
        if not eta > 0:
            raise ValueError("learning rate must be positive")
        prior = np.asarray(prior, dtype=float)
        return cls(_log(prior), prior, eta)

    @property
    def distribution(self) -> np.ndarray:
        return softmax(self.log_weights)


def hedge_step(state: HedgeState, losses: np.ndarray) -> HedgeState:
    """One exponential-weights update; log weights are re-centred so the largest is 0."""
    losses = np.asarray(losses, dtype=float)
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite loss passed to hedge_step")
    lw = state.log_weights - state.eta * losses
    return replace(state, log_weights=lw - lw.max())


class Hedge:
    """Full-information exponential weights over the policies of ``seq``."""

    full_information = True
    floor = 0.0

    def __init__(self, seq: PolicyClassSequence, T: int, eta: float | None = None, prior="uniform"):
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.seq = seq
        self.prior = _prior_array(prior, seq)
        if eta is None:
            # a single policy makes the tuned rate zero; any positive rate is equivalent
            eta = hedge_rate(seq.n_policies, T) or 1.0
        self.state = HedgeState.initial(self.prior, eta)
        self._context: int | None = None

    @property
    def eta(self) -> float:
        return self.state.eta

    def distribution(self) -> np.ndarray:
        return self.state.distribution

    def begin_round(self, context: int) -> np.ndarray:
        self._context = context
        return self.distribution()

    def update(self, loss_vector: np.ndarray) -> None:
        if self._context is None:
            raise RuntimeError("update called before begin_round")
        self.state = hedge_step(self.state, np.asarray(loss_vector)[self.seq.tables[:, self._context]])
        self._context = None


class MultiscaleHedge:
    """Outer exponential weights over a geometric grid of Hedge learning rates.

    Every grid member starts from the nested prior; rates run from
    ``sqrt(8 log(|Π_M| M²) / T)`` down by factors of two, ``ceil(log2 T) + 1`` of them.
    """

    full_information = True
    floor = 0.0

    def __init__(self, seq: PolicyClassSequence, T: int, prior="nested", outer_eta: float | None = None):
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.seq = seq
        n_grid = math.ceil(math.log2(T)) + 1
        base = math.sqrt(8.0 * math.log(seq.n_policies * seq.M**2) / T) if seq.n_policies * seq.M**2 > 1 else 1.0
        self.etas = base * 2.0 ** -np.arange(n_grid)
        self.prior = _prior_array(prior, seq)
        self._inner = np.tile(_log(self.prior), (n_grid, 1))
        self._outer = np.zeros(n_grid)
        self.outer_eta = hedge_rate(n_grid, T) if outer_eta is None else outer_eta
        self._context: int | None = None
        self._inner_dists: np.ndarray | None = None

    @property
    def n_grid(self) -> int:
        return self.etas.shape[0]

    def grid_weights(self) -> np.ndarray:
        return softmax(self._outer)

    def begin_round(self, context: int) -> np.ndarray:
        self._context = context
        z = np.exp(self._inner - self._inner.max(axis=1, keepdims=True))
        self._inner_dists = z / z.sum(axis=1, keepdims=True)
        return self.grid_weights() @ self._inner_dists

    def update(self, loss_vector: np.ndarray) -> None:
        if self._context is None:
            raise RuntimeError("update called before begin_round")
        policy_losses = np.asarray(loss_vector)[self.seq.tables[:, self._context]]
        if not np.all(np.isfinite(policy_losses)):
            raise ValueError("non-finite loss")
        outer = self._outer - self.outer_eta * (self._inner_dists @ policy_losses)
        self._outer = outer - outer.max()
        inner = self._inner - self.etas[:, None] * policy_losses[None, :]
        self._inner = inner - inner.max(axis=1, keepdims=True)
        self._context = None


def multiscale_hedge(seq: PolicyClassSequence, T: int) -> MultiscaleHedge:
    return MultiscaleHedge(seq, T)


# ---------------------------------------------------------------------------
# bandit learners


class Exp3:
    """Exp3 on losses with uniform-mixing exploration ``gamma``."""

    full_information = False

    def __init__(self, K: int, T: int, eta: float | None = None, gamma: float | None = None, prior=None):
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.K = K
        self.eta = bandit_rate(K, T, K) if eta is None else eta
        self.gamma = bandit_exploration(K, T, K) if gamma is None else gamma
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.prior = _prior_array(prior, constant_action_sequence(K))
        self._log_w = _log(self.prior)
        self._probs: np.ndarray | None = None

    @property
    def floor(self) -> float:
        return self.gamma / self.K

    def distribution(self) -> np.ndarray:
        return mix_with_uniform(_centred_softmax(self._log_w), self.gamma)

    def begin_round(self, context: int = 0) -> np.ndarray:
        self._probs = self.distribution()
        return self._probs

    def update(self, action: int, realized_loss: float) -> None:
        if self._probs is None:
            raise RuntimeError("update called before begin_round")
        exp3_step(self, action, realized_loss)


def exp3_step(state: Exp3, action: int, realized_loss: float) -> Exp3:
    """Charge the importance-weighted loss to the played arm, in place."""
    p = state._probs
    if p[action] <= 0.0:
        raise ValueError("zero-probability action observed")
    lw = state._log_w.copy()
    lw[action] -= state.eta * realized_loss / p[action]
    state._log_w = lw - lw.max()
    state._probs = None
    return state


class Exp4:
    """Exp4 over an explicit policy table, optionally with a non-uniform prior."""

    full_information = False

    def __init__(
        self,
        seq: PolicyClassSequence,
        T: int,
        eta: float | None = None,
        gamma: float | None = None,
        prior="uniform",
    ):
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.seq = seq
        self.K = seq.K
        n = seq.n_policies
        self.eta = bandit_rate(n, T, self.K) if eta is None else eta
        self.gamma = bandit_exploration(n, T, self.K) if gamma is None else gamma
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.prior = _prior_array(prior, seq)
        self._log_w = _log(self.prior)
        self._acts: np.ndarray | None = None
        self._probs: np.ndarray | None = None

    @property
    def floor(self) -> float:
        return self.gamma / self.K

    def policy_distribution(self) -> np.ndarray:
        return _centred_softmax(self._log_w)

    def begin_round(self, context: int) -> np.ndarray:
        if not 0 <= context < self.seq.N_x:
            raise ValueError(f"context {context} out of range")
        self._acts = self.seq.tables[:, context]
        p = np.bincount(self._acts, weights=self.policy_distribution(), minlength=self.K)
        self._probs = mix_with_uniform(p, self.gamma)
        return self._probs

    def update(self, action: int, realized_loss: float) -> None:
        if self._probs is None:
            raise RuntimeError("update called before begin_round")
        exp4_step(self, action, realized_loss)


def exp4_step(state: Exp4, action: int, realized_loss: float) -> Exp4:
    """Charge every policy that chose ``action`` its importance-weighted loss, in place."""
    p = state._probs
    if p[action] <= 0.0:
        raise ValueError("zero-probability action observed")
    lw = state._log_w.copy()
    lw[state._acts == action] -= state.eta * realized_loss / p[action]
    state._log_w = lw - lw.max()
    state._probs = None
    return state


class EpsilonGreedy:
    """Greedy on importance-weighted policy loss estimates with decaying uniform exploration.

    Exploration rate at round ``t`` is ``min(1, c (K log|Π| / t)^(1/3))``.
    """

    full_information = False

    def __init__(self, seq: PolicyClassSequence, c: float = 1.0, exponent: float = 1.0 / 3.0):
        self.seq = seq
        self.K = seq.K
        self.c = c
        self.exponent = exponent
        self._log_n = math.log(max(seq.n_policies, 2))
        self.estimates = np.zeros(seq.n_policies)
        self.t = 0
        self.epsilon = 1.0
        self._acts: np.ndarray | None = None
        self._probs: np.ndarray | None = None

    @property
    def floor(self) -> float:
        return self.epsilon / self.K

    def exploration_rate(self, t: int) -> float:
        return min(1.0, self.c * (self.K * self._log_n / t) ** self.exponent)

    def greedy_policy(self) -> int:
        return int(np.argmin(self.estimates))

    def begin_round(self, context: int) -> np.ndarray:
        self.t += 1
        self.epsilon = self.exploration_rate(self.t)
        self._acts = self.seq.tables[:, context]
        p = np.full(self.K, self.epsilon / self.K)
        p[self._acts[self.greedy_policy()]] += 1.0 - self.epsilon
        self._probs = p
        return p

    def update(self, action: int, realized_loss: float) -> None:
        if self._probs is None:
            raise RuntimeError("update called before begin_round")
        epsilon_greedy_step(self, action, realized_loss)


def epsilon_greedy_step(state: EpsilonGreedy, action: int, realized_loss: float) -> EpsilonGreedy:
    p = state._probs
    if p[action] <= 0.0:
        raise ValueError("zero-probability action observed")
    state.estimates[state._acts == action] += realized_loss / p[action]
    state._probs = None
    return state


class RestartedExp3:
    """Exp3 restarted from scratch every ``block`` rounds (default ``ceil(sqrt(T))``)."""

    full_information = False

    def __init__(self, K: int, T: int, block: int | None = None, **exp3_kwargs):
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.K = K
        self.block = math.ceil(math.sqrt(T)) if block is None else int(block)
        if self.block < 1:
            raise ValueError("block length must be positive")
        self._exp3_kwargs = exp3_kwargs
        self.t = 0
        self.inner: Exp3 | None = None

    @property
    def floor(self) -> float:
        return self.inner.floor if self.inner is not None else 0.0

    def begin_round(self, context: int = 0) -> np.ndarray:
        if self.t % self.block == 0:
            self.inner = Exp3(self.K, self.block, **self._exp3_kwargs)
        self.t += 1
        return self.inner.begin_round(context)

    def update(self, action: int, realized_loss: float) -> None:
        self.inner.update(action, realized_loss)


def restarted_exp3(K: int, T: int) -> RestartedExp3:
    return RestartedExp3(K, T)


class LStarTestSelector:
    """Model selection by testing the running average loss against a known optimal loss.

    Starts on ``Π_1``.  After round ``t`` of the current phase, if the phase's
    average loss exceeds ``L★ + c1 sqrt(K log(|Π_m| T) / t) + c2 sqrt(log(M T) / t)``
    it moves to ``Π_{m+1}`` and restarts the base learner for the remaining rounds.
    """

    full_information = False

    def __init__(
        self,
        seq: PolicyClassSequence,
        L_star: float,
        T: int,
        base_factory: Callable[[PolicyClassSequence, int], object] | None = None,
        c1: float = 4.0,
        c2: float = 1.0,
    ):
        if not 0.0 <= L_star <= 1.0:
            raise ValueError("L_star must lie in [0, 1]")
        if T < 1:
            raise ValueError("horizon must be at least 1")
        self.seq = seq
        self.L_star = L_star
        self.T = T
        self.K = seq.K
        self.c1 = c1
        self.c2 = c2
        self.base_factory = base_factory or (lambda s, horizon: Exp4(s, horizon))
        self.m = 1
        self.t = 0
        self.switch_rounds: list[int] = []
        self._start_phase()

    def _start_phase(self) -> None:
        self._sub = self.seq.truncate(self.m)
        self.base = self.base_factory(self._sub, max(self.T - self.t, 1))
        self._phase_t = 0
        self._phase_loss = 0.0
        self._log_size_T = math.log(self._sub.n_policies * self.T)

    @property
    def floor(self) -> float:
        return self.base.floor

    def threshold(self, phase_t: int) -> float:
        return (
            self.L_star
            + self.c1 * math.sqrt(self.K * self._log_size_T / phase_t)
            + self.c2 * math.sqrt(math.log(self.seq.M * self.T) / phase_t)
        )

    def begin_round(self, context: int) -> np.ndarray:
        return self.base.begin_round(context)

    def update(self, action: int, realized_loss: float) -> None:
        self.base.update(action, realized_loss)
        self.t += 1
        self._phase_t += 1
        self._phase_loss += realized_loss
        if self.m < self.seq.M and self._phase_loss / self._phase_t > self.threshold(self._phase_t):
            self.m += 1
            self.switch_rounds.append(self.t)
            self._start_phase()


def lstar_test_select(seq, L_star, T, base_factory=None, **kwargs) -> LStarTestSelector:
    return LStarTestSelector(seq, L_star, T, base_factory, **kwargs)


class BanditFromFullInfo:
    """Run a full-information learner on bandit feedback.

    The inner policy distribution is pushed to actions, mixed with uniform
    mass ``gamma``, and the importance-weighted loss vector against that
    floored distribution is fed back to the inner learner.
    """

    full_information = False

    def __init__(self, inner, seq: PolicyClassSequence, gamma: float):
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        self.inner = inner
        self.seq = seq
        self.K = seq.K
        self.gamma = gamma
        self._probs: np.ndarray | None = None
        self.last_estimate: np.ndarray | None = None

    @property
    def floor(self) -> float:
        return self.gamma / self.K

    def begin_round(self, context: int) -> np.ndarray:
        P = self.inner.begin_round(context)
        p = np.bincount(self.seq.tables[:, context], weights=P, minlength=self.K)
        self._probs = mix_with_uniform(p, self.gamma)
        return self._probs

    def update(self, action: int, realized_loss: float) -> None:
        if self._probs is None:
            raise RuntimeError("update called before begin_round")
        self.last_estimate = importance_weighted_loss(realized_loss, action, self._probs)
        self.inner.update(self.last_estimate)
        self._probs = None


def bandit_from_fullinfo(inner, seq: PolicyClassSequence, gamma: float) -> BanditFromFullInfo:
    return BanditFromFullInfo(inner, seq, gamma)


# ---------------------------------------------------------------------------
# construction from config dictionaries

ALGORITHMS = (
    "exp3",
    "exp4",
    "epsilon_greedy",
    "restarted_exp3",
    "lstar_test",
    "bandit_from_fullinfo",
    "hedge",
    "multiscale_hedge",
)


def _full_info(spec: dict, seq: PolicyClassSequence, T: int):
    name = spec["name"]
    if name == "hedge":
        return Hedge(seq, T, eta=spec.get("eta"), prior=spec.get("prior", "uniform"))
    if name == "multiscale_hedge":
        return MultiscaleHedge(seq, T, prior=spec.get("prior", "nested"), outer_eta=spec.get("outer_eta"))
    raise ValueError(f"{name!r} is not a full-information learner")


def build_learner(spec: dict, seq: PolicyClassSequence, T: int, L_star: float | None = None):
    """Instantiate a learner from its config dictionary.

    ``class_index`` restricts the learner to ``Π_1 ⊂ ... ⊂ Π_m`` of ``seq``.
    """
    name = spec["name"]
    if "class_index" in spec:
        seq = seq.truncate(int(spec["class_index"]))
    eta, gamma = spec.get("eta"), spec.get("gamma")
    if name == "exp3":
        prior = spec.get("prior")
        if "prior_bias" in spec:
            prior = np.ones(seq.K)
            prior[0] = float(spec["prior_bias"])
        return Exp3(seq.K, T, eta=eta, gamma=gamma, prior=prior)
    if name == "exp4":
        return Exp4(seq, T, eta=eta, gamma=gamma, prior=spec.get("prior", "uniform"))
    if name == "epsilon_greedy":
        return EpsilonGreedy(seq, c=spec.get("c", 1.0), exponent=spec.get("exponent", 1.0 / 3.0))
    if name == "restarted_exp3":
        kwargs = {k: spec[k] for k in ("eta", "gamma") if k in spec}
        return RestartedExp3(seq.K, T, block=spec.get("block"), **kwargs)
    if name == "lstar_test":
        if L_star is None:
            raise ValueError("lstar_test needs an environment with a known optimal loss")
        base_spec = spec.get("base", {"name": "exp4"})

        def factory(sub, horizon):
            return build_learner(base_spec, sub, horizon)

        return LStarTestSelector(seq, L_star, T, factory, c1=spec.get("c1", 4.0), c2=spec.get("c2", 1.0))
    if name == "bandit_from_fullinfo":
        inner = _full_info(spec.get("inner", {"name": "multiscale_hedge"}), seq, T)
        if gamma is None:
            gamma = bandit_exploration(seq.n_policies, T, seq.K)
        return BanditFromFullInfo(inner, seq, gamma)
    if name in ("hedge", "multiscale_hedge"):
        return _full_info(spec, seq, T)
    raise ValueError(f"unknown algorithm {name!r}")
