"""Loss/context generators.

Every environment owns a private generator.  Oblivious environments draw
their streams in fixed-size chunks, so the first ``t`` rounds are identical
whatever horizon the caller eventually runs to.  The harness sees the full
loss vector; learners only ever receive the chosen entry.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .core import PolicyClassSequence, as_loss_vector, constant_action_sequence

GRID = np.round(np.linspace(0.0, 1.0, 11), 10)
CHUNK = 4096
NOISE_KINDS = ("bernoulli", "deterministic")


class Environment:
    """Base class: ``next_context(history)`` then ``loss_vector(history, context)`` each round.

    ``history`` is whatever the harness has recorded so far; only its length is
    used by the stock (oblivious) environments.
    """

    kind: str = "base"
    oblivious: bool = True

    def __init__(self, K: int, N_x: int, seed: int | np.random.SeedSequence | None = None) -> None:
        if K < 2:
            raise ValueError("need at least two actions")
        self.K = K
        self.N_x = N_x
        self._seed = seed
        self.reset()

    def reset(self) -> None:
        self._rng = np.random.default_rng(self._seed)
        self._contexts = np.empty(0, dtype=np.int64)
        self._losses = np.empty((0, self.K))

    def _extend(self) -> None:
        ctx, loss = self._draw_chunk(self._rng, CHUNK)
        self._contexts = np.concatenate([self._contexts, ctx])
        self._losses = np.concatenate([self._losses, loss])

    def _draw_chunk(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def stream(self, T: int) -> tuple[np.ndarray, np.ndarray]:
        """First ``T`` contexts and loss vectors of the stream (oblivious environments only)."""
        while self._contexts.shape[0] < T:
            self._extend()
        return self._contexts[:T], self._losses[:T]

    def next_context(self, history: Sequence[Any]) -> int:
        t = len(history)
        while self._contexts.shape[0] <= t:
            self._extend()
        return int(self._contexts[t])

    def loss_vector(self, history: Sequence[Any], context: int) -> np.ndarray:
        t = len(history)
        while self._contexts.shape[0] <= t:
            self._extend()
        return self._losses[t]

    def policy_sequence(self) -> PolicyClassSequence:
        return constant_action_sequence(self.K, self.N_x)

    def ground_truth(self) -> dict:
        return {"kind": self.kind, "K": self.K, "N_x": self.N_x}


def _sample_losses(rng: np.random.Generator, means: np.ndarray, noise: str) -> np.ndarray:
    if noise == "deterministic":
        return means.astype(float, copy=True)
    return (rng.random(means.shape) < means).astype(float)


# ---------------------------------------------------------------------------
# stochastic realizable instances


@dataclass(frozen=True, eq=False)
class RegressionClassSequence:
    """Nested classes of regression tables ``functions[i, x, a]`` with a planted ``f★``."""

    functions: np.ndarray
    classes: tuple[frozenset[int], ...]
    star_index: int
    star_function: int

    def __post_init__(self) -> None:
        f = self.functions
        if f.ndim != 3 or np.any(f < 0) or np.any(f > 1):
            raise ValueError("regression tables must be (n, N_x, K) with values in [0, 1]")
        for m in range(1, len(self.classes)):
            if not self.classes[m - 1] <= self.classes[m]:
                raise ValueError("function classes are not nested")
        if not 1 <= self.star_index <= len(self.classes):
            raise ValueError("star index out of range")
        if self.star_function not in self.classes[self.star_index - 1]:
            raise ValueError("f★ must belong to class m★")

    @property
    def M(self) -> int:
        return len(self.classes)

    @property
    def star(self) -> np.ndarray:
        return self.functions[self.star_function]

    def policy_sequence(self) -> tuple[PolicyClassSequence, np.ndarray]:
        """Induced nested policy classes and the policy id of every function.

        Functions inducing the same policy share one policy id; ids follow
        first appearance in function order.
        """
        ids: dict[tuple[int, ...], int] = {}
        fn_to_policy = np.empty(self.functions.shape[0], dtype=np.int64)
        rows = []
        for i, f in enumerate(self.functions):
            key = tuple(int(a) for a in induced_policy(f))
            if key not in ids:
                ids[key] = len(rows)
                rows.append(key)
            fn_to_policy[i] = ids[key]
        classes = tuple(frozenset(int(fn_to_policy[i]) for i in c) for c in self.classes)
        seq = PolicyClassSequence(K=self.functions.shape[2], tables=np.array(rows), classes=classes)
        return seq, fn_to_policy


def induced_policy(f: np.ndarray) -> np.ndarray:
    """Greedy policy of a regression table; ties go to the lowest action index."""
    return np.argmin(np.asarray(f), axis=1)


class RealizableEnvironment(Environment):
    kind = "stochastic_realizable"

    def __init__(self, instance: RegressionClassSequence, noise: str = "bernoulli", seed=None) -> None:
        if noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        self.instance = instance
        self.noise = noise
        self.star_table = instance.star
        self._seq, self._fn_to_policy = instance.policy_sequence()
        _, N_x, K = instance.functions.shape
        super().__init__(K, N_x, seed)

    def _draw_chunk(self, rng, n):
        ctx = rng.integers(0, self.N_x, size=n)
        return ctx, _sample_losses(rng, self.star_table[ctx], self.noise)

    def policy_sequence(self) -> PolicyClassSequence:
        return self._seq

    @property
    def star_policy(self) -> int:
        return int(self._fn_to_policy[self.instance.star_function])

    @property
    def optimal_loss(self) -> float:
        return optimal_loss(self)

    def ground_truth(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "N_x": self.N_x,
            "noise": self.noise,
            "m_star": self.instance.star_index,
            "f_star": self.star_table.tolist(),
            "star_policy": self.star_policy,
            "L_star": self.optimal_loss,
            "class_sizes": self._seq.sizes,
        }


def _grid_table(rng: np.random.Generator, N_x: int, K: int) -> np.ndarray:
    return GRID[rng.integers(0, GRID.size, size=(N_x, K))]


def _margin_table(rng: np.random.Generator, N_x: int, K: int, margin: float) -> np.ndarray:
    """Grid table whose per-context minimum beats every other action by at least ``margin``."""
    steps = int(round(margin * 10))
    table = np.empty((N_x, K))
    for x in range(N_x):
        best_level = rng.integers(0, GRID.size - steps)
        others = rng.integers(best_level + steps, GRID.size, size=K)
        row = GRID[others]
        row[rng.integers(0, K)] = GRID[best_level]
        table[x] = row
    return table


def make_realizable_instance(
    seed,
    M: int,
    class_sizes: Sequence[int],
    K: int,
    N_x: int,
    noise: str = "bernoulli",
    m_star: int | None = None,
    distinct: bool = True,
    star_margin: float | None = None,
) -> tuple[RealizableEnvironment, RegressionClassSequence, PolicyClassSequence]:
    """Sample nested grid-valued regression classes with ``f★`` planted in class ``m★``.

    ``class_sizes`` counts functions.  With ``distinct`` every function induces
    a policy not induced by any earlier one, so policy classes have exactly
    ``class_sizes`` members.  ``star_margin`` forces ``f★``'s best action to win
    by at least that much in every context.  The returned environment reuses
    ``seed`` for its loss stream unless re-seeded by the caller.
    """
    sizes = [int(s) for s in class_sizes]
    if len(sizes) != M:
        raise ValueError("class_sizes must have length M")
    if sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("class_sizes must be strictly increasing and positive")
    if noise not in NOISE_KINDS:
        raise ValueError(f"noise must be one of {NOISE_KINDS}")
    if distinct and K**N_x < sizes[-1]:
        raise ValueError(f"only {K}^{N_x} distinct policies exist, need {sizes[-1]}")
    rng = np.random.default_rng(seed)
    if m_star is None:
        m_star = int(rng.integers(1, M + 1))
    if not 1 <= m_star <= M:
        raise ValueError(f"m_star={m_star} outside [1, {M}]")

    star_slot = 0 if m_star == 1 else sizes[m_star - 2]
    functions = np.empty((sizes[-1], N_x, K))
    seen: set[tuple[int, ...]] = set()

    def draw(is_star: bool) -> np.ndarray:
        for _ in range(10_000):
            if is_star and star_margin is not None:
                table = _margin_table(rng, N_x, K, star_margin)
            else:
                table = _grid_table(rng, N_x, K)
            key = tuple(int(a) for a in induced_policy(table))
            if not distinct or key not in seen:
                seen.add(key)
                return table
        raise RuntimeError("could not draw a function with a new induced policy")

    functions[star_slot] = draw(True)
    for i in range(sizes[-1]):
        if i != star_slot:
            functions[i] = draw(False)

    classes = tuple(frozenset(range(s)) for s in sizes)
    instance = RegressionClassSequence(functions, classes, m_star, star_slot)
    env = RealizableEnvironment(instance, noise=noise, seed=seed)
    return env, instance, env.policy_sequence()


def optimal_loss(env: Environment) -> float:
    """Exact expected loss of ``π_{f★}`` under uniform contexts."""
    if not isinstance(env, RealizableEnvironment):
        raise TypeError(f"optimal loss is defined only for realizable instances, not {env.kind}")
    f = env.star_table
    return float(f[np.arange(f.shape[0]), induced_policy(f)].mean())


# ---------------------------------------------------------------------------
# switching, multi-armed and scripted environments


@dataclass(frozen=True)
class SwitchSchedule:
    arms: np.ndarray
    switch_times: tuple[int, ...]

    @property
    def S(self) -> int:
        return len(self.switch_times)


class SwitchingEnvironment(Environment):
    """Context ``x_t = t``; the planted arm has mean ``(1 - gap)/2``, the rest ``(1 + gap)/2``."""

    kind = "switching"

    def __init__(self, schedule: SwitchSchedule, K: int, gap: float, noise: str = "bernoulli", seed=None):
        if noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        self.schedule = schedule
        self.gap = gap
        self.noise = noise
        T = schedule.arms.shape[0]
        means = np.full((T, K), (1.0 + gap) / 2.0)
        means[np.arange(T), schedule.arms] = (1.0 - gap) / 2.0
        self._means = means
        super().__init__(K, T, seed)

    @property
    def T(self) -> int:
        return self.N_x

    def _draw_chunk(self, rng, n):
        start = self._contexts.shape[0]
        if start >= self.T:
            raise IndexError("switching environment exhausted its horizon")
        ctx = np.arange(start, min(start + n, self.T))
        return ctx, _sample_losses(rng, self._means[ctx], self.noise)

    def ground_truth(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "T": self.T,
            "gap": self.gap,
            "noise": self.noise,
            "switch_times": list(self.schedule.switch_times),
            "initial_arm": int(self.schedule.arms[0]),
            "planted_arms_at_switches": [int(self.schedule.arms[t - 1]) for t in self.schedule.switch_times],
        }


def make_switching_instance(
    seed,
    K: int,
    T: int,
    S: int,
    gap: float,
    noise: str = "bernoulli",
    switch_times: Sequence[int] | None = None,
) -> tuple[SwitchingEnvironment, SwitchSchedule]:
    """Plant an arm sequence with exactly ``S`` switches.

    ``switch_times`` are 1-based rounds at which the new arm takes over; they
    are sampled without replacement from ``2..T`` when not given.
    """
    if not 0 <= S < T:
        raise ValueError(f"need 0 <= S < T, got S={S}, T={T}")
    if not 0.0 < gap <= 1.0:
        raise ValueError("gap must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if switch_times is None:
        switch_times = sorted(int(t) for t in rng.choice(np.arange(2, T + 1), size=S, replace=False))
    else:
        switch_times = sorted(int(t) for t in switch_times)
        if len(switch_times) != S or len(set(switch_times)) != S or any(not 2 <= t <= T for t in switch_times):
            raise ValueError("switch_times must be S distinct rounds in [2, T]")
    arms = np.empty(T, dtype=np.int64)
    arm = int(rng.integers(0, K))
    prev = 1
    for t in list(switch_times) + [T + 1]:
        arms[prev - 1 : t - 1] = arm
        arm = (arm + 1 + int(rng.integers(0, K - 1))) % K
        prev = t
    schedule = SwitchSchedule(arms, tuple(switch_times))
    return SwitchingEnvironment(schedule, K, gap, noise, seed=seed), schedule


def switching_policy_sequence(T: int, K: int, max_switches: int) -> PolicyClassSequence:
    """Every action sequence of length ``T`` as a policy over contexts ``0..T-1``.

    Class ``m`` (1-based) holds the sequences with at most ``m - 1`` switches.
    """
    if not 0 <= max_switches < T:
        raise ValueError("need 0 <= max_switches < T")
    rows = []
    counts = []
    for seq in itertools.product(range(K), repeat=T):
        s = sum(a != b for a, b in zip(seq, seq[1:]))
        if s <= max_switches:
            rows.append(seq)
            counts.append(s)
    counts = np.array(counts)
    order = np.argsort(counts, kind="stable")
    tables = np.array(rows)[order]
    counts = counts[order]
    classes = tuple(frozenset(np.flatnonzero(counts <= s).tolist()) for s in range(max_switches + 1))
    return PolicyClassSequence(K=K, tables=tables, classes=classes)


class MABEnvironment(Environment):
    kind = "mab"

    def __init__(self, means: Sequence[float], noise: str = "bernoulli", seed=None):
        means = np.asarray(means, dtype=float)
        if means.ndim != 1 or np.any(means < 0) or np.any(means > 1):
            raise ValueError("arm means must lie in [0, 1]")
        if noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        self.means = means
        self.noise = noise
        super().__init__(means.shape[0], 1, seed)

    def _draw_chunk(self, rng, n):
        return np.zeros(n, dtype=np.int64), _sample_losses(rng, np.broadcast_to(self.means, (n, self.K)), self.noise)

    def ground_truth(self) -> dict:
        return {"kind": self.kind, "K": self.K, "means": self.means.tolist(), "noise": self.noise}


def make_mab_instance(seed, K: int, means: Sequence[float], noise: str = "bernoulli") -> MABEnvironment:
    if len(means) != K:
        raise ValueError("need one mean per arm")
    return MABEnvironment(means, noise, seed=seed)


class ScriptedEnvironment(Environment):
    """Adversary given as a callback of the history, or as a list of loss vectors played back cyclically.

    The callback form may react to past actions.
    """

    kind = "scripted"

    def __init__(
        self,
        script: Callable[[Sequence[Any]], Sequence[float]] | Sequence[Sequence[float]],
        K: int | None = None,
        contexts: Callable[[Sequence[Any]], int] | Sequence[int] | None = None,
        N_x: int = 1,
    ):
        if callable(script):
            if K is None:
                raise ValueError("K is required with a callback script")
            self._script = script
            self.oblivious = False
        else:
            rows = [as_loss_vector(r) for r in script]
            if not rows:
                raise ValueError("empty script")
            K = rows[0].shape[0]
            if any(r.shape[0] != K for r in rows):
                raise ValueError("script rows differ in length")
            self._rows = np.array(rows)
            self._script = lambda history: self._rows[len(history) % len(self._rows)]
        self._context_fn = contexts
        super().__init__(K, N_x, None)

    def next_context(self, history):
        c = self._context_fn
        if c is None:
            return 0
        x = c(history) if callable(c) else c[len(history) % len(c)]
        if not 0 <= x < self.N_x:
            raise ValueError(f"scripted context {x} outside [0, {self.N_x})")
        return int(x)

    def loss_vector(self, history, context):
        vec = as_loss_vector(self._script(history))
        if vec.shape[0] != self.K:
            raise ValueError("scripted loss vector has the wrong length")
        return vec

    def stream(self, T):
        if not self.oblivious or callable(self._context_fn):
            raise TypeError("adaptive scripts have no precomputed stream")
        hist: list[None] = []
        ctx = np.empty(T, dtype=np.int64)
        loss = np.empty((T, self.K))
        for t in range(T):
            ctx[t] = self.next_context(hist)
            loss[t] = self.loss_vector(hist, ctx[t])
            hist.append(None)
        return ctx, loss


def make_scripted(script, K: int | None = None, contexts=None, N_x: int = 1) -> ScriptedEnvironment:
    return ScriptedEnvironment(script, K=K, contexts=contexts, N_x=N_x)


# ---------------------------------------------------------------------------
# construction from config dictionaries

ENV_KINDS = ("stochastic_realizable", "switching", "mab", "scripted")


def build_environment(spec: dict, T: int, seed: int) -> Environment:
    """Instantiate an environment from its config dictionary for one run.

    The instance (planted tables, switch schedule) comes from ``instance_seed``
    when the config pins one, otherwise from the run seed; the loss stream
    always comes from the run seed.
    """
    kind = spec["kind"]
    instance_ss = np.random.SeedSequence([spec.get("instance_seed", seed), 0])
    stream_ss = np.random.SeedSequence([seed, 1])
    noise = spec.get("noise", "bernoulli")
    if kind == "stochastic_realizable":
        sizes = spec["class_sizes"]
        env, _, _ = make_realizable_instance(
            instance_ss,
            M=len(sizes),
            class_sizes=sizes,
            K=spec["K"],
            N_x=spec["N_x"],
            noise=noise,
            m_star=spec.get("m_star"),
            distinct=spec.get("distinct", True),
            star_margin=spec.get("star_margin"),
        )
    elif kind == "switching":
        env, _ = make_switching_instance(
            instance_ss, spec["K"], T, spec["S"], spec["gap"], noise, spec.get("switch_times")
        )
    elif kind == "mab":
        env = make_mab_instance(instance_ss, spec["K"], spec["means"], noise)
    elif kind == "scripted":
        env = make_scripted(spec["losses"], contexts=spec.get("contexts"), N_x=spec.get("N_x", 1))
    else:
        raise ValueError(f"unknown environment kind {kind!r}")
    env._seed = stream_ss
    env.reset()
    return env
