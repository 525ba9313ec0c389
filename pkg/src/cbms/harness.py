"""Seeded runs, sweeps over horizons and seeds, and regret-exponent fits."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .algorithms import build_learner
from .comparators import (
    class_regret,
    pacbayes_audit,
    quantile_comparator,
    switching_class_regret,
)
from .core import PROB_TOL, PolicyClassSequence, Trajectory, nested_prior
from .environments import Environment, RealizableEnvironment, build_environment

log = logging.getLogger(__name__)

RESULTS_HEADER = ("algo", "env", "T", "seed", "comparator", "regret")
AUDIT_HEADER = ("algo", "env", "T", "seed", "Q", "lhs", "variance_sum", "kl", "rhs", "ratio")
PREFACTOR_CAVEAT = (
    "Exponents are fitted on desk-scale grids; poly(K, M, log log|Pi|) prefactors "
    "cannot be separated from constants at this scale."
)


class InvalidDistribution(RuntimeError):
    def __init__(self, t: int, message: str):
        super().__init__(f"round {t}: {message}")
        self.t = t


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# single episode


def action_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence([int(seed), 2]))


def run_episode(env: Environment, learner, T: int, seed, seq: PolicyClassSequence | None = None) -> Trajectory:
    """Play ``T`` rounds of ``learner`` against ``env``.

    Bandit learners see only the realized entry; full-information learners
    see the whole loss vector, and their policy distributions (pushed to
    actions through ``seq``) are recorded.  Actions are sampled by inversion
    from one uniform per round.
    """
    if T < 1:
        raise ConfigError("horizon must be at least 1")
    full_info = getattr(learner, "full_information", False)
    if full_info:
        seq = seq if seq is not None else learner.seq
    K = env.K
    uniforms = action_rng(seed).random(T)
    contexts = np.empty(T, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    action_dists = np.empty((T, K))
    policy_dists = np.empty((T, seq.n_policies)) if full_info else None
    if env.oblivious:
        ctx_stream, loss_stream = env.stream(T)
        losses = np.array(loss_stream, dtype=float)
        history: Sequence = range(0)
    else:
        losses = np.empty((T, K))
        history = []

    for t in range(T):
        if env.oblivious:
            x = int(ctx_stream[t])
        else:
            x = env.next_context(history)
        if full_info:
            P = learner.begin_round(x)
            policy_dists[t] = P
            p = np.bincount(seq.tables[:, x], weights=P, minlength=K)
        else:
            p = learner.begin_round(x)
        # K is small: plain floats beat numpy reductions here
        pl = p.tolist()
        total = sum(pl)
        if not abs(total - 1.0) <= PROB_TOL:
            raise InvalidDistribution(t + 1, f"action distribution sums to {total!r}")
        if min(pl) < learner.floor - PROB_TOL:
            raise InvalidDistribution(t + 1, f"probability {min(pl):.3g} below floor {learner.floor:.3g}")
        u = uniforms[t] * total
        a = 0
        acc = pl[0]
        while acc <= u and a < K - 1:
            a += 1
            acc += pl[a]
        while pl[a] <= 0.0:
            a -= 1
        if not env.oblivious:
            losses[t] = env.loss_vector(history, x)
        loss = losses[t]
        if full_info:
            learner.update(loss)
        else:
            learner.update(a, float(loss[a]))
        contexts[t] = x
        actions[t] = a
        action_dists[t] = p
        if not env.oblivious:
            history.append((x, a, float(loss[a])))

    return Trajectory(contexts, losses, action_dists, actions, policy_dists, N_x=env.N_x)


# ---------------------------------------------------------------------------
# configs

CONFIG_SCHEMA = json.loads((Path(__file__).parent / "schema" / "config.schema.json").read_text())


@dataclass
class ExperimentConfig:
    name: str
    environments: list[dict]
    algorithms: list[dict]
    horizons: list[int]
    seeds: int = 20
    seed_offset: int = 0
    comparators: dict = field(default_factory=lambda: {"classes": "all"})
    joint_fit: bool = False
    report: str | None = None
    description: str = ""
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        validate_config(data)
        cfg = cls(**data)
        for item in cfg.environments:
            item.setdefault("label", item["kind"])
        for item in cfg.algorithms:
            item.setdefault("label", item["name"])
        for what, items in (("environment", cfg.environments), ("algorithm", cfg.algorithms)):
            labels = [i["label"] for i in items]
            if len(set(labels)) != len(labels):
                raise ConfigError(f"duplicate {what} labels: {labels}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


def validate_config(data: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    hs = data["horizons"]
    if any(b <= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("horizons must be strictly increasing")


# ---------------------------------------------------------------------------
# sweeps


def _star_regret(traj: Trajectory, env: RealizableEnvironment) -> float:
    star_actions = env.policy_sequence().tables[env.star_policy]
    star_loss = traj.losses[np.arange(traj.T), star_actions[traj.contexts]].sum()
    return traj.cumulative_loss - float(star_loss)


def _comparator_rows(traj: Trajectory, env: Environment, seq: PolicyClassSequence, comps: dict) -> list[tuple[str, float]]:
    rows: list[tuple[str, float]] = []
    classes = comps.get("classes", [])
    if classes == "all":
        classes = list(range(1, seq.M + 1))
    if classes:
        policy_losses = traj.policy_losses(seq.tables)
        for m in classes:
            rows.append((f"class:{m}", class_regret(traj, seq, m, policy_losses).regret))
    for S in comps.get("switches", []):
        rows.append((f"switch:{S}", switching_class_regret(traj, S)))
    for eps in comps.get("quantiles", []):
        _, comparator_loss = quantile_comparator(traj, seq, eps)
        rows.append((f"quantile:{eps:g}", traj.cumulative_loss - comparator_loss))
    if comps.get("star"):
        if not isinstance(env, RealizableEnvironment):
            raise ConfigError("the star comparator needs a stochastic_realizable environment")
        rows.append(("star", _star_regret(traj, env)))
    return rows


def audit_distributions(traj: Trajectory, seq: PolicyClassSequence, spec: dict) -> list[tuple[str, np.ndarray]]:
    """Comparator distributions for the PAC-Bayes audit: quantiles and, optionally, every point mass."""
    out = []
    for eps in spec.get("quantiles", [1.0, 0.5, 0.1]):
        Q, _ = quantile_comparator(traj, seq, eps)
        out.append((f"quantile:{eps:g}", Q))
    if spec.get("point_masses", True):
        for i in range(seq.n_policies):
            Q = np.zeros(seq.n_policies)
            Q[i] = 1.0
            out.append((f"point:{i}", Q))
    return out


def run_cell(comparators: dict, env_spec: dict, algo_spec: dict, T: int, seed: int) -> dict:
    """One (environment, algorithm, horizon, seed) cell; errors are captured, not raised."""
    start = time.perf_counter()
    cell = {"algo": algo_spec["label"], "env": env_spec["label"], "T": T, "seed": seed}
    try:
        env = build_environment(env_spec, T, seed)
        seq = env.policy_sequence()
        L_star = env.optimal_loss if isinstance(env, RealizableEnvironment) else None
        learner = build_learner(algo_spec, seq, T, L_star=algo_spec.get("L_star", L_star))
        traj = run_episode(env, learner, T, seed, seq=seq)
        cell["rows"] = _comparator_rows(traj, env, seq, comparators)
        if "audit" in comparators:
            if traj.policy_dists is None:
                raise ConfigError("the audit comparator needs a full-information learner")
            prior = getattr(learner, "prior", None)
            if prior is None:
                prior = nested_prior(seq)
            cell["audit"] = [
                (label, pacbayes_audit(traj, seq, Q, prior).to_dict())
                for label, Q in audit_distributions(traj, seq, comparators["audit"])
            ]
        cell["ground_truth"] = env.ground_truth()
        cell["digest"] = traj.digest()
        cell["learner_loss"] = traj.cumulative_loss
        if hasattr(learner, "m"):
            cell["selected_class"] = learner.m
    except Exception as exc:  # recorded per cell; the sweep carries on
        log.warning("cell %s failed: %s", cell, exc)
        cell["error"] = f"{type(exc).__name__}: {exc}"
        cell["rows"] = []
    cell["seconds"] = time.perf_counter() - start
    return cell


@dataclass
class SweepResult:
    config: ExperimentConfig
    cells: list[dict]

    @property
    def rows(self) -> list[tuple]:
        out = []
        for c in self.cells:
            for comp, regret in c["rows"]:
                out.append((c["algo"], c["env"], c["T"], c["seed"], comp, regret))
        return out

    @property
    def failures(self) -> list[dict]:
        return [c for c in self.cells if "error" in c]

    def regrets(self, algo: str, env: str, T: int, comparator: str) -> np.ndarray:
        return np.array(
            [r[5] for r in self.rows if r[0] == algo and r[1] == env and r[2] == T and r[4] == comparator]
        )

    def summary(self) -> list[dict]:
        """Seed-mean regret and its standard error per (algo, env, T, comparator)."""
        groups: dict[tuple, list[float]] = {}
        for algo, env, T, _, comp, regret in self.rows:
            groups.setdefault((algo, env, T, comp), []).append(regret)
        out = []
        for (algo, env, T, comp), vals in groups.items():
            v = np.array(vals)
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            out.append({"algo": algo, "env": env, "T": T, "comparator": comp, "n": v.size, "mean": float(v.mean()), "se": se})
        return out

    def rate_fits(self) -> list[dict]:
        fits = []
        by_curve: dict[tuple, list[tuple[int, float]]] = {}
        for s in self.summary():
            by_curve.setdefault((s["algo"], s["env"], s["comparator"]), []).append((s["T"], s["mean"]))
        for (algo, env, comp), pts in by_curve.items():
            if len(pts) < 3:
                continue
            try:
                fit = fit_rate(pts)
            except ValueError as exc:
                fits.append({"algo": algo, "env": env, "comparator": comp, "error": str(exc)})
                continue
            fits.append({"algo": algo, "env": env, "comparator": comp, **asdict(fit)})
        return fits

    def class_size(self, env: str, comparator: str) -> int | None:
        gts = [c["ground_truth"] for c in self.cells if c["env"] == env and "ground_truth" in c]
        if not gts or "class_sizes" not in gts[0]:
            return None
        sizes = gts[0]["class_sizes"]
        if comparator == "star":
            ms = {g["m_star"] for g in gts}
            return sizes[ms.pop() - 1] if len(ms) == 1 else None
        if comparator.startswith("class:"):
            return sizes[int(comparator.split(":")[1]) - 1]
        return None

    def joint_fits(self) -> list[dict]:
        """Fit log regret on (log T, log log|Π|) per (algo, comparator), pooling environments."""
        pts: dict[tuple, list[tuple[int, int, float]]] = {}
        for s in self.summary():
            size = self.class_size(s["env"], s["comparator"])
            if size is None:
                continue
            pts.setdefault((s["algo"], s["comparator"]), []).append((s["T"], size, s["mean"]))
        fits = []
        for (algo, comp), p in pts.items():
            try:
                fit = fit_rate_joint(p)
            except ValueError as exc:
                fits.append({"algo": algo, "comparator": comp, "error": str(exc)})
                continue
            fits.append({"algo": algo, "comparator": comp, **asdict(fit)})
        return fits


def sweep(config: ExperimentConfig, parallelism: int | None = None) -> SweepResult:
    """Run every (environment, algorithm, horizon, seed) cell.

    Cells are independent; their order in the result is canonical whatever
    the degree of parallelism.
    """
    tasks = [
        (config.comparators, e, a, T, config.seed_offset + s)
        for e in config.environments
        for a in config.algorithms
        for T in config.horizons
        for s in range(config.seeds)
    ]
    parallelism = parallelism or os.cpu_count() or 1
    if parallelism <= 1 or len(tasks) == 1:
        cells = [run_cell(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            cells = list(pool.map(run_cell, *zip(*tasks)))
    env_order = {e["label"]: i for i, e in enumerate(config.environments)}
    algo_order = {a["label"]: i for i, a in enumerate(config.algorithms)}
    cells.sort(key=lambda c: (algo_order[c["algo"]], env_order[c["env"]], c["T"], c["seed"]))
    return SweepResult(config, cells)


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    alpha_hat: float
    r2: float
    alpha_se: float
    n_points: int
    beta_hat: float | None = None
    beta_se: float | None = None
    intercept: float = 0.0


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    n, k = X.shape
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if n > k:
        sigma2 = ss_res / (n - k)
        cov = sigma2 * np.linalg.pinv(X.T @ X)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    else:
        se = np.full(k, np.nan)
    return coef, se, min(max(r2, 0.0), 1.0)


def fit_rate(points: Iterable[tuple[float, float]]) -> RateFit:
    """Least-squares slope of log regret against log T; non-positive regrets are dropped."""
    pts = [(float(T), float(r)) for T, r in points if r > 0]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 positive points, have {len(pts)}")
    T, r = np.array(pts).T
    X = np.column_stack([np.ones_like(T), np.log(T)])
    coef, se, r2 = _ols(X, np.log(r))
    return RateFit(alpha_hat=float(coef[1]), r2=r2, alpha_se=float(se[1]), n_points=len(pts), intercept=float(coef[0]))


def fit_rate_joint(points: Iterable[tuple[float, float, float]]) -> RateFit:
    """Fit ``log regret = c + alpha log T + beta log log|Π|`` from (T, |Π|, regret) triples."""
    pts = [(float(T), float(n), float(r)) for T, n, r in points if r > 0 and n > 1]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 positive points, have {len(pts)}")
    T, n, r = np.array(pts).T
    X = np.column_stack([np.ones_like(T), np.log(T), np.log(np.log(n))])
    if np.linalg.matrix_rank(X) < 3:
        raise ValueError("joint fit needs variation in both T and |Pi|")
    coef, se, r2 = _ols(X, np.log(r))
    return RateFit(
        alpha_hat=float(coef[1]),
        r2=r2,
        alpha_se=float(se[1]),
        n_points=len(pts),
        beta_hat=float(coef[2]),
        beta_se=float(se[2]),
        intercept=float(coef[0]),
    )


# ---------------------------------------------------------------------------
# derived experiments


def pareto_config(K: int, T: int, prior_biases: Sequence[float], seeds: int, gap: float = 0.2) -> ExperimentConfig:
    """MAB family (each arm best in turn) against Exp3 with extra prior mass on arm 0."""
    good, bad = (1.0 - gap) / 2.0, (1.0 + gap) / 2.0
    envs = []
    for i in range(K):
        means = [bad] * K
        means[i] = good
        envs.append({"kind": "mab", "K": K, "means": means, "label": f"best_arm_{i}"})
    algos = [{"name": "exp3", "prior_bias": float(b), "label": f"exp3_bias_{b:g}"} for b in prior_biases]
    return ExperimentConfig.from_dict(
        {
            "name": "pareto",
            "environments": envs,
            "algorithms": algos,
            "horizons": [T],
            "seeds": seeds,
            "comparators": {"classes": [1]},
            "report": "pareto",
        }
    )


def pareto_table(result: SweepResult) -> list[dict]:
    """Per prior bias: regret to arm 0 on its own instance, and worst regret over the other instances."""
    T = result.config.horizons[0]
    K = len(result.config.environments)
    table = []
    for algo in result.config.algorithms:
        per_arm = []
        for i in range(K):
            r = result.regrets(algo["label"], f"best_arm_{i}", T, "class:1")
            per_arm.append((float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else 0.0))
        worst = max(range(1, K), key=lambda i: per_arm[i][0])
        table.append(
            {
                "algo": algo["label"],
                "prior_bias": algo["prior_bias"],
                "regret_arm0": per_arm[0][0],
                "regret_arm0_se": per_arm[0][1],
                "worst_other_regret": per_arm[worst][0],
                "worst_other_se": per_arm[worst][1],
                "worst_other_arm": worst,
                "per_arm_mean": [m for m, _ in per_arm],
            }
        )
    return table


def pareto_experiment(K: int, T: int, prior_bias, seeds: int, gap: float = 0.2, parallelism: int | None = None) -> list[dict]:
    biases = [prior_bias] if np.isscalar(prior_bias) else list(prior_bias)
    if any(b < 1 for b in biases):
        raise ValueError("prior_bias must be at least 1")
    return pareto_table(sweep(pareto_config(K, T, biases, seeds, gap), parallelism))


def probe_table(result: SweepResult, comparator: str = "star", threshold: float = 1.1) -> list[dict]:
    """Joint (alpha, beta) fit per algorithm, flagging alpha + beta <= threshold."""
    rows = []
    for fit in result.joint_fits():
        if fit["comparator"] != comparator or "error" in fit:
            continue
        s = fit["alpha_hat"] + fit["beta_hat"]
        rows.append(
            {
                "algo": fit["algo"],
                "alpha_hat": fit["alpha_hat"],
                "beta_hat": fit["beta_hat"],
                "alpha_plus_beta": s,
                "r2": fit["r2"],
                "n_points": fit["n_points"],
                "sum_within_threshold": bool(s <= threshold),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dump_json(obj, path: Path) -> None:
    # repr-based float formatting is shortest round-trip (at most 17 significant digits)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def write_outputs(result: SweepResult, out_dir: str | Path, extra: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results.csv": out / "results.csv",
        "summary.csv": out / "summary.csv",
        "results.json": out / "results.json",
        "ratefit.json": out / "ratefit.json",
        "config.json": out / "config.json",
    }
    paths["results.csv"].write_text(_csv(RESULTS_HEADER, result.rows))
    summ = result.summary()
    paths["summary.csv"].write_text(
        _csv(("algo", "env", "T", "comparator", "n", "mean", "se"), [tuple(s.values()) for s in summ])
    )
    cells = [{k: v for k, v in c.items() if k != "seconds"} for c in result.cells]
    dump_json({"config": result.config.to_dict(), "cells": cells, "failures": len(result.failures)}, paths["results.json"])
    fits = {"caveat": PREFACTOR_CAVEAT, "fits": result.rate_fits()}
    if result.config.joint_fit:
        fits["joint"] = result.joint_fits()
        probe = probe_table(result)
        fits["probe"] = probe
        paths["probe.csv"] = out / "probe.csv"
        paths["probe.csv"].write_text(
            _csv(
                ("algo", "alpha_hat", "beta_hat", "alpha_plus_beta", "r2", "n_points", "sum_within_threshold"),
                [tuple(r.values()) for r in probe],
            )
        )
    dump_json(fits, paths["ratefit.json"])
    dump_json(result.config.to_dict(), paths["config.json"])
    audits = [
        (c["algo"], c["env"], c["T"], c["seed"], label, a["lhs"], a["variance_sum"], a["kl"], a["rhs"], a["ratio"])
        for c in result.cells
        for label, a in c.get("audit", [])
    ]
    if result.config.report == "pareto":
        table = pareto_table(result)
        paths["pareto.csv"] = out / "pareto.csv"
        paths["pareto.csv"].write_text(
            _csv(
                ("algo", "prior_bias", "regret_arm0", "regret_arm0_se", "worst_other_regret", "worst_other_se", "worst_other_arm"),
                [tuple(r[k] for k in ("algo", "prior_bias", "regret_arm0", "regret_arm0_se", "worst_other_regret", "worst_other_se", "worst_other_arm")) for r in table],
            )
        )
    if audits:
        paths["audit.csv"] = out / "audit.csv"
        paths["audit.csv"].write_text(_csv(AUDIT_HEADER, audits))
    if extra:
        for name, content in extra.items():
            paths[name] = out / name
            paths[name].write_text(content)
    return paths
