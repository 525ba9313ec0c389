"""Contextual-bandit model selection: learners, environments, exact regret accounting and sweeps."""

from .algorithms import (
    BanditFromFullInfo,
    EpsilonGreedy,
    Exp3,
    Exp4,
    Hedge,
    HedgeState,
    LStarTestSelector,
    MultiscaleHedge,
    RestartedExp3,
    bandit_from_fullinfo,
    build_learner,
    epsilon_greedy_step,
    exp3_step,
    exp4_step,
    hedge_step,
    lstar_test_select,
    multiscale_hedge,
    restarted_exp3,
)
from .comparators import (
    AuditReport,
    RegretEntry,
    RegretReport,
    best_switching_sequence,
    class_regret,
    pacbayes_audit,
    quantile_comparator,
    regret_report,
    switching_class_regret,
)
from .core import (
    Policy,
    PolicyClassSequence,
    RoundRecord,
    Trajectory,
    importance_weighted_loss,
    induced_action_distribution,
    minimal_class_index,
    nested_prior,
)
from .environments import (
    RegressionClassSequence,
    build_environment,
    induced_policy,
    make_mab_instance,
    make_realizable_instance,
    make_scripted,
    make_switching_instance,
    optimal_loss,
    switching_policy_sequence,
)
from .harness import (
    ExperimentConfig,
    RateFit,
    fit_rate,
    fit_rate_joint,
    pareto_experiment,
    run_episode,
    sweep,
)

__version__ = "0.1.0"
