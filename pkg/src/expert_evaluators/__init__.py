"""Prediction with expert evaluators' advice: defensive forecasting for
experts with their own losses and learning rates, the specialist-experts
Aggregating Algorithm, and numeric checks of their regret bounds."""

from .engine import (
    Advice,
    Branch,
    DefensiveForecaster,
    EvaluatorState,
    InvariantViolation,
    StepDecision,
    choose_prediction,
    f_t,
    update_state,
)
from .loss import (
    LOG,
    SQUARE,
    ZERO,
    GeneralizedLogLoss,
    Loss,
    LossError,
    MixabilityError,
    ScaledLoss,
    check_assumptions,
    check_eta_mixable,
    check_proper,
    evaluate,
    mixability_constant,
    northeast_of_shift,
    parse_loss,
    substitution,
    superprediction_contains,
)
from .protocols import (
    BipartiteRelation,
    Bound,
    GameResult,
    RegretLedger,
    Transcript,
    bipartite_wrap,
    ledger_report,
    multiobjective_wrap,
    read_transcript,
    run_bipartite_game,
    run_constant_evaluator_game,
    run_evaluator_game,
    run_multiobjective_game,
    run_standard_game,
    verify_transcript,
    write_transcript,
)
from .sim import (
    AwakePattern,
    Bernoulli,
    Constant,
    Drift,
    GreedyAdversary,
    IIDUniform,
    Scripted,
    ScriptedReality,
    Sleeper,
    parse_expert,
    parse_reality,
)
from .specialist import (
    SpecialistConfig,
    SpecialistLearner,
    SpecialistState,
    run_specialist_game,
    specialist_predict,
    specialist_update,
)
