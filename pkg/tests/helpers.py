from expert_evaluators.engine import EvaluatorState, f_t, update_state


def mutation_step(tr, min_rise=1e-6):
    """First step where replacing pi by 1 - pi raises the capital by more
    than ``min_rise`` (replayed with the engine's own f_t)."""
    state = EvaluatorState.fresh(tr.n_experts, tr.priors)
    for t, s in enumerate(tr.steps):
        if f_t(state, list(s.advice), 1.0 - s.prediction, s.outcome) > min_rise:
            return t
        state = update_state(state, list(s.advice), s.prediction, s.outcome)
    return None
