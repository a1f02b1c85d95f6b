import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expert_evaluators.engine import Advice
from expert_evaluators.loss import LOG, SQUARE, ZERO, GeneralizedLogLoss, mirrored_square
from expert_evaluators.protocols import (
    BipartiteRelation,
    Bound,
    ConstantLearner,
    GameError,
    RegretLedger,
    Step,
    TranscriptError,
    bipartite_wrap,
    bound_tol,
    ledger_report,
    multiobjective_wrap,
    play_specialist,
    q_tol,
    read_transcript,
    run_bipartite_game,
    run_constant_evaluator_game,
    run_evaluator_game,
    run_multiobjective_game,
    run_standard_game,
    verify_transcript,
    write_transcript,
)
from expert_evaluators.sim import (
    AwakePattern,
    Bernoulli,
    Constant,
    Drift,
    GreedyAdversary,
    IIDUniform,
    ScriptedReality,
    Sleeper,
)
from expert_evaluators.specialist import SpecialistConfig

import oracles
from helpers import mutation_step

GENLOG = GeneralizedLogLoss(0.5)


def _iid(n, seed, loss=LOG, eta=None):
    return [IIDUniform(loss=loss, eta=eta).reseed(seed, f"e{i}") for i in range(n)]


def test_default_tolerances(monkeypatch):
    assert bound_tol() == 1e-6 and q_tol() == 1e-9
    monkeypatch.setenv("EXPERT_EVAL_BOUND_TOL", "1e-3")
    monkeypatch.setenv("EXPERT_EVAL_Q_TOL", "1e-7")
    assert bound_tol() == 1e-3 and q_tol() == 1e-7


def test_single_expert_no_regret():
    res = run_evaluator_game(_iid(1, 0), Bernoulli(0.4).reseed(0), 100)
    assert res.ledger.weighted_regret[0] <= 1e-6
    assert res.passed


def test_two_constant_evaluators():
    experts = [IIDUniform(loss=LOG).reseed(1, "a"), IIDUniform(loss=SQUARE).reseed(1, "b")]
    res = run_constant_evaluator_game(experts, GreedyAdversary(LOG), 2000)
    bounds = {b.expert: b.value for b in res.bounds}
    assert bounds[0] == pytest.approx(math.log(2)) and bounds[1] == pytest.approx(math.log(2) / 2)
    assert res.passed


def test_mixed_losses_adversarial():
    losses = [(LOG, 1.0), (SQUARE, 2.0), (GENLOG, 0.5)]
    experts = []
    for i in range(8):
        loss, eta = losses[i % 3]
        kind = [IIDUniform, lambda loss, eta: Constant(0.2 + 0.07 * i, loss, eta),
                lambda loss, eta: Drift(0.1, 2e-4, loss, eta)][i % 3]
        experts.append(kind(loss=loss, eta=eta).reseed(0, f"e{i}"))
    res = run_evaluator_game(experts, GreedyAdversary(SQUARE), 2000)
    assert res.passed
    assert max(res.ledger.weighted_regret) <= math.log(8) + 1e-6
    assert verify_transcript(res.transcript).ok


def test_prior_weighted_bounds():
    priors = [0.7, 0.2, 0.1]
    res = run_evaluator_game(_iid(3, 8), GreedyAdversary(LOG), 1500, priors=priors)
    assert [b.value for b in res.bounds] == pytest.approx([-math.log(p) for p in priors])
    assert res.passed


def test_changing_losses_per_step():
    # an evaluator may switch loss and rate every step
    class Switching(IIDUniform):
        def next_advice(self, t, history=()):
            loss, eta = [(LOG, 1.0), (SQUARE, 2.0), (GENLOG, 0.5), (SQUARE, 1.0)][t % 4]
            return Advice(self.prediction(t, history), eta, loss)

    experts = [Switching().reseed(2, f"s{i}") for i in range(3)]
    res = run_evaluator_game(experts, GreedyAdversary(LOG), 1500)
    assert res.passed
    v = verify_transcript(res.transcript)
    assert v.ok, v.failures


def test_standard_reduces_to_shared_loss_bound():
    res = run_standard_game(SQUARE, _iid(3, 4), Bernoulli(0.7).reseed(4), 1000)
    for r in res.report():
        assert r.bound == pytest.approx(math.log(3) / 2)
    assert res.passed
    assert res.ledger.standard_learner_loss == pytest.approx(res.ledger.learner_loss[0])


def test_zero_loss_expert_bound_trivial():
    experts = [IIDUniform(loss=LOG).reseed(0, "a"), IIDUniform(loss=ZERO).reseed(0, "b")]
    res = run_constant_evaluator_game(experts, GreedyAdversary(LOG), 300)
    assert res.ledger.learner_loss[1] == 0.0 and res.ledger.expert_loss[1] == 0.0
    assert res.passed


def test_constant_game_rejects_improper_loss():
    with pytest.raises(GameError):
        run_constant_evaluator_game([Constant(0.5, mirrored_square())], Bernoulli(0.5), 10)


def test_multiobjective_single_loss_matches_constant_game():
    a = run_multiobjective_game(_iid(3, 5), [LOG], Bernoulli(0.3).reseed(5), 300)
    b = run_constant_evaluator_game(_iid(3, 5), Bernoulli(0.3).reseed(5), 300)
    assert a.transcript.predictions() == b.transcript.predictions()
    assert [x.value for x in a.bounds] == [x.value for x in b.bounds]


def test_multiobjective_bounds():
    res = run_multiobjective_game(_iid(3, 6), [LOG, SQUARE], GreedyAdversary(LOG), 2000)
    assert len(res.bounds) == 6
    by_loss = {res.ledger.labels[b.expert].split(" / ")[1]: b.value for b in res.bounds}
    assert by_loss["log"] == pytest.approx(1.791759, abs=1e-6)
    assert by_loss["square"] == pytest.approx(0.895880, abs=1e-6)
    assert res.passed


def test_multiobjective_one_expert_two_losses():
    res = run_multiobjective_game(_iid(1, 7), [LOG, SQUARE], Bernoulli(0.5).reseed(7), 500)
    assert sorted(b.value for b in res.bounds) == pytest.approx([math.log(2) / 2, math.log(2)])
    assert res.passed


def test_wrap_shapes():
    base = _iid(2, 0)
    v = multiobjective_wrap(base, [LOG, SQUARE])
    assert [(x.source_index, x.loss_index) for x in v] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    full = bipartite_wrap(BipartiteRelation.complete(2, 2), base, [LOG, SQUARE])
    assert [(x.source_index, x.loss_index) for x in full] == [(x.source_index, x.loss_index) for x in v]


def test_bipartite_sparse():
    rel = BipartiteRelation([(0, 0), (0, 1), (1, 1), (2, 0), (3, 1)])
    res = run_bipartite_game(rel, _iid(4, 8), [LOG, SQUARE], GreedyAdversary(SQUARE), 1500)
    assert len(res.bounds) == 5
    for b in res.bounds:
        eta = res.transcript.steps[0].advice[b.expert].eta
        assert b.value == pytest.approx(math.log(5) / eta)
    assert res.passed


def test_bipartite_one_loss_each_recovers_constant_game():
    rel = BipartiteRelation([(0, 0), (1, 1)])
    res = run_bipartite_game(rel, _iid(2, 9), [LOG, SQUARE], Bernoulli(0.5).reseed(9), 200)
    assert [b.value for b in res.bounds] == pytest.approx([math.log(2), math.log(2) / 2])


def test_bipartite_validation():
    with pytest.raises(GameError):
        BipartiteRelation([(0, 3)]).validate(1, 2)
    with pytest.raises(GameError):
        BipartiteRelation([(0, 0)]).validate(2, 1)


def test_zero_step_game():
    res = run_evaluator_game(_iid(3, 0), Bernoulli(0.5), 0)
    assert all(r.realized == 0.0 and r.passed for r in res.report())


def test_constant_learner_violates():
    # experts that are nearly always right beat a learner stuck at 0.5
    experts = [Constant(0.05), Constant(0.95)]
    res = run_standard_game(LOG, experts, ScriptedReality([0], cycle=True), 50, learner=ConstantLearner(0.5))
    rows = res.report()
    assert not rows[0].passed and rows[0].slack < 0
    assert not verify_transcript(res.transcript).ok


def test_specialist_priors_bounds():
    cfg = SpecialistConfig(LOG, 1.0, (0.4, 0.3, 0.2, 0.1))
    experts = [Sleeper(IIDUniform(), AwakePattern("random", p=0.5)).reseed(3, f"s{i}") for i in range(4)]
    res = play_specialist(cfg, experts, Bernoulli(0.35).reseed(3), 2000)
    for b, p in zip(res.bounds, cfg.priors):
        assert b.value == pytest.approx(-math.log(p))
    assert res.passed
    assert verify_transcript(res.transcript).ok


def test_ledger_counts_only_awake_steps():
    ledger = RegretLedger(2)
    ledger.record([Advice(0.8, 1.0, LOG), Advice(None, 1.0, LOG)], 0.5, 1)
    assert ledger.awake_steps == [1, 0]
    assert ledger.regret[0] == pytest.approx(math.log(0.8 / 0.5) * 1 + 0, rel=1e-14)
    assert ledger.expert_loss[1] == 0.0
    rows = ledger_report(ledger, [Bound(0, "regret", 0.1), Bound(1, "regret", 0.0)])
    assert [r.passed for r in rows] == [False, True]


def test_transcript_roundtrip():
    experts = [Sleeper(IIDUniform(loss=SQUARE), AwakePattern("odd")).reseed(0, "a"),
               IIDUniform(loss=GENLOG).reseed(0, "b")]
    res = run_evaluator_game(experts, GreedyAdversary(LOG), 50, priors=[0.3, 0.7])
    buf = io.StringIO()
    write_transcript(res.transcript, buf)
    back = read_transcript(io.StringIO(buf.getvalue()))
    assert back.priors == (0.3, 0.7)
    assert back.steps == res.transcript.steps
    lines = buf.getvalue().splitlines()
    assert json.loads(lines[0])["type"] == "header"
    assert json.loads(lines[2])["advice"][0][0] == "abstain"  # asleep at t=2


@pytest.mark.parametrize("text", ['{"t": 1}', "not json", '{"t":1,"advice":[[0.5,1,"hinge"]],"pi":0.5,"omega":1}',
                                  '{"t":1,"advice":[[0.5,1,"log"]],"pi":0.5,"omega":3}'])
def test_transcript_parse_errors(text):
    with pytest.raises(TranscriptError):
        read_transcript(io.StringIO(text + "\n"))


def test_empty_transcript_verifies():
    assert verify_transcript(read_transcript(io.StringIO(""))).ok


def test_verify_matches_brute_capital():
    experts = _iid(3, 4, SQUARE)
    res = run_evaluator_game(experts, Bernoulli(0.5).reseed(1), 60)
    rounds = []
    prev = 1.0
    for s in res.transcript.steps:
        ref = [(oracles.square_loss, a.eta, a.prediction) for a in s.advice]
        rounds.append((ref, s.prediction, s.outcome))
        q = oracles.brute_capital([1 / 3] * 3, rounds)
        assert q <= prev + 1e-9
        prev = q
    assert verify_transcript(res.transcript).ok


def test_mutation_never_hurts_against_greedy_reality():
    # greedy reality already picks the outcome where pi loses more, so the
    # flipped forecast can only lower the capital
    res = run_evaluator_game(_iid(2, 3), GreedyAdversary(LOG), 200)
    assert mutation_step(res.transcript, 0.0) is None


def test_verify_detects_mutation():
    res = run_evaluator_game(_iid(2, 3), Bernoulli(0.5).reseed(3), 200)
    assert verify_transcript(res.transcript).ok
    t = mutation_step(res.transcript)
    assert t is not None
    s = res.transcript.steps[t]
    res.transcript.steps[t] = Step(s.advice, 1.0 - s.prediction, s.outcome)
    v = verify_transcript(res.transcript)
    assert not v.ok
    assert v.first_failure.step == t + 1
    assert any(f.check == "capital-monotone" and f.step == t + 1 for f in v.failures)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 5), p=st.floats(0, 1))
def test_any_df_game_passes(seed, n, p):
    losses = [(LOG, 1.0), (SQUARE, 2.0), (GENLOG, 0.5), (SQUARE, 0.7)]
    experts = [IIDUniform(loss=losses[i % 4][0], eta=losses[i % 4][1]).reseed(seed, f"e{i}") for i in range(n)]
    res = run_evaluator_game(experts, Bernoulli(p).reseed(seed), 150)
    assert all(r.slack >= -1e-6 for r in res.report())
    assert verify_transcript(res.transcript).ok
