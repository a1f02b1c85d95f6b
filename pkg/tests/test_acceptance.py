"""Acceptance criteria, each at its stated scale and tolerance.

Every test records a ``criterion`` label and a one-line ``detail``; the
conftest prints one PASS/FAIL line per criterion after the run.
"""

import json
import math
import random
import time

import numpy as np
import pytest

from expert_evaluators.cli import main
from expert_evaluators.engine import Advice, verify_step_supermartingale
from expert_evaluators.loss import (
    LOG,
    SQUARE,
    ZERO,
    GeneralizedLogLoss,
    ScaledLoss,
    check_eta_mixable,
    check_proper,
    mirrored_square,
    substitution,
)
from expert_evaluators.protocols import (
    play_specialist,
    run_evaluator_game,
    run_multiobjective_game,
    verify_transcript,
)
from expert_evaluators.sim import (
    AwakePattern,
    Bernoulli,
    Constant,
    Drift,
    GreedyAdversary,
    IIDUniform,
    Scripted,
    ScriptedReality,
    Sleeper,
)
from expert_evaluators.specialist import SpecialistConfig

import oracles
from helpers import mutation_step

GENLOG = GeneralizedLogLoss(0.5)
BUILTINS = [("log", LOG, 1.0), ("square", SQUARE, 2.0), ("genlog:0.5", GENLOG, 0.5)]
BOUND_TOL = 1e-6


@pytest.fixture
def criterion(record_property):
    def mark(label, detail=""):
        record_property("criterion", label)
        record_property("detail", detail)

    return mark


def mixed_experts(seed):
    losses = [(LOG, 1.0), (SQUARE, 2.0), (GENLOG, 0.5)]
    out = []
    for i in range(8):
        loss, eta = losses[i % 3]
        kind = [IIDUniform(loss=loss, eta=eta), Constant(0.3 + 0.05 * i, loss, eta),
                Drift(0.1, 1e-4, loss, eta)][i % 3]
        out.append(kind.reseed(seed, f"expert{i}"))
    return out


def test_criterion_1_mixed_losses_twenty_seeds(criterion):
    criterion("1 mixed-loss weighted regret <= ln 8, 20 seeds")
    start = time.perf_counter()
    worst = -math.inf
    for seed in range(20):
        res = run_evaluator_game(mixed_experts(seed), GreedyAdversary(LOG), 10_000, keep_history=False)
        worst = max(worst, max(res.ledger.weighted_regret))
    elapsed = time.perf_counter() - start
    criterion("1 mixed-loss weighted regret <= ln 8, 20 seeds",
              f"max regret {worst:.6f} vs ln 8 = {math.log(8):.6f}; runtime {elapsed:.1f} s (target < 30 s)")
    assert worst <= math.log(8) + BOUND_TOL


def test_criterion_2_log_and_square_via_multiobjective(criterion):
    label = "2 N=3 log+square: log <= ln 6, square <= 0.5 ln 6"
    criterion(label)
    experts = [IIDUniform().reseed(0, "a"), Constant(0.3).reseed(0, "b"), Drift(0.9, -8e-5).reseed(0, "c")]
    res = run_multiobjective_game(experts, [LOG, SQUARE], GreedyAdversary(LOG), 10_000, keep_history=False)
    by_loss = {"log": [], "square": []}
    for b in res.bounds:
        kind = res.ledger.labels[b.expert].split(" / ")[1]
        by_loss[kind].append((res.ledger.regret[b.expert], b.value))
    worst_log = max(r for r, _ in by_loss["log"])
    worst_sq = max(r for r, _ in by_loss["square"])
    criterion(label, f"log {worst_log:.6f} <= {math.log(6):.4f}, square {worst_sq:.6f} <= {0.5 * math.log(6):.4f}")
    assert all(b == pytest.approx(math.log(6), abs=1e-12) for _, b in by_loss["log"])
    assert all(b == pytest.approx(0.5 * math.log(6), abs=1e-12) for _, b in by_loss["square"])
    assert worst_log <= math.log(6) + BOUND_TOL
    assert worst_sq <= 0.5 * math.log(6) + BOUND_TOL
    # the (ln N + 0.7, 0.5 ln N + 0.4) reading of the same bounds
    assert math.log(6) < math.log(3) + 0.7 and 0.5 * math.log(6) < 0.5 * math.log(3) + 0.4


@pytest.mark.parametrize("name,loss,eta", [("log", LOG, 1.0), ("square", SQUARE, 2.0)])
def test_criterion_3_specialists_with_priors(criterion, name, loss, eta):
    label = f"3 specialists with priors (0.4, 0.3, 0.2, 0.1), {name}"
    criterion(label)
    cfg = SpecialistConfig(loss, eta, (0.4, 0.3, 0.2, 0.1))
    experts = [Sleeper(IIDUniform(), AwakePattern("random", p=0.3 + 0.15 * i)).reseed(1, f"s{i}") for i in range(4)]
    res = play_specialist(cfg, experts, Bernoulli(0.3).reseed(1), 10_000, keep_history=False)
    slack = [-math.log(p) / eta - r for p, r in zip(cfg.priors, res.ledger.regret)]
    criterion(label, f"min slack {min(slack):.6f}, awake steps {res.ledger.awake_steps}")
    assert all(s >= -BOUND_TOL for s in slack)


def random_config(rng):
    n = rng.randint(1, 8)
    experts = []
    for i in range(n):
        loss = rng.choice([LOG, SQUARE, GeneralizedLogLoss(rng.uniform(0.2, 2.0)), ScaledLoss(SQUARE, rng.uniform(0.5, 3))])
        eta = loss.eta_max * rng.uniform(0.05, 1.0)
        kind = rng.choice(["iid", "constant", "drift", "sleeper"])
        if kind == "iid":
            e = IIDUniform(loss=loss, eta=eta)
        elif kind == "constant":
            e = Constant(rng.random(), loss, eta)
        elif kind == "drift":
            e = Drift(rng.random(), rng.uniform(-1e-3, 1e-3), loss, eta)
        else:
            e = Sleeper(IIDUniform(loss=loss, eta=eta), AwakePattern("random", p=rng.uniform(0.1, 0.9)))
        experts.append(e.reseed(rng.randint(0, 10**9), f"e{i}"))
    reality = rng.choice([Bernoulli(rng.random()), GreedyAdversary(LOG), GreedyAdversary(SQUARE)])
    raw = [rng.random() + 0.01 for _ in range(n)]
    priors = [r / math.fsum(raw) for r in raw] if rng.random() < 0.5 else None
    if priors is not None:
        priors[-1] = 1.0 - math.fsum(priors[:-1])
    return experts, reality.reseed(rng.randint(0, 10**9)), priors


def test_criterion_4_capital_monotone(criterion):
    label = "4 Q_t <= Q_(t-1) + 1e-9, 50 configs x 1000 steps"
    criterion(label)
    rng = random.Random(2024)
    worst_rise = -math.inf
    replay_ok = True
    for _ in range(50):
        experts, reality, priors = random_config(rng)
        res = run_evaluator_game(experts, reality, 1000, priors=priors, keep_history=False)
        q = np.exp(np.array(res.log_capital))
        worst_rise = max(worst_rise, float(np.max(np.diff(q))))
        replay_ok &= verify_transcript(res.transcript, qtol=1e-9).ok
    criterion(label, f"largest step increase {worst_rise:.3e}; independent replay {'ok' if replay_ok else 'FAILED'}")
    assert worst_rise <= 1e-9
    assert replay_ok


def test_criterion_5_step_inequality(criterion):
    label = "5 one-step supermartingale inequality, 1e5 draws per loss; square at 2.2 violates"
    criterion(label)
    rng = np.random.default_rng(5)
    worst = {}
    for name, loss, eta_max in BUILTINS:
        ref = {"log": oracles.log_loss, "square": oracles.square_loss, "genlog:0.5": oracles.genlog_loss(0.5)}[name]
        etas = eta_max * (1.0 - rng.random(100_000))
        gammas = rng.random(100_000)
        pis = rng.random(100_000)
        # include exact endpoints now and then
        gammas[:500] = rng.integers(0, 2, 500)
        pis[500:1000] = rng.integers(0, 2, 500)
        kind, eta0 = (name.split(":") + ["1"])[:2]
        values = oracles.lemma_step_np(kind, etas, gammas, pis, float(eta0))
        scalar = [oracles.lemma_step(ref, e, g, p) for e, g, p in zip(etas[:2000], gammas[:2000], pis[:2000])]
        np.testing.assert_allclose(values[:2000], scalar, rtol=1e-13, atol=1e-15)
        package = [verify_step_supermartingale(Advice(float(g), float(e), loss), float(p))
                   for e, g, p in zip(etas, gammas, pis)]
        worst[name] = float(values.max())
        assert worst[name] <= 1 + 1e-12, name
        assert all(package), name
    grid = np.linspace(0, 1, 201)
    gg, pp = np.meshgrid(grid, grid)
    hits = oracles.lemma_step_np("square", 2.2, gg, pp) > 1 + 1e-12
    found = list(zip(gg[hits], pp[hits]))
    flagged = [(g, p) for g, p in found if not verify_step_supermartingale(Advice(float(g), 2.2, SQUARE), float(p))]
    criterion(label, "max value " + ", ".join(f"{k} {v:.15f}" for k, v in worst.items())
              + f"; square@2.2 violations found: {len(found)}")
    assert found and len(flagged) == len(found)


def test_criterion_6_bayes_reduction(criterion):
    label = "6 all-log DF equals Bayes mixture; specialist identical"
    criterion(label)
    rng = random.Random(6)
    T, n = 1000, 5
    advice = [[rng.random() for _ in range(n)] for _ in range(T)]
    outcomes = [int(rng.random() < 0.4) for _ in range(T)]
    experts = [Scripted([row[i] for row in advice]) for i in range(n)]
    df = run_evaluator_game(experts, ScriptedReality(outcomes), T).transcript.predictions()
    cfg = SpecialistConfig.uniform(LOG, n)
    sp_experts = [Scripted([row[i] for row in advice]) for i in range(n)]
    sp = play_specialist(cfg, sp_experts, ScriptedReality(outcomes), T).transcript.predictions()
    bayes = [oracles.bayes_mixture([1 / n] * n, list(zip(advice[:t], outcomes[:t])), advice[t]) for t in range(T)]
    d_bayes = float(np.max(np.abs(np.array(df) - bayes)))
    d_spec = float(np.max(np.abs(np.array(df) - sp)))
    criterion(label, f"max |DF - Bayes| {d_bayes:.2e}, max |DF - specialist| {d_spec:.2e}")
    assert d_bayes <= 1e-9 and d_spec <= 1e-9


def test_criterion_7_substitution(criterion):
    label = "7 substitution inequality, 1e4 draws per loss at eta_max"
    criterion(label)
    rng = np.random.default_rng(7)
    worst = {}
    for name, loss, eta in BUILTINS:
        ref = {"log": oracles.log_loss, "square": oracles.square_loss, "genlog:0.5": oracles.genlog_loss(0.5)}[name]
        low = math.inf
        for _ in range(10_000):
            k = int(rng.integers(1, 7))
            u = rng.dirichlet(np.ones(k)).tolist()
            u[-1] = 1.0 - math.fsum(u[:-1])
            preds = rng.random(k)
            preds[rng.random(k) < 0.05] = rng.integers(0, 2)
            preds = preds.tolist()
            gamma = substitution(loss, eta, u, preds)
            for w in (0, 1):
                mix = math.fsum(ui * math.exp(-eta * ref(g, w)) for ui, g in zip(u, preds))
                low = min(low, math.exp(-eta * ref(gamma, w)) - mix)
        worst[name] = low
    criterion(label, "min slack " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert all(v >= -1e-9 for v in worst.values())


def test_criterion_8_certificates(criterion):
    label = "8 mixability and properness certificates"
    criterion(label)
    results = {
        "log@1": check_eta_mixable(LOG, 1.0),
        "square@2": check_eta_mixable(SQUARE, 2.0),
        "genlog(0.5)@0.5": check_eta_mixable(GENLOG, 0.5),
        "not square@2.2": not check_eta_mixable(SQUARE, 2.2),
        "proper log/square/genlog/zero": all(check_proper(l) for l in (LOG, SQUARE, GENLOG, ZERO)),
        "not proper mirrored square": not check_proper(mirrored_square()),
    }
    criterion(label, ", ".join(f"{k} {'ok' if v else 'WRONG'}" for k, v in results.items()))
    assert all(results.values())


CLI_MATRIX = [
    {"protocol": "evaluators", "experts": ["iid@log:eta=1", "constant:0.4@square:eta=2", "drift:0.2:0.002@genlog:0.5",
                                           "sleeper:even(iid)@square:eta=1"], "reality": "greedy:log"},
    {"protocol": "evaluators", "experts": ["iid@log", "iid@square"], "reality": "bernoulli:0.3", "priors": [0.8, 0.2]},
    {"protocol": "constant", "experts": ["iid", "iid"], "losses": ["log", "square"], "reality": "bernoulli:0.6"},
    {"protocol": "standard", "loss": "square", "experts": ["iid", "constant:0.7", "drift:0.1:0.003"],
     "reality": "greedy:square"},
    {"protocol": "multiobjective", "losses": ["log", "square"], "experts": ["iid", "constant:0.2", "drift:0.9:-0.002"],
     "reality": "bernoulli:0.5"},
    {"protocol": "bipartite", "losses": ["log", "square"], "relation": [[0, 0], [0, 1], [1, 1], [2, 0]],
     "experts": ["iid", "constant:0.6", "iid:0.3:0.7"], "reality": "greedy:log"},
    {"protocol": "specialist", "loss": "log", "priors": [0.5, 0.3, 0.2],
     "experts": ["sleeper:random:0.5(iid)", "sleeper:odd(constant:0.3)", "iid"], "reality": "bernoulli:0.4"},
]


def test_criterion_9_cli_roundtrip(criterion, tmp_path, capsys):
    label = "9 verify passes every run transcript, fails a single-pi mutation"
    criterion(label)
    transcripts = []
    for i, cfg in enumerate(CLI_MATRIX):
        cfg = dict(cfg, T=400, seeds=[0, 1, 2], output_dir=str(tmp_path / f"run{i}"))
        path = tmp_path / f"cfg{i}.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", str(path)]) == 0, cfg["protocol"]
        transcripts += sorted((tmp_path / f"run{i}").glob("transcript_seed*.jsonl"))
    codes = [main(["verify", str(p)]) for p in transcripts]

    from expert_evaluators.protocols import Step, read_transcript, write_transcript

    target = tmp_path / "run1" / "transcript_seed0.jsonl"
    tr = read_transcript(target)
    t = mutation_step(tr)
    s = tr.steps[t]
    tr.steps[t] = Step(s.advice, 1.0 - s.prediction, s.outcome)
    mutated = tmp_path / "mutated.jsonl"
    write_transcript(tr, mutated)
    capsys.readouterr()
    code = main(["verify", str(mutated)])
    out = capsys.readouterr().out
    criterion(label, f"{codes.count(0)}/{len(codes)} transcripts verify; mutation at step {t + 1} exits {code}")
    assert all(c == 0 for c in codes)
    assert code == 1 and f"FAIL step {t + 1} [capital-monotone]" in out
