"""Game runners, regret accounting and transcript I/O.

Every protocol is played as an expert-evaluators game: each (possibly
virtual) expert announces a prediction, a learning rate and a loss, or
abstains. The runners differ only in how experts are built and which
regret bound is attached to each of them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .engine import Advice, AdviceError, DefensiveForecaster
from .loss import INF, Loss, LossError, check_proper, logsumexp, loss_difference, parse_loss, safe_exp
from .sim import ExpertStrategy, RealityStrategy, VirtualExpert
from .specialist import SpecialistConfig, SpecialistLearner

PROTOCOLS = ("standard", "evaluators", "constant", "multiobjective", "bipartite", "specialist")


def bound_tol() -> float:
    return float(os.environ.get("EXPERT_EVAL_BOUND_TOL", "1e-6"))


def q_tol() -> float:
    return float(os.environ.get("EXPERT_EVAL_Q_TOL", "1e-9"))


class GameError(ValueError):
    pass


class TranscriptError(ValueError):
    pass


# ---------------------------------------------------------------------------
# transcript


@dataclass(frozen=True)
class Step:
    advice: tuple[Advice, ...]
    prediction: float
    outcome: int


@dataclass
class Transcript:
    steps: list[Step] = field(default_factory=list)
    protocol: str = "evaluators"
    priors: tuple[float, ...] | None = None
    labels: list[str] | None = None

    def __len__(self):
        return len(self.steps)

    @property
    def n_experts(self) -> int:
        if self.steps:
            return len(self.steps[0].advice)
        return len(self.labels or self.priors or ())

    def predictions(self) -> list[float]:
        return [s.prediction for s in self.steps]

    def append(self, step: Step) -> None:
        if self.steps and len(step.advice) != len(self.steps[0].advice):
            raise GameError("advice vector length changed mid-game")
        self.steps.append(step)


def _advice_record(a: Advice) -> list:
    return ["abstain" if a.prediction is None else a.prediction, a.eta, a.loss.spec]


def write_transcript(transcript: Transcript, out: str | os.PathLike | IO[str]) -> None:
    """One JSON object per line: a header, then ``{t, advice, pi, omega}`` per step."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w") as fh:
            write_transcript(transcript, fh)
        return
    header = {
        "type": "header",
        "protocol": transcript.protocol,
        "n": transcript.n_experts,
        "priors": list(transcript.priors) if transcript.priors is not None else None,
        "labels": transcript.labels,
    }
    out.write(json.dumps(header) + "\n")
    for t, s in enumerate(transcript.steps, 1):
        rec = {"t": t, "advice": [_advice_record(a) for a in s.advice], "pi": s.prediction, "omega": s.outcome}
        out.write(json.dumps(rec) + "\n")


def _parse_advice(rec, line_no: int) -> Advice:
    try:
        gamma, eta, spec = rec
        pred = None if gamma == "abstain" else float(gamma)
        return Advice(pred, float(eta), parse_loss(spec))
    except (TypeError, ValueError, LossError) as exc:
        raise TranscriptError(f"line {line_no}: bad advice entry {rec!r}: {exc}") from None


def read_transcript(src: str | os.PathLike | IO[str]) -> Transcript:
    if isinstance(src, (str, os.PathLike)):
        with open(src) as fh:
            return read_transcript(fh)
    tr = Transcript()
    for line_no, line in enumerate(src, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TranscriptError(f"line {line_no}: {exc}") from None
        if not isinstance(rec, dict):
            raise TranscriptError(f"line {line_no}: expected an object")
        if rec.get("type") == "header":
            if tr.steps:
                raise TranscriptError(f"line {line_no}: header after steps")
            tr.protocol = rec.get("protocol", "evaluators")
            priors = rec.get("priors")
            tr.priors = tuple(float(p) for p in priors) if priors is not None else None
            tr.labels = rec.get("labels")
            continue
        try:
            advice = tuple(_parse_advice(a, line_no) for a in rec["advice"])
            pi, omega = float(rec["pi"]), rec["omega"]
        except (KeyError, TypeError, ValueError) as exc:
            raise TranscriptError(f"line {line_no}: malformed step: {exc}") from None
        if omega not in (0, 1) or not 0.0 <= pi <= 1.0:
            raise TranscriptError(f"line {line_no}: pi or omega out of range")
        if rec.get("t", len(tr.steps) + 1) != len(tr.steps) + 1:
            raise TranscriptError(f"line {line_no}: steps out of order")
        try:
            tr.append(Step(advice, pi, int(omega)))
        except GameError as exc:
            raise TranscriptError(f"line {line_no}: {exc}") from None
    return tr


# ---------------------------------------------------------------------------
# ledger


@dataclass(frozen=True)
class Bound:
    """``quantity`` is ``"regret"`` (L^(n) - L^n) or ``"weighted"`` (sum of
    eta-weighted step regrets)."""

    expert: int
    quantity: str
    value: float


class RegretLedger:
    """Cumulative losses per expert, counted only on steps the expert is awake."""

    def __init__(self, n: int, labels: Sequence[str] | None = None, standard_loss: Loss | None = None,
                 keep_history: bool = True):
        self.n = n
        self.labels = list(labels) if labels is not None else [f"expert {i}" for i in range(n)]
        self.keys: list[tuple[int, str]] = []
        self.learner_loss = [0.0] * n
        self.expert_loss = [0.0] * n
        self.regret = [0.0] * n
        self.weighted_regret = [0.0] * n
        self.awake_steps = [0] * n
        self.standard_loss = standard_loss
        self.standard_learner_loss = 0.0 if standard_loss is not None else None
        self.steps = 0
        self.keep_history = keep_history
        self.awake_history: list[tuple[bool, ...]] = []
        self.regret_history: list[tuple[float, ...]] = []
        self.weighted_history: list[tuple[float, ...]] = []

    def record(self, advice_vec: Sequence[Advice], pi: float, omega: int) -> None:
        if len(advice_vec) != self.n:
            raise GameError(f"expected {self.n} advice entries, got {len(advice_vec)}")
        if not self.keys:
            self.keys = [(i, a.loss.spec) for i, a in enumerate(advice_vec)]
        awake = []
        for i, a in enumerate(advice_vec):
            on = a.prediction is not None
            awake.append(on)
            if not on:
                continue
            mine = a.loss.pair(pi)[omega]
            theirs = a.loss.pair(a.prediction)[omega]
            d = loss_difference(mine, theirs)
            self.learner_loss[i] += mine
            self.expert_loss[i] += theirs
            self.regret[i] += d
            self.weighted_regret[i] += a.eta * d if math.isfinite(d) else d
            self.awake_steps[i] += 1
        if self.standard_loss is not None:
            self.standard_learner_loss += self.standard_loss(pi, omega)
        self.steps += 1
        if self.keep_history:
            self.awake_history.append(tuple(awake))
            self.regret_history.append(tuple(self.regret))
            self.weighted_history.append(tuple(self.weighted_regret))

    @property
    def learner_loss_vs(self) -> dict[tuple[int, str], float]:
        return dict(zip(self.keys, self.learner_loss))

    def quantity(self, expert: int, kind: str) -> float:
        return self.weighted_regret[expert] if kind == "weighted" else self.regret[expert]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "steps": self.steps,
            "labels": self.labels,
            "learner_loss": self.learner_loss,
            "expert_loss": self.expert_loss,
            "regret": self.regret,
            "weighted_regret": self.weighted_regret,
            "awake_steps": self.awake_steps,
            "standard_learner_loss": self.standard_learner_loss,
        }


@dataclass(frozen=True)
class ReportRow:
    expert: int
    label: str
    learner_loss: float
    expert_loss: float
    quantity: str
    realized: float
    bound: float
    slack: float
    passed: bool


def ledger_report(ledger: RegretLedger, bounds: Iterable[Bound], tol: float | None = None) -> list[ReportRow]:
    tol = bound_tol() if tol is None else tol
    rows = []
    for b in bounds:
        value = ledger.quantity(b.expert, b.quantity)
        slack = b.value - value if value != INF else -INF
        rows.append(ReportRow(b.expert, ledger.labels[b.expert], ledger.learner_loss[b.expert],
                              ledger.expert_loss[b.expert], b.quantity, value, b.value, slack, slack >= -tol))
    return rows


def report_to_dict(rows: Sequence[ReportRow]) -> dict:
    return {"passed": all(r.passed for r in rows), "rows": [r.__dict__ for r in rows]}


def format_report(rows: Sequence[ReportRow]) -> str:
    head = f"{'expert':<28} {'L(learner)':>12} {'L(expert)':>12} {'regret':>12} {'bound':>10} {'slack':>10}  ok"
    lines = [head, "-" * len(head)]
    for r in rows:
        tag = "" if r.quantity == "regret" else " (w)"
        lines.append(
            f"{(r.label + tag)[:28]:<28} {r.learner_loss:>12.4f} {r.expert_loss:>12.4f} {r.realized:>12.6f} "
            f"{r.bound:>10.6f} {r.slack:>10.6f}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# learners


class DFLearner:
    """Defensive forecasting over the advice vectors."""

    def __init__(self, n: int, priors: Sequence[float] | None = None):
        self.df = DefensiveForecaster(n, priors)
        self.last_decision = None

    def predict(self, advice_vec: Sequence[Advice]) -> float:
        self.last_decision = self.df.predict(advice_vec)
        return self.last_decision.prediction

    def update(self, advice_vec: Sequence[Advice], pi: float, omega: int) -> None:
        self.df.update(advice_vec, pi, omega)

    def log_capital(self) -> float:
        return self.df.state.log_mixture()


class ConstantLearner:
    """A non-DF baseline that always predicts the same value."""

    def __init__(self, value: float = 0.5):
        self.value = value

    def predict(self, advice_vec):
        return self.value

    def update(self, advice_vec, pi, omega):
        pass

    def log_capital(self):
        return None


class _SpecialistAdapter:
    def __init__(self, cfg: SpecialistConfig):
        self.inner = SpecialistLearner(cfg)

    def predict(self, advice_vec):
        return self.inner.predict([a.prediction for a in advice_vec])

    def update(self, advice_vec, pi, omega):
        self.inner.update([a.prediction for a in advice_vec], pi, omega)

    def log_capital(self):
        return logsumexp(self.inner.state.log_w)


# ---------------------------------------------------------------------------
# games


@dataclass
class GameResult:
    transcript: Transcript
    ledger: RegretLedger
    bounds: list[Bound]
    log_capital: list[float] | None = None

    def report(self, tol: float | None = None) -> list[ReportRow]:
        return ledger_report(self.ledger, self.bounds, tol)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.report())


def play(experts: Sequence[ExpertStrategy], reality: RealityStrategy | None, T: int, learner=None, *,
         protocol: str = "evaluators", priors: Sequence[float] | None = None, bounds: Sequence[Bound] = (),
         labels: Sequence[str] | None = None, standard_loss: Loss | None = None,
         advice_override=None, keep_history: bool = True) -> GameResult:
    """Generic loop: experts announce, learner predicts, reality answers, books update."""
    n = len(experts)
    if n == 0:
        raise GameError("need at least one expert")
    learner = DFLearner(n, priors) if learner is None else learner
    tr = Transcript(protocol=protocol, priors=tuple(priors) if priors is not None else None,
                    labels=list(labels) if labels is not None else None)
    ledger = RegretLedger(n, labels, standard_loss, keep_history)
    for e in experts:
        e.clear_cache()
    capital = [learner.log_capital()] if learner.log_capital() is not None else None
    for t in range(1, T + 1):
        advice = []
        for i, e in enumerate(experts):
            a = e.next_advice(t, tr.steps) if advice_override is None else advice_override(e, t, tr.steps)
            try:
                a.validate()
            except AdviceError as exc:
                raise GameError(f"expert {i} at step {t}: {exc}") from None
            advice.append(a)
        pi = learner.predict(advice)
        omega = reality.next_outcome(t, tr.steps, pi)
        learner.update(advice, pi, omega)
        ledger.record(advice, pi, omega)
        tr.steps.append(Step(tuple(advice), pi, omega))
        if capital is not None:
            capital.append(learner.log_capital())
    return GameResult(tr, ledger, list(bounds), capital)


def run_evaluator_game(experts: Sequence[ExpertStrategy], reality: RealityStrategy, T: int,
                       learner=None, **kw) -> GameResult:
    """Each expert's eta-weighted regret is bounded by -ln p^n (ln N for uniform priors)."""
    n = len(experts)
    priors = kw.get("priors")
    if priors is None:
        bounds = [Bound(i, "weighted", math.log(n)) for i in range(n)]
    else:
        bounds = [Bound(i, "weighted", -math.log(p)) for i, p in enumerate(priors)]
    return play(experts, reality, T, learner, protocol="evaluators", bounds=bounds, **kw)


def _require_proper_mixable(losses: Iterable[Loss]) -> None:
    for loss in set(losses):
        if not loss.is_zero and not check_proper(loss):
            raise GameError(f"loss {loss.spec} is not proper")


def _regret_bounds(experts: Sequence[ExpertStrategy], log_count: float) -> list[Bound]:
    return [Bound(i, "regret", log_count / e.eta) for i, e in enumerate(experts)]


def run_constant_evaluator_game(experts: Sequence[ExpertStrategy], reality: RealityStrategy, T: int,
                                losses: Sequence[Loss] | None = None, etas: Sequence[float] | None = None,
                                learner=None, **kw) -> GameResult:
    """Expert n is judged by a fixed loss; regret vs n is at most ln N / eta^n."""
    if losses is not None:
        if len(losses) != len(experts):
            raise GameError("one loss per expert required")
        for i, (e, loss) in enumerate(zip(experts, losses)):
            e.loss = loss
            e.eta = loss.eta_max if etas is None else etas[i]
    _require_proper_mixable(e.loss for e in experts)
    bounds = _regret_bounds(experts, math.log(len(experts)))
    return play(experts, reality, T, learner, protocol="constant", bounds=bounds, **kw)


def run_standard_game(loss: Loss, experts: Sequence[ExpertStrategy], reality: RealityStrategy, T: int,
                      eta: float | None = None, learner=None, **kw) -> GameResult:
    """All experts share one loss; L_t <= L^n_t + ln N / eta."""
    eta = loss.eta_max if eta is None else eta
    for e in experts:
        e.loss, e.eta = loss, eta
    _require_proper_mixable([loss])
    bounds = _regret_bounds(experts, math.log(len(experts)))
    return play(experts, reality, T, learner, protocol="standard", bounds=bounds, standard_loss=loss, **kw)


def multiobjective_wrap(experts: Sequence[ExpertStrategy], losses: Sequence[Loss],
                        etas: Sequence[float] | None = None) -> list[VirtualExpert]:
    """M*N virtual experts; (n, m) predicts like expert n and is judged by loss m."""
    etas = [l.eta_max for l in losses] if etas is None else list(etas)
    return [VirtualExpert(e, n, m, loss, etas[m]) for n, e in enumerate(experts)
            for m, loss in enumerate(losses)]


@dataclass(frozen=True)
class BipartiteRelation:
    """Edges (expert n, loss m): expert n judges with loss m."""

    edges: frozenset[tuple[int, int]]

    def __init__(self, edges: Iterable[tuple[int, int]]):
        object.__setattr__(self, "edges", frozenset((int(n), int(m)) for n, m in edges))

    @property
    def size(self) -> int:
        return len(self.edges)

    def validate(self, n_experts: int, n_losses: int) -> None:
        for n, m in self.edges:
            if not (0 <= n < n_experts and 0 <= m < n_losses):
                raise GameError(f"edge {(n, m)} outside {n_experts} experts x {n_losses} losses")
        lonely = sorted(set(range(n_experts)) - {n for n, _ in self.edges})
        if lonely:
            raise GameError(f"experts {lonely} have no loss in the relation")

    @classmethod
    def complete(cls, n_experts: int, n_losses: int) -> BipartiteRelation:
        return cls((n, m) for n in range(n_experts) for m in range(n_losses))


def bipartite_wrap(relation: BipartiteRelation, experts: Sequence[ExpertStrategy], losses: Sequence[Loss],
                   etas: Sequence[float] | None = None) -> list[VirtualExpert]:
    relation.validate(len(experts), len(losses))
    etas = [l.eta_max for l in losses] if etas is None else list(etas)
    return [VirtualExpert(experts[n], n, m, losses[m], etas[m]) for n, m in sorted(relation.edges)]


def _virtual_labels(virtual: Sequence[VirtualExpert]) -> list[str]:
    return [f"expert {v.source_index} / {v.loss.spec}" for v in virtual]


def run_multiobjective_game(experts: Sequence[ExpertStrategy], losses: Sequence[Loss], reality: RealityStrategy,
                            T: int, etas: Sequence[float] | None = None, learner=None, **kw) -> GameResult:
    """L^(m) <= L^{n,m} + ln(MN) / eta^m for every expert n and loss m."""
    _require_proper_mixable(losses)
    virtual = multiobjective_wrap(experts, losses, etas)
    bounds = _regret_bounds(virtual, math.log(len(virtual)))
    return play(virtual, reality, T, learner, protocol="multiobjective", bounds=bounds,
                labels=_virtual_labels(virtual), **kw)


def run_bipartite_game(relation: BipartiteRelation, experts: Sequence[ExpertStrategy], losses: Sequence[Loss],
                       reality: RealityStrategy, T: int, etas: Sequence[float] | None = None, learner=None,
                       **kw) -> GameResult:
    """L^(m) <= L^{n,m} + ln K / eta^m for every edge (n, m); K = number of edges."""
    _require_proper_mixable(losses)
    virtual = bipartite_wrap(relation, experts, losses, etas)
    bounds = _regret_bounds(virtual, math.log(relation.size))
    return play(virtual, reality, T, learner, protocol="bipartite", bounds=bounds,
                labels=_virtual_labels(virtual), **kw)


def play_specialist(cfg: SpecialistConfig, experts: Sequence[ExpertStrategy], reality: RealityStrategy | None,
                    T: int, learner=None, **kw) -> GameResult:
    """Specialist game under one loss; regret over awake steps <= -ln p^n / eta."""
    cfg.require_proper()
    if experts and len(experts) != cfg.n:
        raise GameError(f"config has {cfg.n} priors but {len(experts)} experts")
    bounds = [Bound(i, "regret", -math.log(p) / cfg.eta) for i, p in enumerate(cfg.priors)]
    if not experts:
        return GameResult(Transcript(protocol="specialist", priors=cfg.priors), RegretLedger(cfg.n), bounds, [0.0])
    learner = _SpecialistAdapter(cfg) if learner is None else learner

    def advice(e, t, history):
        return Advice(e.prediction(t, history), cfg.eta, cfg.loss)

    return play(experts, reality, T, learner, protocol="specialist", priors=cfg.priors, bounds=bounds,
                advice_override=advice, **kw)


# ---------------------------------------------------------------------------
# independent verification of a transcript


@dataclass
class Failure:
    step: int
    check: str
    message: str


@dataclass
class VerifyResult:
    steps: int
    failures: list[Failure]
    checks: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def first_failure(self) -> Failure | None:
        return min(self.failures, key=lambda f: f.step) if self.failures else None


def verify_transcript(tr: Transcript, tol: float | None = None, qtol: float | None = None) -> VerifyResult:
    """Recompute every loss from the raw records and check, at every step:

    * the weighted regret of each expert against -ln p^n (ln N for uniform priors);
    * for experts with a constant (loss, eta), L^(n) - L^n against -ln p^n / eta;
    * that the capital Q_t = sum_n p^n Q^n_t never increases.

    Only the first failure of each check is reported.
    """
    tol = bound_tol() if tol is None else tol
    qtol = q_tol() if qtol is None else qtol
    n = tr.n_experts
    failures: list[Failure] = []
    checks = ["advice", "theorem-weighted", "per-loss-regret", "capital-monotone"]
    if n == 0:
        return VerifyResult(0, failures, checks)
    priors = tr.priors if tr.priors is not None else (1.0 / n,) * n
    if len(priors) != n:
        return VerifyResult(len(tr), [Failure(0, "header", f"{len(priors)} priors for {n} experts")], checks)
    log_p = [math.log(p) for p in priors]
    log_q = [0.0] * n
    weighted = [0.0] * n
    raw = [0.0] * n
    signature: list[tuple | None] = [None] * n
    constant = [True] * n
    seen: set[str] = set()

    def fail(step, check, msg):
        if check not in seen:
            seen.add(check)
            failures.append(Failure(step, check, msg))

    prev_capital = logsumexp([a + b for a, b in zip(log_q, log_p)])
    for t, s in enumerate(tr.steps, 1):
        for i, a in enumerate(s.advice):
            try:
                a.validate()
            except AdviceError as exc:
                fail(t, "advice", f"expert {i}: {exc}")
            if a.prediction is None:
                continue
            sig = (a.loss.spec, a.eta)
            if signature[i] is None:
                signature[i] = sig
            elif signature[i] != sig:
                constant[i] = False
            mine = a.loss(s.prediction, s.outcome)
            theirs = a.loss(a.prediction, s.outcome)
            d = loss_difference(mine, theirs)
            e = a.eta * d if math.isfinite(d) else d
            weighted[i] += e
            raw[i] += d
            if log_q[i] != -INF:
                log_q[i] = log_q[i] + e
        for i in range(n):
            if weighted[i] > -log_p[i] + tol:
                fail(t, "theorem-weighted", f"expert {i}: weighted regret {weighted[i]:.9g} > {-log_p[i]:.9g}")
            if constant[i] and signature[i] is not None:
                b = -log_p[i] / signature[i][1]
                if raw[i] > b + tol:
                    fail(t, "per-loss-regret", f"expert {i}: regret {raw[i]:.9g} > {b:.9g}")
        capital = logsumexp([a + b for a, b in zip(log_q, log_p)])
        if capital > prev_capital and safe_exp(capital) - safe_exp(prev_capital) > qtol:
            fail(t, "capital-monotone", f"Q rose from {safe_exp(prev_capital):.12g} to {safe_exp(capital):.12g}")
        prev_capital = capital
    return VerifyResult(len(tr), failures, checks)
