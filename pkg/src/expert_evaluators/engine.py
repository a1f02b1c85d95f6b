"""Defensive forecasting for expert evaluators.

Each expert n carries the capital process

    Q^n_T = prod_t exp(eta^n_t (loss^n_t(pi_t, w_t) - loss^n_t(gamma^n_t, w_t)))

kept here as ``log_q[n]``. The learner picks ``pi_t`` so that the mixture
``Q = sum_n p_n Q^n`` cannot grow whatever the outcome.
"""

from __future__ import annotations

import math
from math import exp
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .loss import INF, ZERO, Loss, logsumexp, loss_difference, safe_exp

BISECT_TOL = 1e-12
STEP_TOL = 1e-9


class InvariantViolation(RuntimeError):
    """The engine reached a state its guarantees rule out."""


class AdviceError(ValueError):
    pass


@dataclass(frozen=True)
class Advice:
    """One expert's move: a prediction (``None`` to abstain), a learning rate
    and the loss the expert is judged by."""

    prediction: float | None
    eta: float
    loss: Loss

    @property
    def abstains(self) -> bool:
        return self.prediction is None

    def effective(self) -> tuple[float, float, Loss]:
        """(gamma, eta, loss) with abstention encoded as the zero loss."""
        if self.prediction is None or self.loss.is_zero:
            return 0.5, self.eta, ZERO
        return self.prediction, self.eta, self.loss

    def validate(self) -> None:
        if self.prediction is not None and not 0.0 <= self.prediction <= 1.0:
            raise AdviceError(f"prediction {self.prediction} outside [0, 1]")
        if not self.eta > 0:
            raise AdviceError(f"learning rate must be positive, got {self.eta}")
        if self.prediction is not None and not self.loss.is_zero and self.eta > self.loss.eta_max * (1 + 1e-12):
            raise AdviceError(f"eta={self.eta} exceeds the mixability constant {self.loss.eta_max} of {self.loss.spec}")


class Branch(Enum):
    ENDPOINT_ZERO = "endpoint-zero"
    ENDPOINT_ONE = "endpoint-one"
    ROOT = "root"


@dataclass(frozen=True)
class StepDecision:
    prediction: float
    branch: Branch
    root_residual: float = 0.0


@dataclass(frozen=True)
class EvaluatorState:
    """Per-expert ``ln Q^n`` plus the log prior weights of the mixture."""

    log_q: tuple[float, ...]
    log_prior: tuple[float, ...]
    step: int = 0

    @classmethod
    def fresh(cls, n: int, priors: Sequence[float] | None = None) -> EvaluatorState:
        if n < 1:
            raise ValueError("need at least one expert")
        if priors is None:
            log_prior = (-math.log(n),) * n
        else:
            if len(priors) != n or any(p <= 0 for p in priors) or abs(math.fsum(priors) - 1) > 1e-12:
                raise ValueError("priors must be N positive numbers summing to 1")
            log_prior = tuple(math.log(p) for p in priors)
        return cls((0.0,) * n, log_prior, 0)

    @property
    def n(self) -> int:
        return len(self.log_q)

    def log_mixture(self) -> float:
        """ln Q_t."""
        return logsumexp([a + b for a, b in zip(self.log_q, self.log_prior)])

    def mixture(self) -> float:
        return safe_exp(self.log_mixture())


def step_exponent(advice: Advice, pi: float, omega: int) -> float:
    """eta * (loss(pi, w) - loss(gamma, w)) under the infinite-difference convention."""
    gamma, eta, loss = advice.effective()
    if loss.is_zero:
        return 0.0
    d = loss_difference(loss(pi, omega), loss(gamma, omega))
    return eta * d if math.isfinite(d) else d


def step_factor(advice: Advice, pi: float, omega: int) -> float:
    return safe_exp(step_exponent(advice, pi, omega))


def _term(log_w: float, expo: float) -> float:
    # w * (exp(expo) - 1) with w = exp(log_w); a dead expert contributes 0
    if log_w == -INF:
        return 0.0
    if expo == INF:
        return INF
    return safe_exp(log_w) * math.expm1(expo) if expo < 700 else safe_exp(log_w + expo) - safe_exp(log_w)


def _lse(values: list[float]) -> float:
    m = max(values)
    if m == -INF or m == INF:
        return m
    return m + math.log(sum([exp(v - m) for v in values]))


def f_t(state: EvaluatorState, advice_vec: Sequence[Advice], pi: float, omega: int) -> float:
    """Increment of the mixture Q if the learner predicts ``pi`` and ``omega`` occurs."""
    if len(advice_vec) != state.n:
        raise ValueError(f"expected {state.n} advice entries, got {len(advice_vec)}")
    total = 0.0
    for lq, lp, adv in zip(state.log_q, state.log_prior, advice_vec):
        total += _term(lq + lp, step_exponent(adv, pi, omega))
    return total


def choose_prediction(state: EvaluatorState, advice_vec: Sequence[Advice], tol: float = BISECT_TOL,
                      step_tol: float = STEP_TOL) -> StepDecision:
    """Pick pi so that f_t(pi, 0) <= 0 and f_t(pi, 1) <= 0."""
    if len(advice_vec) != state.n:
        raise ValueError(f"expected {state.n} advice entries, got {len(advice_vec)}")
    log_w = [a + b for a, b in zip(state.log_q, state.log_prior)]
    shift = max(log_w)
    if shift == -INF:
        raise InvariantViolation("every expert has zero capital")

    # everything below is f_t scaled by exp(-shift): same signs, no underflow
    rows = []
    ends: dict[Loss, tuple[tuple[float, float], tuple[float, float]]] = {}
    for lw, adv in zip(log_w, advice_vec):
        gamma, eta, loss = adv.effective()
        if loss.is_zero or lw == -INF:
            continue
        if loss not in ends:
            ends[loss] = (loss.pair(0.0), loss.pair(1.0))
        rows.append((lw - shift, eta, loss, loss.pair(gamma)))

    weights = [exp(r[0]) for r in rows]

    def corner(end: int, omega: int) -> float:
        # sum_n w_n (exp(eta_n (loss_n(end, omega) - loss_n(gamma_n, omega))) - 1)
        total = 0.0
        for w, (lw, eta, loss, lg) in zip(weights, rows):
            a, b = ends[loss][end][omega], lg[omega]
            if a == INF:
                if b == INF:
                    continue
                return INF
            if b == INF:
                total -= w
                continue
            x = eta * (a - b)
            total += w * math.expm1(x) if x < 700 else safe_exp(lw + x) - w
        return total

    f01 = corner(0, 1)
    if f01 <= 0.0:
        return StepDecision(0.0, Branch.ENDPOINT_ZERO)
    f10 = corner(1, 0)
    if f10 <= 0.0:
        return StepDecision(1.0, Branch.ENDPOINT_ONE)
    f00, f11 = corner(0, 0), corner(1, 1)
    # g(pi) = f(pi, 1) - f(pi, 0) needs g(0) > 0 > g(1)
    if not (loss_difference(f01, f00) > 0 and loss_difference(f11, f10) < 0):
        raise InvariantViolation(
            f"no sign change for bisection at step {state.step + 1}: "
            f"f(0,1)={f01}, f(0,0)={f00}, f(1,1)={f11}, f(1,0)={f10}"
        )

    # Inside (0, 1) every built-in loss is finite, so experts sharing
    # (loss, eta) collapse to one term exp(eta*loss(pi, w)) * A_w.
    groups: dict[tuple[Loss, float], tuple[list[float], list[float]]] = {}
    for lw, eta, loss, (l0, l1) in rows:
        a0, a1 = groups.setdefault((loss, eta), ([], []))
        a0.append(lw - eta * l0)
        a1.append(lw - eta * l1)
    terms = [(loss, eta, _lse(a0), _lse(a1)) for (loss, eta), (a0, a1) in groups.items()]

    # f(pi, w) * exp(-shift) = S_w(pi) - W with S_w the sum of group terms
    W = math.fsum(weights)

    def sums(pi: float) -> tuple[float, float]:
        s0 = s1 = 0.0
        for loss, eta, c0, c1 in terms:
            l0, l1 = loss.pair(pi)
            s0 += safe_exp(eta * l0 + c0)
            s1 += safe_exp(eta * l1 + c1)
        return s0, s1

    # closed forms: c*log loss gives A_w * pi_w^(-eta c), c*square exp(eta c (w - pi)^2 + c_w)
    log_terms, sq_terms, other = [], [], []
    for loss, eta, c0, c1 in terms:
        fam = loss.family
        if fam is not None and fam[0] == "log":
            log_terms.append((eta * fam[1], safe_exp(c0), safe_exp(c1)))
        elif fam is not None and fam[0] == "square":
            sq_terms.append((eta * fam[1], c0, c1))
        else:
            other.append((loss.pair, eta, c0, c1))

    def sums_fast(p: float) -> tuple[float, float]:
        q = 1.0 - p
        s0 = s1 = 0.0
        for k, a0, a1 in log_terms:
            if k == 1.0:
                s0 += a0 / q
                s1 += a1 / p
            else:
                s0 += a0 * q ** -k
                s1 += a1 * p ** -k
        for k, c0, c1 in sq_terms:
            s0 += exp(k * p * p + c0)
            s1 += exp(k * q * q + c1)
        for pair, eta, c0, c1 in other:
            l0, l1 = pair(p)
            s0 += exp(eta * l0 + c0)
            s1 += exp(eta * l1 + c1)
        return s0, s1

    # residual allowed on the scaled f; shift <= 0 whenever Q <= 1
    slack = step_tol * safe_exp(-shift) if shift > -700 else INF

    def bisect(fn) -> float:
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            s0, s1 = fn(mid)
            if s1 - s0 > 0.0:
                lo = mid
            else:
                hi = mid
        # near 0 or 1 a fixed width can still leave f above the step
        # tolerance (log loss at gamma ~ 1e-9); keep halving until it is met
        while True:
            mid = 0.5 * (lo + hi)
            s0, s1 = fn(mid)
            if max(s0, s1) - W <= slack or not lo < mid < hi:
                return mid
            if s1 - s0 > 0.0:
                lo = mid
            else:
                hi = mid

    try:
        pi = bisect(sums_fast)
    except (OverflowError, ZeroDivisionError):
        pi = bisect(sums)
    s0, s1 = sums(pi)
    return StepDecision(pi, Branch.ROOT, (s1 - s0) * safe_exp(shift))


def update_state(state: EvaluatorState, advice_vec: Sequence[Advice], pi: float, omega: int) -> EvaluatorState:
    new = []
    for n, (lq, adv) in enumerate(zip(state.log_q, advice_vec)):
        if lq == -INF:
            new.append(-INF)
            continue
        gamma, loss = adv.prediction, adv.loss
        if gamma is None or loss.is_zero:
            new.append(lq)
            continue
        mine, theirs = loss.pair(pi)[omega], loss.pair(gamma)[omega]
        if mine != INF and theirs != INF:
            new.append(lq + adv.eta * (mine - theirs))
            continue
        d = loss_difference(mine, theirs)
        if d == INF:
            raise InvariantViolation(
                f"learner suffered infinite loss where expert {n} did not (step {state.step + 1})"
            )
        new.append(lq + (adv.eta * d if math.isfinite(d) else d))
    return EvaluatorState(tuple(new), state.log_prior, state.step + 1)


def verify_step_supermartingale(advice: Advice, pi: float, tol: float = 1e-12) -> bool:
    """pi * factor(pi, 1) + (1 - pi) * factor(pi, 0) <= 1 for a single expert."""
    f1 = step_factor(advice, pi, 1)
    f0 = step_factor(advice, pi, 0)
    a = 0.0 if pi == 0.0 else pi * f1
    b = 0.0 if pi == 1.0 else (1.0 - pi) * f0
    return a + b <= 1.0 + tol


@dataclass
class DefensiveForecaster:
    """Stateful convenience wrapper around the pure step functions."""

    n: int
    priors: Sequence[float] | None = None
    state: EvaluatorState = field(init=False)

    def __post_init__(self):
        self.state = EvaluatorState.fresh(self.n, self.priors)

    def predict(self, advice_vec: Sequence[Advice]) -> StepDecision:
        return choose_prediction(self.state, advice_vec)

    def update(self, advice_vec: Sequence[Advice], pi: float, omega: int) -> None:
        self.state = update_state(self.state, advice_vec, pi, omega)
