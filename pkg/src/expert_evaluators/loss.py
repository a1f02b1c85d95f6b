"""Binary loss functions, their numeric mixability/properness certificates,
and the substitution function used by the Aggregating Algorithm.

A loss maps a prediction ``gamma`` in [0, 1] and an outcome ``omega`` in
{0, 1} to [0, inf]. Infinite values are plain ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import log
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

INF = math.inf

DEFAULT_GRID = 1001
GEOMETRY_TOL = 1e-9
PROPER_TOL = 1e-12
SUBST_TOL = 1e-12
SUBST_MAX_ITER = 2200
SUBST_LOSS_TOL = 1e-10


class LossError(ValueError):
    """Malformed loss spec or unsupported loss kind."""


class MixabilityError(ValueError):
    """A learning rate above the loss's mixability constant was requested."""


def loss_difference(a: float, b: float) -> float:
    """``a - b`` with inf - inf := 0, finite - inf := -inf, inf - finite := inf."""
    if a == INF:
        return 0.0 if b == INF else INF
    if b == INF:
        return -INF
    return a - b


def safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return INF


class Loss:
    """Base class; subclasses implement ``pair`` and ``pair_array``."""

    def pair(self, gamma: float) -> tuple[float, float]:
        """Return ``(loss(gamma, 0), loss(gamma, 1))``."""
        raise NotImplementedError

    def pair_array(self, gammas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = np.array([self.pair(float(g)) for g in np.asarray(gammas, dtype=float)])
        return out[:, 0], out[:, 1]

    def __call__(self, gamma: float, omega: int) -> float:
        return self.pair(gamma)[omega]

    @property
    def eta_max(self) -> float:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def family(self) -> tuple[str, float] | None:
        """("log", c) if this is c times log loss, ("square", c) likewise."""
        return None

    def __str__(self) -> str:
        return self.spec


@dataclass(frozen=True)
class LogLoss(Loss):
    def pair(self, gamma):
        return (-log(1.0 - gamma) if gamma < 1.0 else INF), (-log(gamma) if gamma > 0.0 else INF)

    def pair_array(self, gammas):
        g = np.asarray(gammas, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.log1p(-g), -np.log(g)

    @property
    def eta_max(self):
        return 1.0

    @property
    def spec(self):
        return "log"

    @property
    def family(self):
        return ("log", 1.0)


@dataclass(frozen=True)
class SquareLoss(Loss):
    def pair(self, gamma):
        return gamma * gamma, (1.0 - gamma) ** 2

    def pair_array(self, gammas):
        g = np.asarray(gammas, dtype=float)
        return g * g, (1.0 - g) ** 2

    @property
    def eta_max(self):
        return 2.0

    @property
    def spec(self):
        return "square"

    @property
    def family(self):
        return ("square", 1.0)


@dataclass(frozen=True)
class GeneralizedLogLoss(Loss):
    """Log loss divided by ``eta0``; exactly ``eta0``-mixable."""

    eta0: float

    def __post_init__(self):
        if not self.eta0 > 0:
            raise LossError(f"genlog needs a positive eta, got {self.eta0}")

    def pair(self, gamma):
        e = self.eta0
        return (-log(1.0 - gamma) / e if gamma < 1.0 else INF), (-log(gamma) / e if gamma > 0.0 else INF)

    def pair_array(self, gammas):
        a, b = LogLoss().pair_array(gammas)
        return a / self.eta0, b / self.eta0

    @property
    def eta_max(self):
        return self.eta0

    @property
    def spec(self):
        return f"genlog:{self.eta0:g}"

    @property
    def family(self):
        return ("log", 1.0 / self.eta0)


@dataclass(frozen=True)
class ZeroLoss(Loss):
    """Constant zero loss. Encodes an abstaining (sleeping) expert."""

    def pair(self, gamma):
        return 0.0, 0.0

    def pair_array(self, gammas):
        z = np.zeros_like(np.asarray(gammas, dtype=float))
        return z, z.copy()

    @property
    def eta_max(self):
        return 1.0

    @property
    def spec(self):
        return "zero"

    @property
    def is_zero(self):
        return True


@dataclass(frozen=True)
class ScaledLoss(Loss):
    base: Loss
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise LossError(f"scale factor must be positive, got {self.c}")

    def pair(self, gamma):
        a, b = self.base.pair(gamma)
        return self.c * a, self.c * b

    def pair_array(self, gammas):
        a, b = self.base.pair_array(gammas)
        return self.c * a, self.c * b

    @property
    def eta_max(self):
        return self.base.eta_max / self.c

    @property
    def spec(self):
        return f"scaled:{self.c:g}:{self.base.spec}"

    @property
    def is_zero(self):
        return self.base.is_zero

    @property
    def family(self):
        fam = self.base.family
        return None if fam is None else (fam[0], fam[1] * self.c)


@dataclass(frozen=True)
class CustomLoss(Loss):
    """A black-box loss; not serializable. ``eta_max`` is the claimed constant."""

    label: str
    fn: Callable[[float, int], float] = field(compare=False)
    claimed_eta: float = 1.0

    def pair(self, gamma):
        return float(self.fn(gamma, 0)), float(self.fn(gamma, 1))

    @property
    def eta_max(self):
        return self.claimed_eta

    @property
    def spec(self):
        return f"custom:{self.label}"


LOG = LogLoss()
SQUARE = SquareLoss()
ZERO = ZeroLoss()


def parse_loss(text: str) -> Loss:
    """Parse ``log``, ``square``, ``genlog:<eta>``, ``zero``, ``scaled:<c>:<base>``."""
    text = text.strip()
    head, _, rest = text.partition(":")
    try:
        if head == "log" and not rest:
            return LOG
        if head == "square" and not rest:
            return SQUARE
        if head == "zero" and not rest:
            return ZERO
        if head == "genlog" and rest:
            return GeneralizedLogLoss(float(rest))
        if head == "scaled" and rest:
            c, _, base = rest.partition(":")
            return ScaledLoss(parse_loss(base), float(c))
    except ValueError as exc:
        raise LossError(f"bad loss spec {text!r}: {exc}") from None
    raise LossError(f"unknown loss spec {text!r}")


def evaluate(loss: Loss, gamma: float, omega: int) -> float:
    return loss(gamma, omega)


def mixability_constant(loss: Loss) -> float:
    if not isinstance(loss, Loss):
        raise LossError(f"unsupported loss {loss!r}")
    return loss.eta_max


def mirrored_square() -> CustomLoss:
    """``(1 - gamma - omega)**2``: mixable but not proper."""
    return CustomLoss("mirrored-square", lambda g, w: (1.0 - g - w) ** 2, 2.0)


# ---------------------------------------------------------------------------
# certificates


def check_assumptions(loss: Loss, grid_n: int = DEFAULT_GRID, margin: float = 0.05) -> bool:
    """Grid check that some gamma has both losses finite, none has both
    infinite, and the losses look continuous away from infinite values
    (adjacent-sample jumps shrink when the grid is refined fourfold)."""
    g = np.linspace(0.0, 1.0, grid_n)
    l0, l1 = loss.pair_array(g)
    fin0, fin1 = np.isfinite(l0), np.isfinite(l1)
    if not np.any(fin0 & fin1) or np.any(~fin0 & ~fin1):
        return False
    bad = g[~(fin0 & fin1)]

    def max_jump(n):
        grid = np.linspace(0.0, 1.0, n)
        keep = np.all(np.abs(grid[:, None] - bad[None, :]) > margin, axis=1) if bad.size else np.ones(n, bool)
        a, b = loss.pair_array(grid)
        both = keep[:-1] & keep[1:]
        jumps = np.maximum(np.abs(np.diff(a)), np.abs(np.diff(b)))[both]
        return jumps.max(initial=0.0)

    coarse, fine = max_jump(grid_n), max_jump(4 * (grid_n - 1) + 1)
    return bool(fine <= 0.5 * coarse + 1e-12)


def check_eta_mixable(loss: Loss, eta: float, grid_n: int = DEFAULT_GRID, tol: float = GEOMETRY_TOL) -> bool:
    """Midpoint-concavity test of the boundary of E_eta(superprediction set).

    Every chord midpoint between two sampled image points must lie below the
    upper boundary of the down-closure of the sampled (piecewise-linear) curve.
    """
    if grid_n < 3:
        raise ValueError("grid_n must be at least 3")
    g = np.linspace(0.0, 1.0, grid_n)
    l0, l1 = loss.pair_array(g)
    x = np.exp(-eta * l0)
    y = np.exp(-eta * l1)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    # suffix maximum: highest y reachable at abscissa >= x
    env_y = np.maximum.accumulate(ys[::-1])[::-1]
    mx = 0.5 * (x[:, None] + x[None, :])
    my = 0.5 * (y[:, None] + y[None, :])
    iu = np.triu_indices(grid_n, k=1)
    mx, my = mx[iu], my[iu]
    # polyline through the sorted points, then monotone envelope
    poly = np.interp(mx, xs, env_y)
    return bool(np.all(my <= poly + tol))


def check_proper(loss: Loss, grid_n: int = 101, tol: float = PROPER_TOL) -> bool:
    if grid_n < 3:
        raise ValueError("grid_n must be at least 3")
    p = np.linspace(0.0, 1.0, grid_n)
    l0, l1 = loss.pair_array(p)
    w1 = p[:, None]
    w0 = 1.0 - w1
    with np.errstate(invalid="ignore"):
        # zero probability times infinite loss contributes nothing
        t1 = np.where(w1 == 0.0, 0.0, w1 * l1[None, :])
        t0 = np.where(w0 == 0.0, 0.0, w0 * l0[None, :])
    expected = t0 + t1
    own = np.diag(expected)[:, None]
    ok = (own <= expected + tol) | (own == expected)
    return bool(np.all(ok))


def superprediction_contains(loss: Loss, x: float, y: float, grid_n: int = DEFAULT_GRID,
                             tol: float = GEOMETRY_TOL) -> bool:
    """Is (x, y) dominated by some loss pair (loss(gamma,0), loss(gamma,1))?"""
    if x < 0 or y < 0:
        raise ValueError("superprediction coordinates must be nonnegative")
    g = np.linspace(0.0, 1.0, grid_n)
    l0, l1 = loss.pair_array(g)
    with np.errstate(invalid="ignore"):
        excess = np.maximum(l0 - x, l1 - y)
    excess = np.where(np.isnan(excess), INF, excess)
    if np.min(excess) <= 0.0:
        return True
    # refine around the best cell
    i = int(np.argmin(excess))
    lo, hi = g[max(i - 1, 0)], g[min(i + 1, grid_n - 1)]

    def h(gamma):
        a, b = loss.pair(gamma)
        return max(a - x, b - y)

    res = minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    best = min(float(res.fun), float(excess[i]))
    return best <= tol


def shift_pi_point(eta: float, pi: float) -> tuple[float, float]:
    """The pi-point of the curve exp(-eta x) + exp(-eta y) = 1."""
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must lie strictly inside (0, 1), got {pi}")
    return -math.log1p(-pi) / eta, -math.log(pi) / eta


def northeast_of_shift(loss: Loss, eta: float, pi: float, grid_n: int = DEFAULT_GRID,
                       tol: float = GEOMETRY_TOL) -> bool:
    """Do all finite grid loss pairs lie Northeast of the shifted
    exp(-eta x) + exp(-eta y) = 1 whose pi-point is Lambda_pi?

    Checked geometrically: for each point (x, y) the shift is solved for the
    curve point with abscissa x and its ordinate must not exceed y.
    """
    a, b = loss.pair(pi)
    px, py = shift_pi_point(eta, pi)
    alpha, beta = a - px, b - py
    g = np.linspace(0.0, 1.0, grid_n)
    l0, l1 = loss.pair_array(g)
    finite = np.isfinite(l0) & np.isfinite(l1)
    x, y = l0[finite], l1[finite]
    # curve: y_c = beta - ln(1 - exp(-eta (x - alpha))) / eta, defined for x > alpha
    u = np.exp(-eta * (x - alpha))
    with np.errstate(divide="ignore", invalid="ignore"):
        y_curve = beta - np.log1p(-u) / eta
    inside = u < 1.0
    ok = np.where(inside, y_curve <= y + tol, False)
    # points on the asymptote side within tolerance still count
    near = ~inside & (np.abs(x - alpha) <= tol)
    return bool(np.all(ok | near))


# ---------------------------------------------------------------------------
# substitution function


def mix_point(loss: Loss, eta: float, weights: Sequence[float], preds: Sequence[float]) -> tuple[float, float]:
    """Generalized-mean point -(1/eta) ln sum_i u_i exp(-eta loss(gamma_i, omega))."""
    out = []
    for omega in (0, 1):
        terms = [math.log(u) - eta * loss(g, omega) for u, g in zip(weights, preds) if u > 0]
        out.append(-logsumexp(terms) / eta)
    return out[0], out[1]


def logsumexp(values: Sequence[float]) -> float:
    m = max(values, default=-INF)
    if m == -INF:
        return -INF
    if m == INF:
        return INF
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def substitution_slack(loss: Loss, eta: float, weights, preds, gamma: float) -> tuple[float, float]:
    """exp(-eta loss(gamma, w)) - sum_i u_i exp(-eta loss(gamma_i, w)) for both w."""
    out = []
    for omega in (0, 1):
        mix = math.fsum(u * math.exp(-eta * loss(g, omega)) for u, g in zip(weights, preds))
        out.append(math.exp(-eta * loss(gamma, omega)) - mix)
    return out[0], out[1]


def substitution(loss: Loss, eta: float, weights: Sequence[float], preds: Sequence[float],
                 tol: float = SUBST_TOL) -> float:
    """A prediction whose losses are dominated by the mix point of the weighted
    predictions, found by bisecting the slack-balance function."""
    weights = [float(u) for u in weights]
    preds = [float(g) for g in preds]
    if len(weights) != len(preds):
        raise ValueError("weights and predictions differ in length")
    if any(u < 0 for u in weights) or any(not 0.0 <= g <= 1.0 for g in preds):
        raise ValueError("weights must be nonnegative and predictions in [0, 1]")
    if weights and abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {math.fsum(weights)!r}, not 1")
    if not loss.is_zero and eta > loss.eta_max * (1 + 1e-12):
        raise MixabilityError(f"eta={eta} exceeds the mixability constant {loss.eta_max} of {loss.spec}")
    if not weights or loss.is_zero:
        return 0.5
    if len(weights) == 1:
        return preds[0]

    g0, g1 = mix_point(loss, eta, weights, preds)

    def balance(gamma):
        a, b = loss.pair(gamma)
        return loss_difference(a, g0) - loss_difference(b, g1)

    def excess(gamma):
        a, b = loss.pair(gamma)
        return max(loss_difference(a, g0), loss_difference(b, g1))

    def feasible(gamma):
        s0, s1 = substitution_slack(loss, eta, weights, preds, gamma)
        return s0 >= -GEOMETRY_TOL and s1 >= -GEOMETRY_TOL

    lo, hi = 0.0, 1.0
    d_lo, d_hi = balance(lo), balance(hi)
    if d_lo >= 0.0 and feasible(lo):
        return lo
    if d_hi <= 0.0 and feasible(hi):
        return hi
    if d_lo < 0.0 < d_hi:
        for _ in range(SUBST_MAX_ITER):
            mid = 0.5 * (lo + hi)
            # stop once the interval is small and the losses at mid sit on
            # the mix point (in loss units, so relative slack near 0 and 1
            # is controlled too), or when floats run out
            if hi - lo <= tol and (excess(mid) <= SUBST_LOSS_TOL or not lo < mid < hi):
                break
            if balance(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        gamma = 0.5 * (lo + hi)
        if feasible(gamma):
            return gamma
    # corners of non-strictly-proper losses: scan a grid
    for gamma in np.linspace(0.0, 1.0, DEFAULT_GRID):
        if feasible(float(gamma)):
            return float(gamma)
    raise MixabilityError(f"no substitution point found for {loss.spec} at eta={eta}")
