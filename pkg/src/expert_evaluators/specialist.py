"""Aggregating Algorithm for specialist (sleeping) experts.

Weights are kept in log form. Awake experts are reweighted against the
learner's own loss, so an expert that beats the learner gains weight and one
that does worse loses it; sleeping experts keep their weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Collection, Mapping, Sequence

from .loss import Loss, check_proper, loss_difference, substitution


class SpecialistError(ValueError):
    pass


@dataclass(frozen=True)
class SpecialistConfig:
    loss: Loss
    eta: float
    priors: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(float(p) for p in self.priors))
        if not self.priors or any(p <= 0 for p in self.priors):
            raise SpecialistError("priors must be positive")
        if abs(math.fsum(self.priors) - 1.0) > 1e-12:
            raise SpecialistError(f"priors sum to {math.fsum(self.priors)!r}, not 1")
        if not 0 < self.eta <= self.loss.eta_max * (1 + 1e-12):
            raise SpecialistError(f"eta={self.eta} outside (0, {self.loss.eta_max}] for {self.loss.spec}")

    @classmethod
    def uniform(cls, loss: Loss, n: int, eta: float | None = None) -> SpecialistConfig:
        return cls(loss, loss.eta_max if eta is None else eta, (1.0 / n,) * n)

    @property
    def n(self) -> int:
        return len(self.priors)

    def require_proper(self, grid_n: int = 101) -> None:
        if not check_proper(self.loss, grid_n):
            raise SpecialistError(f"{self.loss.spec} fails the properness certificate")


@dataclass(frozen=True)
class SpecialistState:
    log_w: tuple[float, ...]
    step: int = 0

    @classmethod
    def fresh(cls, cfg: SpecialistConfig) -> SpecialistState:
        return cls(tuple(math.log(p) for p in cfg.priors), 0)


def _check_awake(cfg: SpecialistConfig, awake: Collection[int], preds: Mapping[int, float]) -> list[int]:
    idx = sorted(awake)
    if any(not 0 <= n < cfg.n for n in idx):
        raise SpecialistError(f"awake set {idx} has indices outside 0..{cfg.n - 1}")
    missing = [n for n in idx if n not in preds]
    if missing:
        raise SpecialistError(f"no prediction for awake experts {missing}")
    return idx


def normalized_weights(state: SpecialistState, awake: Sequence[int]) -> list[float]:
    """u^n = w^n / sum over awake of w^m, via a max shift."""
    if not awake:
        return []
    m = max(state.log_w[n] for n in awake)
    raw = [math.exp(state.log_w[n] - m) for n in awake]
    total = math.fsum(raw)
    return [r / total for r in raw]


def specialist_predict(state: SpecialistState, cfg: SpecialistConfig, awake: Collection[int],
                       preds: Mapping[int, float]) -> float:
    idx = _check_awake(cfg, awake, preds)
    u = normalized_weights(state, idx)
    return substitution(cfg.loss, cfg.eta, u, [preds[n] for n in idx])


def specialist_update(state: SpecialistState, cfg: SpecialistConfig, awake: Collection[int],
                      preds: Mapping[int, float], pi: float, omega: int) -> SpecialistState:
    idx = set(_check_awake(cfg, awake, preds))
    learner = cfg.loss(pi, omega)
    log_w = []
    for n, lw in enumerate(state.log_w):
        if n in idx:
            d = loss_difference(learner, cfg.loss(preds[n], omega))
            lw = lw + (cfg.eta * d if math.isfinite(d) else d)
        log_w.append(lw)
    return SpecialistState(tuple(log_w), state.step + 1)


def eq13_slack(state: SpecialistState, cfg: SpecialistConfig, awake: Collection[int],
               preds: Mapping[int, float], pi: float) -> tuple[float, float]:
    """1 - sum_awake u^n exp(eta (loss(pi, w) - loss(gamma^n, w))) for w = 0, 1."""
    idx = _check_awake(cfg, awake, preds)
    u = normalized_weights(state, idx)
    out = []
    for omega in (0, 1):
        total = 0.0
        for un, n in zip(u, idx):
            d = loss_difference(cfg.loss(pi, omega), cfg.loss(preds[n], omega))
            total += 0.0 if un == 0.0 else un * math.exp(min(cfg.eta * d, 700.0))
        out.append(1.0 - total)
    return out[0], out[1]


class SpecialistLearner:
    """Stateful learner over full advice vectors (``None`` = asleep)."""

    def __init__(self, cfg: SpecialistConfig):
        self.cfg = cfg
        self.state = SpecialistState.fresh(cfg)

    @staticmethod
    def _split(preds: Sequence[float | None]) -> tuple[list[int], dict[int, float]]:
        awake = [n for n, g in enumerate(preds) if g is not None]
        return awake, {n: preds[n] for n in awake}

    def predict(self, preds: Sequence[float | None]) -> float:
        awake, pm = self._split(preds)
        return specialist_predict(self.state, self.cfg, awake, pm)

    def update(self, preds: Sequence[float | None], pi: float, omega: int) -> None:
        awake, pm = self._split(preds)
        self.state = specialist_update(self.state, self.cfg, awake, pm, pi, omega)


def run_specialist_game(cfg: SpecialistConfig, advice: Sequence[Sequence[float | None]],
                        outcomes: Sequence[int]):
    """Play fixed advice and outcome streams; returns a ``GameResult``."""
    from .protocols import play_specialist
    from .sim import Scripted, ScriptedReality

    if len(advice) != len(outcomes):
        raise SpecialistError(f"{len(advice)} advice rows but {len(outcomes)} outcomes")
    if any(len(row) != cfg.n for row in advice):
        raise SpecialistError(f"every advice row needs {cfg.n} entries")
    if not advice:
        return play_specialist(cfg, [], None, 0)
    experts = [Scripted([row[n] for row in advice], loss=cfg.loss, eta=cfg.eta) for n in range(cfg.n)]
    return play_specialist(cfg, experts, ScriptedReality(list(outcomes)), len(outcomes))
