"""Expert and reality strategies for driving the games.

Randomness comes from ``random.Random`` (MT19937) seeded with the string
``"<seed>/<role>"``; string seeds are hashed with SHA-512 by the standard
library, so streams are identical across platforms and Python versions >= 3.2.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Sequence

from .engine import Advice
from .loss import LOG, Loss, parse_loss


class StrategyError(ValueError):
    pass


class ScriptExhausted(StrategyError):
    pass


def make_rng(seed: int | str, role: str) -> random.Random:
    return random.Random(f"{seed}/{role}")


class ExpertStrategy:
    """Emits one :class:`Advice` per step. Calling ``next_advice`` twice for
    the same ``t`` returns the same advice, so several virtual experts can
    share one underlying strategy."""

    loss: Loss
    eta: float

    def __init__(self, loss: Loss = LOG, eta: float | None = None):
        self.loss = loss
        self.eta = loss.eta_max if eta is None else float(eta)
        self._cache: tuple[int, float | None] | None = None
        self._rng: random.Random | None = None

    def reseed(self, seed: int | str, role: str) -> ExpertStrategy:
        self._rng = make_rng(seed, role)
        self._cache = None
        return self

    @property
    def rng(self) -> random.Random:
        if self._rng is None:
            self._rng = make_rng(0, "expert")
        return self._rng

    def clear_cache(self) -> None:
        self._cache = None
        for inner in (getattr(self, "base", None), getattr(self, "source", None)):
            if inner is not None:
                inner.clear_cache()

    def prediction(self, t: int, history) -> float | None:
        if self._cache is None or self._cache[0] != t:
            self._cache = (t, self._predict(t, history))
        return self._cache[1]

    def next_advice(self, t: int, history=()) -> Advice:
        return Advice(self.prediction(t, history), self.eta, self.loss)

    def _predict(self, t: int, history) -> float | None:
        raise NotImplementedError

    def _kind_spec(self) -> str:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        return f"{self._kind_spec()}@{self.loss.spec}:eta={self.eta:g}"


class Constant(ExpertStrategy):
    def __init__(self, value: float, loss: Loss = LOG, eta: float | None = None):
        super().__init__(loss, eta)
        if not 0.0 <= value <= 1.0:
            raise StrategyError(f"constant prediction {value} outside [0, 1]")
        self.value = float(value)

    def _predict(self, t, history):
        return self.value

    def _kind_spec(self):
        return f"constant:{self.value:g}"


class IIDUniform(ExpertStrategy):
    def __init__(self, low: float = 0.0, high: float = 1.0, loss: Loss = LOG, eta: float | None = None):
        super().__init__(loss, eta)
        if not 0.0 <= low <= high <= 1.0:
            raise StrategyError(f"bad iid range [{low}, {high}]")
        self.low, self.high = float(low), float(high)

    def _predict(self, t, history):
        return self.rng.uniform(self.low, self.high)

    def _kind_spec(self):
        if (self.low, self.high) == (0.0, 1.0):
            return "iid"
        return f"iid:{self.low:g}:{self.high:g}"


class Drift(ExpertStrategy):
    """start + rate * (t - 1), clipped to [0, 1]."""

    def __init__(self, start: float, rate: float, loss: Loss = LOG, eta: float | None = None):
        super().__init__(loss, eta)
        self.start, self.rate = float(start), float(rate)

    def _predict(self, t, history):
        return min(1.0, max(0.0, self.start + self.rate * (t - 1)))

    def _kind_spec(self):
        return f"drift:{self.start:g}:{self.rate:g}"


class Scripted(ExpertStrategy):
    """Replays a list; ``None`` entries abstain."""

    def __init__(self, values: Sequence[float | None], cycle: bool = False, loss: Loss = LOG,
                 eta: float | None = None):
        super().__init__(loss, eta)
        if not values:
            raise StrategyError("empty script")
        self.values = [None if v is None else float(v) for v in values]
        self.cycle = cycle

    def _predict(self, t, history):
        i = t - 1
        if i >= len(self.values):
            if not self.cycle:
                raise ScriptExhausted(f"script of length {len(self.values)} exhausted at t={t}")
            i %= len(self.values)
        return self.values[i]

    def _kind_spec(self):
        body = ",".join("a" if v is None else f"{v:g}" for v in self.values)
        return f"scripted:{body}" + (":cycle" if self.cycle else "")


@dataclass(frozen=True)
class AwakePattern:
    """When a sleeper is awake. ``kind``: even, odd, every, random, mask."""

    kind: str
    k: int = 2
    p: float = 0.5
    mask: tuple[bool, ...] = ()

    @classmethod
    def parse(cls, text: str) -> AwakePattern:
        head, _, rest = text.partition(":")
        if head in ("even", "odd") and not rest:
            return cls(head)
        if head == "every" and rest:
            return cls("every", k=int(rest))
        if head == "random" and rest:
            return cls("random", p=float(rest))
        if head == "mask" and rest and set(rest) <= {"0", "1"}:
            return cls("mask", mask=tuple(c == "1" for c in rest))
        raise StrategyError(f"unknown awake pattern {text!r}")

    def awake(self, t: int, rng: random.Random) -> bool:
        if self.kind == "even":
            return t % 2 == 0
        if self.kind == "odd":
            return t % 2 == 1
        if self.kind == "every":
            return t % self.k == 0
        if self.kind == "random":
            return rng.random() < self.p
        return self.mask[(t - 1) % len(self.mask)]

    @property
    def spec(self) -> str:
        if self.kind == "every":
            return f"every:{self.k}"
        if self.kind == "random":
            return f"random:{self.p:g}"
        if self.kind == "mask":
            return "mask:" + "".join("1" if m else "0" for m in self.mask)
        return self.kind


class Sleeper(ExpertStrategy):
    """Wraps a base strategy and abstains outside the awake pattern. The base
    is queried every step so its random stream does not depend on the pattern."""

    def __init__(self, base: ExpertStrategy, pattern: AwakePattern):
        super().__init__(base.loss, base.eta)
        self.base = base
        self.pattern = pattern

    def reseed(self, seed, role):
        super().reseed(seed, role + "/mask")
        self.base.reseed(seed, role)
        return self

    def _predict(self, t, history):
        value = self.base.prediction(t, history)
        return value if self.pattern.awake(t, self.rng) else None

    def _kind_spec(self):
        return f"sleeper:{self.pattern.spec}({self.base._kind_spec()})"


_SLEEPER = re.compile(r"^sleeper:(?P<pattern>[^()]+)\((?P<inner>.+)\)$")


def _split_loss(text: str) -> tuple[str, str | None, float | None]:
    depth = 0
    cut = -1
    for i, c in enumerate(text):
        depth += c == "("
        depth -= c == ")"
        if c == "@" and depth == 0:
            cut = i
    if cut < 0:
        return text, None, None
    kind, loss_part = text[:cut], text[cut + 1:]
    eta = None
    m = re.search(r":eta=([^:]+)$", loss_part)
    if m:
        eta = float(m.group(1))
        loss_part = loss_part[: m.start()]
    return kind, loss_part, eta


def parse_expert(text: str, default_loss: Loss = LOG, default_eta: float | None = None) -> ExpertStrategy:
    """Parse e.g. ``constant:0.7@log:eta=1`` or ``sleeper:even(iid)@square``.

    Without ``@loss`` the default loss applies; without ``eta=`` the learning
    rate defaults to the loss's mixability constant.
    """
    kind, loss_text, eta = _split_loss(text.strip())
    try:
        loss = default_loss if loss_text is None else parse_loss(loss_text)
    except ValueError as exc:
        raise StrategyError(str(exc)) from None
    if eta is None:
        eta = default_eta if loss_text is None else None
    return _parse_kind(kind, loss, eta)


def _parse_kind(kind: str, loss: Loss, eta: float | None) -> ExpertStrategy:
    m = _SLEEPER.match(kind)
    if m:
        base = _parse_kind(m.group("inner"), loss, eta)
        return Sleeper(base, AwakePattern.parse(m.group("pattern")))
    head, _, rest = kind.partition(":")
    args = rest.split(":") if rest else []
    try:
        if head == "constant" and len(args) == 1:
            return Constant(float(args[0]), loss, eta)
        if head == "iid" and len(args) in (0, 2):
            return IIDUniform(*map(float, args), loss=loss, eta=eta)
        if head == "drift" and len(args) == 2:
            return Drift(float(args[0]), float(args[1]), loss, eta)
        if head == "scripted" and len(args) in (1, 2):
            cycle = len(args) == 2 and args[1] == "cycle"
            if len(args) == 2 and not cycle:
                raise StrategyError(f"unknown script flag {args[1]!r}")
            values = [None if v == "a" else float(v) for v in args[0].split(",")]
            return Scripted(values, cycle, loss, eta)
    except (TypeError, ValueError) as exc:
        raise StrategyError(f"bad expert spec {kind!r}: {exc}") from None
    raise StrategyError(f"unknown expert spec {kind!r}")


# ---------------------------------------------------------------------------
# reality


class RealityStrategy:
    def __init__(self):
        self._rng: random.Random | None = None

    def reseed(self, seed: int | str, role: str = "reality") -> RealityStrategy:
        self._rng = make_rng(seed, role)
        return self

    @property
    def rng(self) -> random.Random:
        if self._rng is None:
            self._rng = make_rng(0, "reality")
        return self._rng

    def next_outcome(self, t: int, history, prediction: float) -> int:
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError


class Bernoulli(RealityStrategy):
    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p <= 1.0:
            raise StrategyError(f"Bernoulli p={p} outside [0, 1]")
        self.p = float(p)

    def next_outcome(self, t, history, prediction):
        return 1 if self.rng.random() < self.p else 0

    @property
    def spec(self):
        return f"bernoulli:{self.p:g}"


class ScriptedReality(RealityStrategy):
    def __init__(self, values: Sequence[int], cycle: bool = False):
        super().__init__()
        if not values or any(v not in (0, 1) for v in values):
            raise StrategyError("scripted outcomes must be a non-empty list of 0/1")
        self.values = [int(v) for v in values]
        self.cycle = cycle

    def next_outcome(self, t, history, prediction):
        i = t - 1
        if i >= len(self.values):
            if not self.cycle:
                raise ScriptExhausted(f"outcome script of length {len(self.values)} exhausted at t={t}")
            i %= len(self.values)
        return self.values[i]

    @property
    def spec(self):
        return "scripted:" + ",".join(map(str, self.values)) + (":cycle" if self.cycle else "")


class GreedyAdversary(RealityStrategy):
    """Picks the outcome with the larger learner loss under ``target``; ties go to 1."""

    def __init__(self, target: Loss):
        super().__init__()
        self.target = target

    def next_outcome(self, t, history, prediction):
        l0, l1 = self.target.pair(prediction)
        return 1 if l1 >= l0 else 0

    @property
    def spec(self):
        return f"greedy:{self.target.spec}"


def parse_reality(text: str) -> RealityStrategy:
    head, _, rest = text.strip().partition(":")
    try:
        if head == "bernoulli" and rest:
            return Bernoulli(float(rest))
        if head == "greedy" and rest:
            return GreedyAdversary(parse_loss(rest))
        if head == "scripted" and rest:
            body, _, flag = rest.partition(":")
            if flag not in ("", "cycle"):
                raise StrategyError(f"unknown script flag {flag!r}")
            return ScriptedReality([int(v) for v in body.split(",")], flag == "cycle")
    except ValueError as exc:
        raise StrategyError(f"bad reality spec {text!r}: {exc}") from None
    raise StrategyError(f"unknown reality spec {text!r}")


def next_advice(strategy: ExpertStrategy, t: int, history=()) -> Advice:
    return strategy.next_advice(t, history)


def next_outcome(strategy: RealityStrategy, t: int, history, prediction: float) -> int:
    return strategy.next_outcome(t, history, prediction)


class VirtualExpert(ExpertStrategy):
    """Replays ``source``'s prediction under a different loss (and rate)."""

    def __init__(self, source: ExpertStrategy, source_index: int, loss_index: int, loss: Loss,
                 eta: float | None = None):
        super().__init__(loss, eta)
        self.source = source
        self.source_index = source_index
        self.loss_index = loss_index

    def reseed(self, seed, role):
        return self

    def _predict(self, t, history):
        return self.source.prediction(t, history)

    def _kind_spec(self):
        return f"virtual({self.source_index},{self.loss_index})"
