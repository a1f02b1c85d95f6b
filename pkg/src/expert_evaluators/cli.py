"""Command-line front end.

    expert-eval run CONFIG.json [--jobs K]
    expert-eval verify TRANSCRIPT.jsonl
    expert-eval check-loss SPEC --eta ETA
    expert-eval report LEDGER.json

Exit status: 0 when every check passes, 1 on a bound or certificate
violation, 2 on bad input. Tolerances can be overridden with the
EXPERT_EVAL_BOUND_TOL and EXPERT_EVAL_Q_TOL environment variables.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .loss import (
    DEFAULT_GRID,
    Loss,
    LossError,
    check_assumptions,
    check_eta_mixable,
    check_proper,
    northeast_of_shift,
    parse_loss,
)
from .protocols import (
    PROTOCOLS,
    BipartiteRelation,
    ConstantLearner,
    GameError,
    GameResult,
    ReportRow,
    TranscriptError,
    bound_tol,
    format_report,
    play_specialist,
    read_transcript,
    report_to_dict,
    run_bipartite_game,
    run_constant_evaluator_game,
    run_evaluator_game,
    run_multiobjective_game,
    run_standard_game,
    verify_transcript,
    write_transcript,
)
from .sim import ExpertStrategy, StrategyError, parse_expert, parse_reality
from .specialist import SpecialistConfig, SpecialistError

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    protocol: str
    experts: list[str]
    reality: str
    T: int
    seeds: list[int] = field(default_factory=lambda: [0])
    priors: list[float] | None = None
    loss: str | None = None
    eta: float | None = None
    losses: list[str] | None = None
    etas: list[float] | None = None
    relation: list[list[int]] | None = None
    learner: str = "df"
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        missing = [k for k in ("protocol", "experts", "reality", "T") if k not in raw]
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls.from_dict(raw)
        out = Path(cfg.output_dir)
        if not out.is_absolute():
            cfg.output_dir = str(Path(path).resolve().parent / out)
        return cfg

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {', '.join(PROTOCOLS)}, got {self.protocol!r}")
        if not isinstance(self.T, int) or self.T < 0:
            raise ConfigError(f"T must be a nonnegative integer, got {self.T!r}")
        if not self.experts:
            raise ConfigError("at least one expert is required")
        if not self.seeds or any(not isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of integers")
        if self.learner != "df" and not self.learner.startswith("constant:"):
            raise ConfigError(f"learner must be 'df' or 'constant:<p>', got {self.learner!r}")
        if self.learner != "df":
            v = self._float(self.learner.partition(":")[2], "learner value")
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"constant learner value {v} outside [0, 1]")
        if self.priors is not None:
            n = self.n_weighted()
            if len(self.priors) != n or any(p <= 0 for p in self.priors) or abs(math.fsum(self.priors) - 1) > 1e-12:
                raise ConfigError(f"priors must be {n} positive numbers summing to 1")
            if self.protocol in ("multiobjective", "bipartite", "constant", "standard"):
                raise ConfigError(f"priors are only supported for evaluators and specialist, not {self.protocol}")
        try:
            parse_reality(self.reality)
        except StrategyError as exc:
            raise ConfigError(f"reality: {exc}") from None
        self._check_losses()
        self.build_experts()

    def _float(self, text, what) -> float:
        try:
            return float(text)
        except (TypeError, ValueError):
            raise ConfigError(f"{what} must be a number, got {text!r}") from None

    def _parse_loss(self, text, what) -> Loss:
        try:
            return parse_loss(text)
        except LossError as exc:
            raise ConfigError(f"{what}: {exc}") from None

    def _check_losses(self) -> None:
        p = self.protocol
        if p in ("standard", "specialist"):
            if self.loss is None:
                raise ConfigError(f"protocol {p} needs a single 'loss'")
            loss = self._parse_loss(self.loss, "loss")
            eta = loss.eta_max if self.eta is None else self.eta
            if not 0 < eta <= loss.eta_max * (1 + 1e-12):
                raise ConfigError(f"eta={eta} outside (0, {loss.eta_max}] for loss {loss.spec}")
        if p in ("multiobjective", "bipartite"):
            if not self.losses:
                raise ConfigError(f"protocol {p} needs a 'losses' list")
            losses = [self._parse_loss(s, f"losses[{m}]") for m, s in enumerate(self.losses)]
            if self.etas is not None:
                if len(self.etas) != len(losses):
                    raise ConfigError("'etas' must match 'losses' in length")
                for m, (l, e) in enumerate(zip(losses, self.etas)):
                    if not 0 < e <= l.eta_max * (1 + 1e-12):
                        raise ConfigError(f"loss {m} ({l.spec}): eta={e} outside (0, {l.eta_max}]")
        if p == "bipartite":
            if not self.relation:
                raise ConfigError("protocol bipartite needs a 'relation' edge list")
            try:
                BipartiteRelation(tuple(e) for e in self.relation).validate(len(self.experts), len(self.losses))
            except (GameError, TypeError, ValueError) as exc:
                raise ConfigError(f"relation: {exc}") from None
        if p == "constant" and self.losses is not None and len(self.losses) != len(self.experts):
            raise ConfigError("protocol constant: 'losses' needs one entry per expert")

    def n_weighted(self) -> int:
        return len(self.experts)

    # -- construction -----------------------------------------------------

    def build_experts(self) -> list[ExpertStrategy]:
        experts = []
        for i, text in enumerate(self.experts):
            try:
                e = parse_expert(text)
            except (StrategyError, ValueError) as exc:
                raise ConfigError(f"expert {i} ({text!r}): {exc}") from None
            if not 0 < e.eta <= e.loss.eta_max * (1 + 1e-12) and not e.loss.is_zero:
                raise ConfigError(
                    f"expert {i} ({text!r}): eta={e.eta:g} exceeds the mixability constant "
                    f"{e.loss.eta_max:g} of {e.loss.spec}"
                )
            experts.append(e)
        return experts

    def build_learner(self):
        if self.learner == "df":
            return None
        return ConstantLearner(float(self.learner.partition(":")[2]))

    def play(self, seed: int, keep_history: bool = True) -> GameResult:
        experts = [e.reseed(seed, f"expert{i}") for i, e in enumerate(self.build_experts())]
        reality = parse_reality(self.reality).reseed(seed, "reality")
        learner = self.build_learner()
        kw = {"keep_history": keep_history}
        p = self.protocol
        if p == "evaluators":
            return run_evaluator_game(experts, reality, self.T, learner, priors=self.priors, **kw)
        if p == "constant":
            losses = [parse_loss(s) for s in self.losses] if self.losses is not None else None
            return run_constant_evaluator_game(experts, reality, self.T, losses, self.etas, learner, **kw)
        if p == "standard":
            return run_standard_game(parse_loss(self.loss), experts, reality, self.T, self.eta, learner, **kw)
        losses = [parse_loss(s) for s in self.losses or []]
        if p == "multiobjective":
            return run_multiobjective_game(experts, losses, reality, self.T, self.etas, learner, **kw)
        if p == "bipartite":
            rel = BipartiteRelation(tuple(e) for e in self.relation)
            return run_bipartite_game(rel, experts, losses, reality, self.T, self.etas, learner, **kw)
        loss = parse_loss(self.loss)
        priors = self.priors or [1.0 / len(experts)] * len(experts)
        spec = SpecialistConfig(loss, loss.eta_max if self.eta is None else self.eta, priors)
        return play_specialist(spec, experts, reality, self.T, learner, **kw)


# ---------------------------------------------------------------------------
# output files


def write_regret_curve(result: GameResult, path: Path) -> None:
    """One row per (step, bounded quantity): realized value and its bound."""
    ledger = result.ledger
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "expert", "label", "quantity", "regret", "bound"])
        for t, (raw, weighted) in enumerate(zip(ledger.regret_history, ledger.weighted_history), 1):
            for b in result.bounds:
                value = weighted[b.expert] if b.quantity == "weighted" else raw[b.expert]
                w.writerow([t, b.expert, ledger.labels[b.expert], b.quantity, repr(value), repr(b.value)])


def _run_seed(cfg: RunConfig, seed: int) -> tuple[int, bool, str]:
    out = Path(cfg.output_dir)
    result = cfg.play(seed)
    rows = result.report()
    write_transcript(result.transcript, out / f"transcript_seed{seed}.jsonl")
    doc = {
        "seed": seed,
        "config": asdict(cfg) | {"output_dir": None},
        "tolerance": bound_tol(),
        "ledger": result.ledger.to_dict(),
        "report": report_to_dict(rows),
    }
    (out / f"ledger_seed{seed}.json").write_text(json.dumps(doc, indent=1) + "\n")
    text = format_report(rows)
    (out / f"report_seed{seed}.txt").write_text(text + "\n")
    write_regret_curve(result, out / f"regret_seed{seed}.csv")
    return seed, all(r.passed for r in rows), text


def cmd_run(config: str, jobs: int = 1) -> int:
    try:
        cfg = RunConfig.load(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    try:
        if jobs > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
        else:
            outcomes = [_run_seed(cfg, s) for s in cfg.seeds]
    except (GameError, SpecialistError, StrategyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ok = True
    for seed, passed, text in outcomes:
        print(f"== seed {seed}: {'PASS' if passed else 'FAIL'}")
        print(text)
        ok &= passed
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_verify(path: str) -> int:
    try:
        tr = read_transcript(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except TranscriptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    res = verify_transcript(tr)
    print(f"{res.steps} steps, {tr.n_experts} experts, checks: {', '.join(res.checks)}")
    if res.ok:
        print("all checks pass")
        return EXIT_OK
    for f in sorted(res.failures, key=lambda f: f.step):
        print(f"FAIL step {f.step} [{f.check}]: {f.message}")
    return EXIT_VIOLATION


def cmd_check_loss(spec: str, eta: float | None, grid: int = DEFAULT_GRID) -> int:
    try:
        loss = parse_loss(spec)
    except LossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    eta = loss.eta_max if eta is None else eta
    if not eta > 0:
        print(f"error: eta must be positive, got {eta}", file=sys.stderr)
        return EXIT_USAGE
    checks = {
        "assumptions": check_assumptions(loss, grid),
        "proper": check_proper(loss),
        f"{eta:g}-mixable": check_eta_mixable(loss, eta, grid),
        "northeast": all(northeast_of_shift(loss, eta, pi, grid) for pi in (0.1, 0.25, 0.5, 0.75, 0.9)),
    }
    print(f"loss {loss.spec}, eta={eta:g} (mixability constant {loss.eta_max:g})")
    for name, ok in checks.items():
        print(f"  {name:<16} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(checks.values()) else EXIT_VIOLATION


def cmd_report(path: str) -> int:
    try:
        doc = json.loads(Path(path).read_text())
        rows = doc["report"]["rows"]
        tol = doc.get("tolerance", bound_tol())
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {path} is not a ledger file ({exc})", file=sys.stderr)
        return EXIT_USAGE
    parsed = []
    for r in rows:
        r = dict(r)
        r["passed"] = r["bound"] - r["realized"] >= -tol
        parsed.append(ReportRow(**r))
    print(format_report(parsed))
    return EXIT_OK if all(r.passed for r in parsed) else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="expert-eval", description="Prediction with expert evaluators' advice.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="play games described by a JSON config")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1, help="seeds to run in parallel")
    p = sub.add_parser("verify", help="re-check every bound on a recorded transcript")
    p.add_argument("transcript")
    p = sub.add_parser("check-loss", help="numeric certificates for a loss")
    p.add_argument("spec")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p = sub.add_parser("report", help="print a saved ledger report")
    p.add_argument("ledger")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.config, args.jobs)
    if args.command == "verify":
        return cmd_verify(args.transcript)
    if args.command == "check-loss":
        return cmd_check_loss(args.spec, args.eta, args.grid)
    return cmd_report(args.ledger)


if __name__ == "__main__":
    sys.exit(main())
