"""Sleeping experts with unequal priors: awake-step regret against -ln p / eta."""

import argparse
import math

from expert_evaluators.loss import parse_loss
from expert_evaluators.protocols import format_report, play_specialist
from expert_evaluators.sim import AwakePattern, IIDUniform, Sleeper, parse_reality
from expert_evaluators.specialist import SpecialistConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--loss", default="log")
    ap.add_argument("--priors", type=float, nargs="+", default=[0.4, 0.3, 0.2, 0.1])
    ap.add_argument("-T", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--reality", default="bernoulli:0.3")
    args = ap.parse_args(argv)

    loss = parse_loss(args.loss)
    cfg = SpecialistConfig(loss, loss.eta_max, tuple(args.priors))
    experts = [Sleeper(IIDUniform(), AwakePattern("random", p=0.3 + 0.6 * i / max(1, cfg.n - 1))).reseed(args.seed, f"s{i}")
               for i in range(cfg.n)]
    res = play_specialist(cfg, experts, parse_reality(args.reality).reseed(args.seed), args.T, keep_history=False)
    print(format_report(res.report()))
    for i, p in enumerate(cfg.priors):
        print(f"expert {i}: prior {p}, awake {res.ledger.awake_steps[i]} steps, bound {-math.log(p) / cfg.eta:.4f}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
