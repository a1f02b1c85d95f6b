"""Three predictors judged under both log and square loss at once.

Every (predictor, loss) pair becomes a virtual expert, so six in total;
log regrets should stay under ln 6 and square regrets under ln 6 / 2.
"""

import argparse
import math

from expert_evaluators.loss import LOG, SQUARE
from expert_evaluators.protocols import format_report, run_multiobjective_game
from expert_evaluators.sim import Constant, Drift, GreedyAdversary, IIDUniform, parse_reality


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-T", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reality", default=None, help="reality spec, e.g. bernoulli:0.3 (default: greedy on log loss)")
    args = ap.parse_args(argv)

    experts = [IIDUniform().reseed(args.seed, "a"), Constant(0.3).reseed(args.seed, "b"),
               Drift(0.9, -8e-5).reseed(args.seed, "c")]
    reality = GreedyAdversary(LOG) if args.reality is None else parse_reality(args.reality)
    res = run_multiobjective_game(experts, [LOG, SQUARE], reality.reseed(args.seed), args.T, keep_history=False)
    print(format_report(res.report()))
    print(f"ln 6 = {math.log(6):.4f}, ln 6 / 2 = {math.log(6) / 2:.4f}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
