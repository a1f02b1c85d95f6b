"""Eight evaluators with mixed losses over many seeds; prints the worst weighted regret per seed."""

import argparse
import math
import time

from expert_evaluators.loss import LOG, SQUARE, GeneralizedLogLoss
from expert_evaluators.protocols import run_evaluator_game
from expert_evaluators.sim import Constant, Drift, IIDUniform, parse_reality

LOSSES = [(LOG, 1.0), (SQUARE, 2.0), (GeneralizedLogLoss(0.5), 0.5)]


def experts(seed, n):
    out = []
    for i in range(n):
        loss, eta = LOSSES[i % 3]
        kind = [IIDUniform(loss=loss, eta=eta), Constant(0.3 + 0.05 * i, loss, eta),
                Drift(0.1, 1e-4, loss, eta)][i % 3]
        out.append(kind.reseed(seed, f"expert{i}"))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-N", type=int, default=8)
    ap.add_argument("-T", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--reality", default="greedy:log")
    args = ap.parse_args(argv)

    bound = math.log(args.N)
    ok = True
    start = time.perf_counter()
    print("seed  worst_weighted_regret  bound")
    for seed in range(args.seeds):
        res = run_evaluator_game(experts(seed, args.N), parse_reality(args.reality).reseed(seed), args.T,
                                 keep_history=False)
        worst = max(res.ledger.weighted_regret)
        ok &= res.passed
        print(f"{seed:4d}  {worst:21.6f}  {bound:.6f}")
    print(f"total {time.perf_counter() - start:.1f} s, {'all bounds hold' if ok else 'BOUND VIOLATED'}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
