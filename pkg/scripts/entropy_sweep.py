#!/usr/bin/env python3
"""Sweep the covering-number machinery over depth and norm budget.

Writes one CSV row per (L, M, eps) with the parameter count, the exact
parameter-to-function Lipschitz constant from the recursion, and the metric
entropy guarantee N log(3dJLM^2/eps).

Usage: python scripts/entropy_sweep.py [output.csv]
"""

import csv
import sys

from convrates.complexity import (
    cnn_complexity_spec,
    covering_recursion,
    entropy_bound_cnn,
)


def main(argv=None):
    out = (argv or sys.argv[1:] or ["entropy_sweep.csv"])[0]
    d, s, J = 4, 2, 6
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["d", "s", "J", "L", "M", "eps", "n_params", "param_lipschitz", "entropy_bound"]
        )
        for L in range(1, 21):
            M = float(L * L)
            res = covering_recursion(cnn_complexity_spec(d, s, J, L, M))
            for eps in (1.0, 0.1, 0.01):
                bound = entropy_bound_cnn(d, s, J, L, M, eps)
                writer.writerow(
                    [d, s, J, L, f"{M:.17g}", f"{eps:.17g}", res.n_params,
                     f"{res.param_lipschitz:.17g}", f"{bound:.17g}"]
                )
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
