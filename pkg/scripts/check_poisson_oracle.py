"""Compare the linear-solve Poisson solution with the semigroup-integral oracle.

    python3 scripts/check_poisson_oracle.py [--instances 100] [--max-states 20] [--seed 0]
"""

import argparse
import time

import numpy as np

from mssde.chain import invariant_measure
from mssde.poisson import ergodic_constant, poisson_integral_oracle, solve_poisson


def random_generator(rng, m0):
    off = rng.uniform(0.1, 1.0, (m0, m0)) * (rng.random((m0, m0)) < 0.7)
    for i in range(m0):
        off[i, (i + 1) % m0] = rng.uniform(0.1, 1.0)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(off.sum(axis=1))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--max-states", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print("m0,residual,centering,oracle_diff,phi_over_bound,seconds")
    for _ in range(args.instances):
        m0 = int(rng.integers(2, args.max_states + 1))
        Q = random_generator(rng, m0)
        G = rng.normal(size=(m0, 1))
        F = G - invariant_measure(Q) @ G
        t0 = time.perf_counter()
        sol = solve_poisson(Q, F)
        diff = np.max(np.abs(poisson_integral_oracle(Q, F) - sol.phi))
        ratio = np.abs(sol.phi).max() / (ergodic_constant(Q) * np.abs(F).max())
        print(f"{m0},{sol.residual:.2e},{sol.centering:.2e},{diff:.2e},{ratio:.3f},"
              f"{time.perf_counter() - t0:.3f}")


if __name__ == "__main__":
    main()
