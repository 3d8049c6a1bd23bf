"""Evaluate F_tau on one spectrum across every branch, then check the hypotheses at a few angles.

    python3 demos/operator_tour.py
"""

import math

import numpy as np

from lagflow.conditions import ConeRegion, theoretical_bounds, verify_all
from lagflow.operator import dual_eval, eval_spectrum, grad_spectrum, invert_envelope, make_operator


def main():
    s = np.array([0.5, 3.0])
    print(f"spectrum {s.tolist()}")
    print(f"{'tau':>8} {'branch':>11} {'F':>12} {'F*':>12} {'dF/dl1':>10} {'dF/dl2':>10} {'t1':>8}")
    for tau in (0.0, 0.3, math.pi / 4, 1.2, math.pi / 2):
        op = make_operator(tau)
        F = eval_spectrum(op, s)
        g = grad_spectrum(op, s)
        t1 = invert_envelope(op, F, s[0], s[1], n=2)
        print(f"{tau:8.4f} {op.branch.name:>11} {F:12.6f} {dual_eval(op, s):12.6f} "
              f"{g[0]:10.5f} {g[1]:10.5f} {t1:8.5f}")

    print("\ntrace bounds on mu1 = 1, mu2 = 2, n = 2 (lower1, upper1, lower2, upper2):")
    for tau in (math.pi / 6, 3 * math.pi / 8, math.pi / 2):
        b = theoretical_bounds(make_operator(tau), 1.0, 2.0, 2)
        print(f"  tau={tau:.4f}: " + ", ".join("none" if v is None else f"{v:.5f}" for v in b))

    print("\nsampled hypothesis checks (2000 samples, n = 3):")
    for tau in (0.0, math.pi / 4, 1.3):
        r = verify_all(make_operator(tau), ConeRegion(1.0, 2.0, 3), samples=2000, seed=0)
        flags = " ".join(f"{k}={'ok' if c['passed'] else 'FAIL'}" for k, c in r["checks"].items())
        print(f"  tau={tau:.4f}: {flags}")


if __name__ == "__main__":
    main()
