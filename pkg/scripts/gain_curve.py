"""Steady-state gain as a function of q/r, with the q_min floor marked.

Prints a table (or writes CSV with --csv) of p*, k* and the empirical late
gain of a constant-q filter run, so the closed form can be eyeballed
against simulation.
"""

import argparse
import csv
import sys

import numpy as np

from tokenkf import FilterConfig, FixedQ, StreamScenario, evaluate, generate
from tokenkf.diagnostics import gain_window_summary
from tokenkf.theory import gain_floor, steady_state


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r", type=float, default=1.0)
    ap.add_argument("--frames", type=int, default=600)
    ap.add_argument("--csv", action="store_true")
    args = ap.parse_args()

    cfg = FilterConfig(r=args.r, k_min=1e-4, k_max=0.9999)
    trace = generate(StreamScenario(n_tokens=8, dim=2, length=args.frames, measurement_std=args.r ** 0.5, seed=0))
    rows = []
    for ratio in np.geomspace(1e-3, 1e2, 16):
        q = float(ratio * args.r)
        ss = steady_state(q, args.r)
        late = gain_window_summary(evaluate(trace, FixedQ(q), cfg).diagnostics)["late_mean_gain"]
        rows.append((ratio, ss.p_star, ss.k_star, late))

    if args.csv:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["q_over_r", "p_star", "k_star", "simulated_late_gain"])
        w.writerows([[repr(float(x)) for x in row] for row in rows])
        return
    print(f"{'q/r':>10} {'p*':>10} {'k*':>10} {'sim k':>10}")
    for ratio, p, k, late in rows:
        print(f"{ratio:10.4g} {p:10.5f} {k:10.5f} {late:10.5f}")
    print(f"\ngain floor at q_min=0.02, r={args.r}: {gain_floor(0.02, args.r):.5f}")


if __name__ == "__main__":
    main()
