"""Compare update policies around an injected scene transition.

For each policy and seed: pre-transition RMSE, frames needed to come back
within 2x of it, late-window gain and final cumulative RMSE. Averages are
printed per policy.
"""

import argparse

import numpy as np

from tokenkf import (
    AdaptiveR, Filt3rFull, FilterConfig, FixedBeta, FixedQ, NoEmaNorm, Overwrite, PeriodicReset, ResetP,
    StreamScenario, Transition, evaluate, generate,
)
from tokenkf.diagnostics import gain_window_summary, transition_timeline

POLICIES = [Filt3rFull(), Overwrite(), FixedBeta(0.05), FixedBeta(0.01), FixedQ(), ResetP(), NoEmaNorm(),
            AdaptiveR(), PeriodicReset(100)]


def recovery_frames(rmse, frame, baseline=20):
    pre = rmse[frame - 1 - baseline:frame - 1].mean()
    below = np.flatnonzero(rmse[frame:] <= 2 * pre)
    return pre, (int(below[0]) + 1 if below.size else None)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--length", type=int, default=500)
    ap.add_argument("--frame", type=int, default=250)
    ap.add_argument("--magnitude", type=float, default=10.0)
    args = ap.parse_args()

    cfg = FilterConfig()
    stats = {p.label(): [] for p in POLICIES}
    for seed in range(args.seeds):
        sc = StreamScenario(n_tokens=64, dim=3, length=args.length, measurement_std=1.0, n_image_tokens=16,
                            transitions=(Transition(args.frame, args.magnitude),), seed=seed)
        trace = generate(sc)
        for p in POLICIES:
            rep = evaluate(trace, p, cfg)
            pre, back = recovery_frames(rep.rmse, args.frame)
            late = gain_window_summary(rep.diagnostics)["late_mean_gain"]
            hit = transition_timeline(rep.diagnostics).contains(args.frame)
            stats[p.label()].append((pre, back, late, rep.cumulative_rmse[-1], hit))

    print(f"{'policy':<40} {'pre rmse':>9} {'recover':>8} {'late k':>8} {'cum rmse':>9} {'detected':>8}")
    for label, rows in stats.items():
        pre = np.mean([r[0] for r in rows])
        backs = [r[1] for r in rows if r[1] is not None]
        back = f"{np.mean(backs):.1f}" if len(backs) == len(rows) else f"{len(backs)}/{len(rows)}"
        print(f"{label:<40} {pre:9.4f} {back:>8} {np.mean([r[2] for r in rows]):8.4f} "
              f"{np.mean([r[3] for r in rows]):9.4f} {sum(r[4] for r in rows):>5}/{len(rows)}")


if __name__ == "__main__":
    main()
