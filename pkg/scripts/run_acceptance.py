"""Train (or reuse) every run the learning criteria need and print a table.

    python3 scripts/run_acceptance.py            # dense + sparse reach, 5 seeds
    python3 scripts/run_acceptance.py --only dense

Runs land in results/runs/<key>/ and are picked up by tests/test_acceptance.py.
"""

import argparse
import time

import numpy as np

from deep_icac.experiments import SEEDS, cached_run, cohens_d, load_summary, reach_config

GROUPS = {
    "dense": [("deep_cacla", "dense")],
    "sparse": [("deep_icac", "sparse"), ("deep_cacla", "sparse")],
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--only", choices=sorted(GROUPS))
    parser.add_argument("--seeds", type=int, nargs="*", default=list(SEEDS))
    args = parser.parse_args()
    groups = [args.only] if args.only else list(GROUPS)

    table = {}
    for group in groups:
        for alg, mode in GROUPS[group]:
            for seed in args.seeds:
                t0 = time.perf_counter()
                run = cached_run(reach_config(alg, mode, seed))
                s = load_summary(run)
                table.setdefault((alg, mode), []).append(s)
                print(
                    f"{alg:<11} {mode:<6} seed {seed}: final_eval_success={s['final_eval_success']:.2f}"
                    f" final_performance={s['final_performance']:.3f} learning_speed={s['learning_speed']:.3f}"
                    f" ({s['wall_seconds'] / 60:.1f} min, {time.perf_counter() - t0:.0f}s now) -> {run}",
                    flush=True,
                )

    print()
    for (alg, mode), rows in table.items():
        succ = [r["final_eval_success"] for r in rows]
        final = [r["final_performance"] for r in rows]
        print(f"{alg:<11} {mode:<6} success {np.mean(succ):.2f}+-{np.std(succ):.2f}  final_performance {np.mean(final):.3f}+-{np.std(final):.3f}")
    if ("deep_icac", "sparse") in table and ("deep_cacla", "sparse") in table:
        a = [r["final_performance"] for r in table[("deep_icac", "sparse")]]
        b = [r["final_performance"] for r in table[("deep_cacla", "sparse")]]
        print(f"sparse icac - cacla: {np.mean(a) - np.mean(b):+.3f}, Cohen's d {cohens_d(a, b):.2f}")


if __name__ == "__main__":
    main()
