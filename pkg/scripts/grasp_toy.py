"""Deep CACLA vs Deep ICAC vs DDPG on the 1-DoF grasp toy (sparse reward).

    python3 scripts/grasp_toy.py --episodes 1000 --seeds 0 1 2

Writes one run directory per algorithm/seed under results/grasp/.
"""

import argparse
from pathlib import Path

import numpy as np

from deep_icac.config import ExperimentConfig
from deep_icac.harness import run_training, summarize


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--episodes", type=int, default=1000)
    parser.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    parser.add_argument("--reward", choices=["dense", "sparse"], default="sparse")
    parser.add_argument("--out", default="results/grasp")
    args = parser.parse_args()

    for alg in ("deep_cacla", "deep_icac", "ddpg"):
        finals, successes = [], []
        for seed in args.seeds:
            cfg = ExperimentConfig().with_run(
                algorithm=alg, env="grasp_toy", reward_mode=args.reward, episodes=args.episodes, master_seed=seed
            )
            log = run_training(cfg, out_dir=Path(args.out) / f"{alg}_{args.reward}_s{seed}")
            finals.append(summarize(log)["final_performance"])
            successes.append(log.evals[-1].success_rate if log.evals else float("nan"))
            print(f"{alg} seed {seed}: final_performance {finals[-1]:.3f} eval success {successes[-1]:.2f}", flush=True)
        print(f"{alg}: final_performance {np.mean(finals):.3f}+-{np.std(finals):.3f}, eval success {np.mean(successes):.2f}")


if __name__ == "__main__":
    main()
