"""Compare HSS, ST and HSST on a held-out cloud-free scene under identical training budgets.

    python scripts/run_ablation.py --steps 1000 --looks 16 --change 0.2
"""

import argparse
import json
from dataclasses import asdict, replace

import torch

from hetfuse.experiments import AblationExperiment, run_ablation


def main():
    base = AblationExperiment()
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=base.steps)
    p.add_argument("--lr", type=float, default=base.lr)
    p.add_argument("--lam", type=float, default=base.lam, help="content loss weight")
    p.add_argument("--change", type=float, default=base.change_fraction)
    p.add_argument("--looks", type=int, default=base.speckle_looks)
    p.add_argument("--train-seeds", default=",".join(map(str, base.train_seeds)))
    p.add_argument("--test-seed", type=int, default=base.test_seed)
    p.add_argument("--seed", type=int, default=base.seed)
    a = p.parse_args()
    torch.set_num_threads(1)
    exp = replace(base, steps=a.steps, lr=a.lr, lam=a.lam, change_fraction=a.change, speckle_looks=a.looks,
                  train_seeds=tuple(int(s) for s in a.train_seeds.split(",")), test_seed=a.test_seed, seed=a.seed)
    res = run_ablation(exp)
    print(json.dumps({"experiment": asdict(exp), "psnr": res.psnr, "psnr_bicubic": res.psnr_bicubic,
                      "hsst_margin_db": res.margin("hsst"), "seconds": res.seconds}, indent=2))


if __name__ == "__main__":
    main()
