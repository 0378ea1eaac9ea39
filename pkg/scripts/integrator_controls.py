"""Control studies: integrators that do not manufacture a second mode.

Two experiments, each on fresh data per chain: the affine law fitted
with its exact solution map, and the hump-shaped law fitted with the
adaptive integrator.  Both should come back unimodal with grand means
at the truth; a multimodal verdict here would mean the audit itself is
broken.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from odemodes.audit import (
    PER_CHAIN_DATASET,
    affine_study_config,
    canham_study_config,
    run_experiment,
)
from odemodes.integrators import analytic_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-chains", type=int, default=200)
    parser.add_argument("--canham-chains", type=int, default=100)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out-dir", default=os.path.join("results", "controls"))
    args = parser.parse_args(argv)

    affine = affine_study_config(
        "affine_analytic",
        analytic_config(),
        dataset_mode=PER_CHAIN_DATASET,
        n_chains=args.n_chains,
        out_dir=os.path.join(args.out_dir, "affine_analytic"),
    )
    canham = canham_study_config(
        n_chains=args.canham_chains,
        out_dir=os.path.join(args.out_dir, "canham_rk45"),
    )
    status = 0
    for cfg in (affine, canham):
        cfg = replace(cfg, n_workers=args.workers)
        result = run_experiment(cfg)
        verdict = result.verdict
        print(f"experiment {cfg.experiment}: multimodal={verdict.multimodal}"
              f"  grand_means={verdict.grand_means}"
              f"  failures={verdict.failure_fraction:.1%}")
        if verdict.multimodal:
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
