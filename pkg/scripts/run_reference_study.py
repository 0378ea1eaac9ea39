"""Run the reference bimodality study: fixed step h=0.5, shared data.

Writes the full audit trail (chain table, mixture report, verdict,
plot data) under the output directory and exits with the audit's
status code, so shell pipelines can branch on the flag.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from odemodes.audit import affine_study_config, run_experiment
from odemodes.cli import MULTIMODAL_EXIT
from odemodes.integrators import rk4_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-chains", type=int, default=200)
    parser.add_argument("--h", type=float, default=0.5)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out-dir", default=None)
    args = parser.parse_args(argv)

    cfg = affine_study_config(
        f"affine_rk4_h{args.h:g}".replace(".", ""),
        rk4_config(args.h),
        n_chains=args.n_chains,
        out_dir=args.out_dir,
    )
    cfg = replace(cfg, n_workers=args.workers)
    result = run_experiment(cfg)
    verdict = result.verdict
    print(f"experiment {cfg.experiment}: multimodal={verdict.multimodal}")
    print(f"  components: {verdict.n_components}  weights: {verdict.weights}")
    for summary in result.summaries:
        print(f"  mode {summary.component}: mean={summary.mean}"
              f"  nearest_root={summary.nearest_root}")
    print(f"  artifacts: {cfg.resolved_out_dir}")
    return MULTIMODAL_EXIT if verdict.multimodal else 0


if __name__ == "__main__":
    sys.exit(main())
