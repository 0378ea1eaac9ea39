"""Run every study in sequence: the full experiment suite end to end.

Equivalent to calling the individual scripts with their defaults; use
``--quick`` to shrink every chain count for a fast smoke pass.
"""

from __future__ import annotations

import argparse
import sys

import integrator_controls
import optimizer_study
import prior_sensitivity
import run_reference_study
import step_size_sweep


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="desk-scale chain counts for a smoke pass")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    workers = ["--workers", str(args.workers)]
    n = (["--n-chains", "60"] if args.quick else []) + workers

    print("== reference study ==")
    run_reference_study.main(n)
    print("== step-size sweep ==")
    step_size_sweep.main(n)
    print("== prior sensitivity ==")
    prior_sensitivity.main((["--n-chains", "60"] if args.quick else []) + workers)
    print("== integrator controls ==")
    integrator_controls.main(
        (["--n-chains", "60", "--canham-chains", "24"] if args.quick else []) + workers
    )
    print("== optimizer study ==")
    optimizer_study.main((["--n-chains", "100"] if args.quick else []) + workers)
    print("all studies written under results/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
