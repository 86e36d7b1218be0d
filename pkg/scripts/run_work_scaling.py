#!/usr/bin/env python3
"""Work scaling: per-level work units of one full multigrid run, the
work-per-dof ratios, and the total-to-finest comparison behind the
linear-complexity claim.

    python scripts/run_work_scaling.py --zeta 1 --levels 5
"""

import argparse
import sys

from fmgeig.harness import config_from_dict, report_to_string, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--zeta", type=float, default=1.0)
    ap.add_argument("--divisions", type=int, default=8)
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    cfg = config_from_dict({
        "problem": {"dim": args.dim, "zeta": args.zeta},
        "mesh": {"divisions_per_axis": args.divisions, "n_levels": args.levels},
        "study": "work-scaling",
        "output": args.out,
    })
    report = run_experiment(cfg)
    sys.stdout.write(report_to_string(report))
    work = report.column("work_units")
    dofs = report.column("n_dofs")
    for row, (w, n) in enumerate(zip(work, dofs), start=1):
        print(f"# level {row}: work/dof = {w / n:.1f}")
    print(f"# total work / finest-level work = {sum(work) / work[-1]:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
