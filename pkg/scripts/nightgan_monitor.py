#!/usr/bin/env python3
"""Run the stage monitor on a synthetic run shaped like the NightGAN car AP.

The phi targets per stage are the car AP values 11, 1, 1, 17, 48 scaled to
[0, 1]. This uses the table only as a shape template for the guidance
policy; it is not a claim about the real phi values.

    python scripts/nightgan_monitor.py [--out DIR] [--seed N]
"""

import argparse
import tempfile
from pathlib import Path

from restorex.artifact_io import read_manifest_file
from restorex.fixtures import nightgan_shape_spec, generate
from restorex.quality_monitor import GuidancePolicy, improvement_summary, trajectory
from restorex.similarity import default_table


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    out = args.out or Path(tempfile.mkdtemp(prefix="nightgan-"))
    manifest = generate(nightgan_shape_spec(seed=args.seed), out)
    traj = trajectory(read_manifest_file(manifest), default_table(), GuidancePolicy())

    print(f"fixture: {out}")
    deltas = [None] + traj.deltas
    for q, d, decision in zip(traj.stages, deltas, traj.decisions):
        dtxt = "" if d is None else f"{d:+.2f}"
        print(f"stage {q.stage_id}: phi={q.phi:.2f} dphi={dtxt:>6} {decision}")
    print(f"rollback: {traj.rollback_to if traj.rollback_to is not None else 'none'}")

    # percent rise in mAP between input and restored images per technique
    summary = improvement_summary([1.0, 1.0, 1.0, 1.0], [1.0, 1.4, 3.75, 5.0])
    print(f"mAP rise per technique: {summary.percents}, mean {summary.mean}")


if __name__ == "__main__":
    main()
