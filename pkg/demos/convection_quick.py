"""Train the hybrid solver on the convection equation.

Runs the ``convection-quick`` preset with a width-64 network so it finishes
in about a minute, then reloads the checkpoint and evaluates it
again. Artifacts land in ``$FEMPINN_OUT/demo-convection`` (default ``runs/``).

    python3 demos/convection_quick.py [iterations]
"""

import sys

from fempinn.bench import evaluate, output_root, run
from fempinn.presets import preset

if __name__ == "__main__":
    iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
    config = preset("convection-quick").with_values(
        network={"width": 64, "depth": 4}, optimizer={"iterations": iterations},
        evaluation={"grid": (128, 51)}, run={"name": "demo-convection"})
    report = run(config, out_dir=output_root() / config.run.name,
                 on_progress=lambda k, seg: print(f"segment {k} done, final loss {seg.history[-1]['loss']:.3e}"))
    print(f"relative L2 {report.relative_l2:.3e} after {iterations} iterations ({report.wall_clock:.0f} s)")
    print(f"reloaded checkpoint gives {evaluate(report.checkpoints[0]):.3e}")
    print(f"artifacts in {report.out_dir}")
