#!/usr/bin/env python3
"""Run the desk kappa-sweep and render its two figures."""
import pathlib
import sys

from medianflow.cli import main as medianflow_main

HERE = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    rc = medianflow_main(["sweep", str(HERE / "configs" / "desk_sweep.cfg"), *sys.argv[1:]])
    if rc == 0:
        try:
            from plotkit.figures import FigureSpec, render

            out = HERE / "out" / "desk_sweep"
            render(FigureSpec(kind="lambda_sweep", inputs=[str(out / "sweep.csv")],
                              summary=str(out / "sweep_summary.json"),
                              output=str(out / "lambda_sweep.png"), reference_slopes=[1.0]))
            render(FigureSpec(kind="batchelor", inputs=[str(out / "sweep.csv")],
                              summary=str(out / "sweep_summary.json"),
                              output=str(out / "batchelor.png")))
            print("figures written to", out)
        except ImportError:
            print("plotkit not installed; skipping figures")
    sys.exit(rc)
