"""Figure rendering for medianflow outputs.

Four figure kinds, all drawn deterministically (fixed style, no timestamps,
stripped PNG metadata) so identical inputs give identical image bytes:

    lambda_sweep  negative Lyapunov estimate vs kappa, log-log, with the
                  upstream-fitted slope annotated and reference slopes drawn
    batchelor     filament scale vs kappa, log-log, sqrt(kappa) and kappa^2
                  reference lines
    median_trace  spectral median (and 2-quantile) trajectories vs time
    spectrum      shell energy spectrum of an MFLD snapshot

Fits are performed upstream by medianflow; this package only draws.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .schemas import read_csv, read_mfld, read_summary, shell_spectrum

FIGURE_KINDS = ("lambda_sweep", "batchelor", "median_trace", "spectrum")

_STYLE = {
    "figure.figsize": (6.0, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    summary: str | None = None          # sweep summary JSON (lambda_sweep)
    reference_slopes: list = field(default_factory=list)
    title: str | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"figure kind must be one of {FIGURE_KINDS}, got {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input path is required")


def _reference_lines(ax, x, y_anchor, slopes, labels=None):
    xs = np.array([min(x), max(x)])
    for i, s in enumerate(slopes):
        ys = y_anchor * (xs / xs[0]) ** s
        label = labels[i] if labels else f"slope {s:g}"
        ax.plot(xs, ys, "--", lw=1.0, label=label)


def _render_lambda_sweep(spec: FigureSpec, ax):
    data = read_csv(spec.inputs[0], expected_kind="sweep")
    kappa = data["kappa"]
    neg_lam = -data["lambda_hat"]
    ax.errorbar(kappa, neg_lam, yerr=data["stderr"], fmt="o", ms=4, capsize=2,
                label="-lambda_hat")
    slope_text = ""
    if spec.summary:
        summary = read_summary(spec.summary)
        fit = summary["slopes"]["neg_lambda_vs_kappa"]
        slope_text = f"fitted slope = {fit['slope']:.4g}"
        xs = np.array([kappa.min(), kappa.max()])
        ys = neg_lam[np.argmin(kappa)] * (xs / kappa.min()) ** fit["slope"]
        ax.plot(xs, ys, "-", lw=1.2, label=slope_text)
    _reference_lines(ax, kappa, neg_lam[np.argmin(kappa)], spec.reference_slopes)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("kappa")
    ax.set_ylabel("-lambda_hat")
    if slope_text:
        ax.annotate(slope_text, xy=(0.05, 0.92), xycoords="axes fraction")
    ax.legend(loc="lower right", fontsize=8)


def _render_batchelor(spec: FigureSpec, ax):
    data = read_csv(spec.inputs[0], expected_kind="sweep")
    kappa = data["kappa"]
    ell = data["mean_filament"]
    ax.plot(kappa, ell, "o-", ms=4, label="mean filament scale")
    i0 = int(np.argmin(kappa))
    slopes = spec.reference_slopes or [0.5, 2.0]
    labels = [f"kappa^{s:g}" for s in slopes]
    _reference_lines(ax, kappa, ell[i0], slopes, labels)
    if spec.summary:
        summary = read_summary(spec.summary)
        fit = summary["slopes"]["filament_vs_kappa"]
        ax.annotate(f"fitted slope = {fit['slope']:.4g}", xy=(0.05, 0.92),
                    xycoords="axes fraction")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("kappa")
    ax.set_ylabel("filament scale")
    ax.legend(loc="lower right", fontsize=8)


def _render_median_trace(spec: FigureSpec, ax):
    for path in spec.inputs:
        data = read_csv(path, expected_kind="timeseries")
        ax.plot(data["t"], data["median"], lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("spectral median M(rho_t)")


def _render_spectrum(spec: FigureSpec, ax):
    for path in spec.inputs:
        n, k1, k2, coeff = read_mfld(path)
        shells, energy = shell_spectrum(k1, k2, coeff, n=n)
        mask = (shells > 0) & (energy > 0)
        ax.plot(shells[mask], energy[mask], "o-", ms=3, label=f"n={n}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("|k| shell")
    ax.set_ylabel("shell energy")
    ax.legend(loc="lower left", fontsize=8)


_RENDERERS = {
    "lambda_sweep": _render_lambda_sweep,
    "batchelor": _render_batchelor,
    "median_trace": _render_median_trace,
    "spectrum": _render_spectrum,
}


def render(spec: FigureSpec) -> str:
    """Draw the figure described by spec; returns the output path."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        _RENDERERS[spec.kind](spec, ax)
        if spec.title:
            ax.set_title(spec.title)
        fig.tight_layout()
        fig.savefig(spec.output, metadata={"Software": None})
        plt.close(fig)
    return spec.output


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="plotkit-render")
    p.add_argument("kind", choices=FIGURE_KINDS)
    p.add_argument("output")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--summary", default=None, help="sweep summary JSON for fitted slopes")
    p.add_argument("--reference-slope", type=float, action="append", default=[])
    p.add_argument("--title", default=None)
    args = p.parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        inputs=args.inputs,
        output=args.output,
        summary=args.summary,
        reference_slopes=args.reference_slope,
        title=args.title,
    )
    render(spec)
    print(spec.output)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
