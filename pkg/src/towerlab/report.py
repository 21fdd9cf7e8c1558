"""Figure rendering for decay curves and fitted rates.

The CLI report path drops a PNG next to every delimited output on
request: measured points with error bars on log-log axes and, when a
fitted model is supplied, the fitted family overlaid on its window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimators import DecayEstimate
from .ratefit import RateModel, r_of_n


def decay_figure(estimate: DecayEstimate, model: RateModel | None = None,
                 out_path=None, title: str | None = None):
    """Render one decay curve (and optional fit) to a file.

    Returns the output path.  Zero values are shown at the plot floor as
    open markers since log axes cannot carry them.
    """
    ns = estimate.ns().astype(float)
    vals = estimate.values()
    errs = estimate.stderrs()

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    pos = vals > 0
    if np.any(pos):
        ax.errorbar(ns[pos], vals[pos], yerr=errs[pos], fmt="o", ms=4,
                    lw=1, capsize=2, label="measured")
        floor = vals[pos].min() * 0.5
    else:
        floor = 1e-12
    if np.any(~pos):
        ax.plot(ns[~pos], np.full((~pos).sum(), floor), "o", mfc="none",
                ms=4, label="zero (at floor)")

    if model is not None:
        grid = np.geomspace(ns.min(), ns.max(), 200)
        curve = r_of_n(model, grid)
        # anchor the scale-free family at the first fitted point
        if np.any(pos):
            n0 = ns[pos][0]
            curve = curve * vals[pos][0] / r_of_n(model, n0)
        if model.kind == "polynomial":
            label = f"fit n^-{model.beta:.3g}"
        else:
            label = f"fit exp(-{model.tau:.3g} n^{model.omega:.3g})"
        ax.plot(grid, curve, "-", lw=1.2, label=label)

    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    kind = estimate.meta.get("kind", "value")
    ax.set_ylabel(kind)
    if title is None:
        sys_desc = estimate.meta.get("system", {})
        title = f"{kind} — {sys_desc.get('type', '?')} ({sys_desc.get('kind', '')})"
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    if out_path is None:
        out_path = "decay.png"
    fig.savefig(out_path, dpi=140)
    plt.close(fig)
    return out_path
