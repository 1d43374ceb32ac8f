"""Figure rendering for run artifacts (file output only, Agg backend).

Both figures take the same per-site row dict that feeds the CSV writer, so
QMC reports and exact-oracle profiles render identically (the oracle just
has zero-length error bars).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _sites(rows):
    return np.arange(len(rows["n_b"]))


def save_profile_figure(rows, path, title="", plateaus=None):
    """Density profiles of both species and the total, with the mixture
    compressibility on a twin axis; detected plateaus shaded."""
    x = _sites(rows)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.errorbar(x, rows["n_b"], yerr=rows["n_b_err"], fmt="o-", ms=3, lw=1,
                color="tab:blue", label=r"$n_b$")
    ax.errorbar(x, rows["n_f"], yerr=rows["n_f_err"], fmt="s-", ms=3, lw=1,
                color="tab:red", label=r"$n_f$")
    ax.errorbar(x, rows["n_tot"], yerr=rows["n_tot_err"], fmt="-", lw=1.8,
                color="black", label=r"$n_b + n_f$")
    ax.axhline(1.0, color="gray", lw=0.6, ls=":")
    if plateaus:
        for p in plateaus:
            ax.axvspan(p["start"] - 0.5, p["end"] + 0.5, color="gold", alpha=0.18)
    ax2 = ax.twinx()
    ax2.errorbar(x, rows["kappa_bf"], yerr=rows["kappa_bf_err"], fmt="--", lw=1.2,
                 color="tab:green", label=r"$\kappa_{bf}$")
    ax2.set_ylabel(r"$\kappa_{bf}$", color="tab:green")
    ax2.tick_params(axis="y", labelcolor="tab:green")
    ax2.set_ylim(bottom=0)
    ax.set_xlabel("site")
    ax.set_ylabel("density")
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_compressibility_figure(rows, path, title=""):
    """Per-species and total local compressibility profiles."""
    x = _sites(rows)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.errorbar(x, rows["kappa_b"], yerr=rows["kappa_b_err"], fmt="o-", ms=3, lw=1,
                color="tab:blue", label=r"$\kappa_b$")
    ax.errorbar(x, rows["kappa_f"], yerr=rows["kappa_f_err"], fmt="s-", ms=3, lw=1,
                color="tab:red", label=r"$\kappa_f$")
    ax.errorbar(x, rows["kappa_bf"], yerr=rows["kappa_bf_err"], fmt="--", lw=1.4,
                color="tab:green", label=r"$\kappa_{bf}$")
    ax.set_xlabel("site")
    ax.set_ylabel("local compressibility")
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
