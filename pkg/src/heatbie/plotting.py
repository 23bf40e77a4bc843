"""Figures written next to the CSV/JSON outputs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_convergence(rows, path, title: str | None = None):
    """Log-log error against time step, one line per problem."""
    fig, ax = plt.subplots(figsize=(5, 4))
    problems = sorted({r.problem for r in rows})
    for name in problems:
        sel = [r for r in rows if r.problem == name]
        ax.loglog([1.0 / r.N_t for r in sel], [r.error_sup for r in sel], "o-", label=name)
    ax.set_xlabel("1 / N_t")
    ax.set_ylabel("sup error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_residual_history(history, path, tol: float | None = None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    h = np.maximum(np.asarray(history, dtype=float), 1e-300)
    ax.semilogy(np.arange(len(h)), h, ".-")
    if tol is not None:
        ax.axhline(tol, color="k", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("|x - T(x)|")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_density(values, times, path, title: str = ""):
    """Heat map of a density over (theta, t)."""
    values = np.asarray(values)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    extent = [0.0, 2 * np.pi, times[0], times[-1]]
    im = ax.imshow(values, origin="lower", aspect="auto", extent=extent, cmap="RdBu_r")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("theta")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
