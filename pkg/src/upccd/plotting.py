"""Figures written next to the CSV/JSON outputs of the command-line tool.

Everything renders off-screen with the Agg backend.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_scan(param, upccd, hf, path, xlabel="U / t"):
    """Fidelity of the UpCCD and HF states across a scan."""
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    ax.plot(param, upccd, "o-", label="UpCCD")
    ax.plot(param, hf, "s--", label="HF")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fidelity with ground state")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_histograms(results, path, exact_energy=None):
    """Outcome histograms (energy axis) for each labelled QPE result."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    width = None
    for k, (label, res) in enumerate(results.items()):
        bins = np.array(sorted(res.histogram))
        energies = np.array([res.bin_energy(m) for m in bins])
        counts = np.array([res.histogram[m] for m in bins]) / res.shots
        if width is None:
            width = res.bin_energy(1) - res.bin_energy(0)
        ax.bar(energies + (k - 0.5) * 0.4 * width, counts, width=0.4 * width, label=label, alpha=0.85)
    if exact_energy is not None:
        ax.axvline(exact_energy, color="k", lw=0.8, ls=":", label="exact ground state")
    ax.set_xlabel("energy estimate")
    ax.set_ylabel("frequency")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_convergence(rows, path, exact_energy=None):
    """Estimate against register size; rows are dicts with method, initial, bits, energy_estimate."""
    fig, ax = plt.subplots(figsize=(4.6, 3.0))
    series = {}
    for r in rows:
        series.setdefault((r["method"], r["initial"]), []).append((r["bits"], r["energy_estimate"]))
    for (method, initial), pts in sorted(series.items()):
        x, y = zip(*sorted(pts))
        ax.plot(x, y, "o-" if method == "canonical" else "^--", ms=3, label=f"{method}, {initial}")
    if exact_energy is not None:
        ax.axhline(exact_energy, color="k", lw=0.8, ls=":")
    ax.set_xlabel("ancillas / bits")
    ax.set_ylabel("energy estimate")
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def plot_trace(trace, path):
    it = [r.iteration for r in trace]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(6.0, 2.6))
    a1.plot(it, [r.energy for r in trace])
    a1.set_xlabel("iteration")
    a1.set_ylabel("pCCD energy")
    a2.semilogy(it, [max(r.gradient_norm, 1e-16) for r in trace])
    a2.set_xlabel("iteration")
    a2.set_ylabel("max |gradient|")
    return _save(fig, path)
