"""Optional figures rendered from the evaluation tables (``report --plots``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .storage import read_table


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    # no Software/date metadata so repeated renders stay byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})


def render_report_figures(run_root, out_dir) -> list[str]:
    """Render every figure whose table exists; returns paths relative to ``run_root``."""
    plt = _mpl()
    run_root, out_dir = Path(run_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ev = run_root / "evaluation"
    written = []

    def done(fig, name):
        path = out_dir / name
        _save(fig, path)
        plt.close(fig)
        written.append(str(path.relative_to(run_root)))

    cal = ev / "calibration.csv"
    if cal.is_file():
        _, rows = read_table(cal)
        a = np.array(rows, dtype=float)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(a[:, 2], a[:, 4], yerr=a[:, 5], fmt="o-", capsize=2)
        ax.set_xlabel("expected return")
        ax.set_ylabel("mortality proportion")
        done(fig, "calibration.png")

    for path in sorted(ev.glob("action_histogram_*.csv")):
        _, rows = read_table(path)
        counts = np.zeros((5, 5))
        for i, j, c in rows:
            counts[int(i), int(j)] = float(c)
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(counts, origin="lower", cmap="viridis")
        ax.set_xlabel("vasopressor bin")
        ax.set_ylabel("IV fluid bin")
        fig.colorbar(im, ax=ax)
        done(fig, path.stem + ".png")

    for path in sorted(ev.glob("dosage_diff_*.csv")):
        _, rows = read_table(path)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
        for ax, drug in zip(axes, ("iv", "vp")):
            sel = [r for r in rows if r[0] == drug]
            diff = np.array([int(r[1]) for r in sel])
            mort = np.array([float(r[4]) for r in sel])
            ax.bar(diff, np.nan_to_num(mort))
            ax.set_xlabel(f"{drug} recommended - logged bin")
        axes[0].set_ylabel("mortality proportion")
        done(fig, path.stem + ".png")

    pca = ev / "latent_pca.csv"
    if pca.is_file():
        _, rows = read_table(pca)
        a = np.array(rows, dtype=float)
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for label, colour in ((0.0, "tab:blue"), (1.0, "tab:red")):
            m = a[:, 2] == label
            ax.scatter(a[m, 0], a[m, 1], s=2, c=colour, label="died" if label else "survived")
        ax.set_xlabel("PC1")
        ax.set_ylabel("PC2")
        ax.legend(markerscale=4)
        done(fig, "latent_pca.png")
    return written
