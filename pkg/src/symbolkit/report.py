"""Experiment reports: delimited tables plus rendered figures.

Every report writes a CSV and, unless asked for csv only, a matplotlib
figure next to it.  Figures are SVG with a pinned hash salt and no
timestamp metadata, so re-rendering a report reproduces files byte for
byte.
"""

from __future__ import annotations

import csv
import os

import matplotlib
import numpy as np

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "symbolkit"

import matplotlib.pyplot as plt  # noqa: E402

FORMATS = ("csv", "svg", "both")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return v


def write_csv(path, header: list[str], rows) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return os.fspath(path)


def _save_fig(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return os.fspath(path)


def _bar(ax, names, values, ylabel):
    ax.bar(range(len(values)), values, color="#4878a8")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_ylim(0.0, 1.05)
    ax.grid(axis="y", alpha=0.3)


class Reporter:
    """Writes one experiment's tables and figures under a directory."""

    def __init__(self, out_dir, fmt: str = "both"):
        if fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
        self.out_dir = os.fspath(out_dir)
        self.fmt = fmt
        os.makedirs(self.out_dir, exist_ok=True)
        self.written: list[str] = []

    def _path(self, name):
        return os.path.join(self.out_dir, name)

    def table(self, name: str, header: list[str], rows) -> str | None:
        if self.fmt == "svg":
            return None
        p = write_csv(self._path(name + ".csv"), header, rows)
        self.written.append(p)
        return p

    def figure(self, name: str, draw) -> str | None:
        if self.fmt == "csv":
            return None
        fig = draw()
        p = _save_fig(fig, self._path(name + ".svg"))
        self.written.append(p)
        return p

    # ---- experiment-shaped reports -------------------------------------

    def accuracy_by_layer(self, name: str, rows: list[dict]):
        """rows: {layer, split, n, accuracy}; bar chart over layers."""
        self.table(name, ["layer", "split", "n", "accuracy"],
                   [(r["layer"], r["split"], r["n"], r["accuracy"]) for r in rows])

        def draw():
            fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
            _bar(ax, [f"L{r['layer']}" for r in rows],
                 [r["accuracy"] for r in rows], "accuracy")
            ax.set_title(name.replace("_", " "))
            return fig
        if rows:
            self.figure(name, draw)

    def auroc_by_layer(self, name: str, rows: list[dict]):
        """rows: {score, auroc, n_pos, n_neg}; score is 'l<k>' or 'norm'."""
        self.table(name, ["score", "auroc", "n_pos", "n_neg"],
                   [(r["score"], "" if r["auroc"] is None else r["auroc"],
                     r["n_pos"], r["n_neg"]) for r in rows])
        numeric = [r for r in rows if isinstance(r["auroc"], (int, float))]

        def draw():
            fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
            _bar(ax, [r["score"] for r in numeric],
                 [r["auroc"] for r in numeric], "AUROC")
            ax.axhline(0.5, color="gray", lw=0.8, ls="--")
            ax.set_title(name.replace("_", " "))
            return fig
        if numeric:
            self.figure(name, draw)

    def ess_scatter(self, name: str, groups: dict[str, np.ndarray],
                    layers: list[int]):
        """Pairwise 2-D projections of per-layer ESS point clouds.

        groups maps a condition name to an (n, len(layers)) array.
        """
        header = ["condition"] + [f"ess_l{l}" for l in layers]
        rows = [[cond] + list(map(float, row))
                for cond, arr in sorted(groups.items()) for row in arr]
        self.table(name, header, rows)

        pairs = [(i, j) for i in range(len(layers)) for j in range(len(layers))
                 if i < j]

        def draw():
            fig, axes = plt.subplots(1, max(len(pairs), 1),
                                     figsize=(3.2 * max(len(pairs), 1), 3.2),
                                     constrained_layout=True, squeeze=False)
            markers = {"in_dist": "o", "ood": "^", "clean": "o",
                       "adversarial": "^"}
            for ax, (i, j) in zip(axes[0], pairs):
                for cond, arr in sorted(groups.items()):
                    ax.scatter(arr[:, i], arr[:, j], s=8, alpha=0.6,
                               marker=markers.get(cond, "o"), label=cond)
                ax.set_xlabel(f"ESS L{layers[i]}")
                ax.set_ylabel(f"ESS L{layers[j]}")
            axes[0][0].legend(loc="best", fontsize=8)
            return fig
        if pairs and groups:
            self.figure(name, draw)

    def accuracy_grid(self, name: str, layer_ids: list[int], k_values: list[int],
                      grid: np.ndarray):
        """Fixed-k sweep table: one row per layer, one column per k."""
        header = ["layer"] + [str(k) for k in k_values]
        rows = [[l] + list(map(float, grid[i])) for i, l in enumerate(layer_ids)]
        self.table(name, header, rows)

        def draw():
            fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
            for i, l in enumerate(layer_ids):
                ax.plot(k_values, grid[i], marker="o", label=f"L{l}")
            ax.set_xlabel("number of symbols")
            ax.set_ylabel("accuracy")
            ax.set_ylim(0.0, 1.05)
            ax.legend(fontsize=8)
            ax.grid(alpha=0.3)
            return fig
        if len(layer_ids) and len(k_values):
            self.figure(name, draw)

    def trial_accuracies(self, name: str, accuracies: np.ndarray,
                         chance: float | None = None):
        """Per-trial accuracy table plus a histogram."""
        self.table(name, ["trial", "accuracy"],
                   [(t, a) for t, a in enumerate(accuracies)])

        def draw():
            fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
            ax.hist(accuracies, bins=20, color="#4878a8", edgecolor="white")
            if chance is not None:
                ax.axvline(chance, color="red", lw=1.0, ls="--", label="chance")
                ax.legend(fontsize=8)
            ax.set_xlabel("accuracy")
            ax.set_ylabel("trials")
            return fig
        if len(accuracies):
            self.figure(name, draw)
