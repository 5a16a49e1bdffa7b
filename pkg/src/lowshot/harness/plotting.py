"""Figures: PSNR-vs-ratio curves from a results CSV, colorization grids."""

import csv
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sweep import HEADER, ResultRow, aggregate  # noqa: E402

RC = {
    "svg.hashsalt": "lowshot",
    "svg.fonttype": "path",
    "path.simplify": False,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


class PlotInputError(ValueError):
    pass


def read_results(path):
    """Strict CSV reader for plotting: any malformed line is an error."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise PlotInputError(f"{path}: empty file")
        if header != HEADER:
            raise PlotInputError(f"{path}:1: unexpected header {header}")
        for row in reader:
            if not row:
                continue
            try:
                rows.append(ResultRow.parse(row))
            except ValueError as exc:
                raise PlotInputError(f"{path}:{reader.line_num}: {exc}") from None
    if not rows:
        raise PlotInputError(f"{path}: no data rows")
    return rows


def curve_label(method, shots, loss):
    if method == "untrained":
        return "untrained"
    return f"{method} S={shots} ({loss})"


def curve_id(method, shots, loss):
    return re.sub(r"[^A-Za-z0-9_-]", "", f"curve-{method}-S{shots}-{loss}")


def curves(rows, loss=None):
    """``{(method, S, loss): (ratios, means, stds)}`` sorted by ratio."""
    out = {}
    for g in aggregate(rows):
        if loss is not None and g["method"] != "untrained" and g["loss"] != loss:
            continue
        out.setdefault((g["method"], g["S"], g["loss"]), []).append(
            (g["ratio"], g["mean_psnr"], g["std_psnr"]))
    return {k: tuple(np.array(c) for c in zip(*sorted(v))) for k, v in sorted(out.items())}


def emit_plot(csv_path, out_path, loss=None, title=None, xlabel="compression ratio m/n",
              ylabel="mean PSNR (dB)", png=False):
    """PSNR vs compression ratio, one line per (method, S, loss), +-1 std error bars.

    Writes SVG (deterministic for a given CSV) and optionally a PNG next to it.
    Each curve's line is tagged with an SVG group id ``curve-...``.
    """
    rows = read_results(csv_path)
    data = curves(rows, loss)
    if not data:
        raise PlotInputError(f"{csv_path}: nothing to plot for loss={loss}")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        cmap = plt.get_cmap("viridis")
        shots = sorted({k[1] for k in data if k[0] != "untrained"})
        for (method, s, lo), (x, mean, std) in data.items():
            if method == "untrained":
                color, style = "0.3", "--"
            else:
                color = cmap(shots.index(s) / max(1, len(shots) - 1) * 0.85)
                style = "-" if lo == "l2" else ":"
            ax.errorbar(x, mean, yerr=std, color=color, linestyle="none", capsize=2, lw=0.8)
            (line,) = ax.plot(x, mean, color=color, linestyle=style, lw=1.4,
                              label=curve_label(method, s, lo))
            line.set_gid(curve_id(method, s, lo))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        if png:
            fig.savefig(os.path.splitext(out_path)[0] + ".png", dpi=150)
        plt.close(fig)
    return out_path


def svg_curves(svg_text):
    """``{gid: vertex_count}`` for every curve group in an SVG written by :func:`emit_plot`."""
    found = {}
    for m in re.finditer(r'<g id="(curve-[^"]+)">\s*<path d="([^"]*)"', svg_text):
        found[m.group(1)] = len(re.findall(r"[ML]", m.group(2)))
    return found


def to_display(x):
    return np.clip((np.asarray(x).transpose(1, 2, 0) + 1) / 2, 0, 1)


def render_grid(grid, row_labels, annotations, out_path):
    """Save a rows x cols image grid; ``annotations[r][c]`` (or None) is shown as a title."""
    nrows, ncols = len(grid), len(grid[0])
    with plt.rc_context({"font.size": 7}):
        fig, axes = plt.subplots(nrows, ncols, figsize=(1.2 * ncols + 0.8, 1.3 * nrows),
                                 squeeze=False)
        for r in range(nrows):
            for c in range(ncols):
                ax = axes[r][c]
                ax.imshow(to_display(grid[r][c]), interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if annotations[r][c] is not None:
                    ax.set_title(f"{annotations[r][c]:.2f} dB", fontsize=7)
            axes[r][0].set_ylabel(row_labels[r], fontsize=7)
        fig.tight_layout()
        fig.savefig(out_path, dpi=150, metadata={"Software": None})
        plt.close(fig)
    return out_path
