"""CSV and SVG emission with all-or-nothing writes."""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "exitwise"
plt.rcParams["svg.fonttype"] = "none"


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".9g")
    return str(value)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Outputs:
    """Collects output files in memory and writes them in one go.

    Nothing touches the output directory until :meth:`commit`; each file
    is written to a temporary name and renamed into place.
    """

    def __init__(self, directory):
        self.directory = directory
        self.files: dict[str, bytes] = {}

    def add(self, name: str, data: bytes) -> None:
        self.files[name] = data

    def add_csv(self, name, header, rows) -> None:
        self.add(name, csv_bytes(header, rows))

    def commit(self) -> list[str]:
        os.makedirs(self.directory, exist_ok=True)
        staged = []
        try:
            for name, data in self.files.items():
                fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{name}.")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                staged.append((tmp, os.path.join(self.directory, name)))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        return [final for _, final in staged]


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "exitwise"})
    plt.close(fig)
    return buf.getvalue()


def line_plot(series, xlabel, ylabel, title="", identity=False, logx=False,
              secondary=None) -> bytes:
    """``series`` maps label -> (xs, ys). ``secondary`` is plotted on a right axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    if identity:
        lo, hi = ax.get_xlim()
        ax.plot([lo, hi], [lo, hi], linestyle="--", color="grey", label="y = x")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if secondary:
        ax2 = ax.twinx()
        for label, (xs, ys) in secondary.items():
            ax2.plot(xs, ys, linestyle=":", marker="s", markersize=3, color="tab:red", label=label)
        ax2.set_ylabel(", ".join(secondary))
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def bar_plot(labels, groups, ylabel, title="") -> bytes:
    """``groups`` maps series name -> values aligned with ``labels``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(labels))
    width = 0.8 / max(len(groups), 1)
    for i, (name, vals) in enumerate(groups.items()):
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + width * (len(groups) - 1) / 2)
    ax.set_xticklabels([str(v) for v in labels])
    ax.axhline(0, color="black", linewidth=0.5)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def heatmap(matrix, row_values, col_values, row_label, col_label, title="") -> bytes:
    """Integer heat map with each cell labelled by its value."""
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.imshow(matrix, origin="lower", aspect="auto", cmap="viridis")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, str(matrix[i, j]), ha="center", va="center", fontsize=6, color="white")
    step_r = max(1, len(row_values) // 8)
    step_c = max(1, len(col_values) // 8)
    ax.set_yticks(range(0, len(row_values), step_r))
    ax.set_yticklabels([format(v, ".3g") for v in row_values[::step_r]])
    ax.set_xticks(range(0, len(col_values), step_c))
    ax.set_xticklabels([format(v, ".3g") for v in col_values[::step_c]])
    ax.set_ylabel(row_label)
    ax.set_xlabel(col_label)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _svg(fig)
