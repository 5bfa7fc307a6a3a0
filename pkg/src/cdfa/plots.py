"""Static SVG line charts emitted straight from run CSVs.

Charts are written as plain SVG text with one ``<polyline>`` per series and
one point per epoch, so the output is byte-deterministic and easy to assert
against in tests.  No plotting library is involved.
"""

from __future__ import annotations

import csv
import os
from typing import Sequence

from .errors import DataIntegrityError

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 58, 16, 34, 44


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart_svg(
    path,
    x_values: Sequence[float],
    series: dict[str, Sequence[float]],
    title: str,
    x_label: str,
    y_label: str,
    width: int = 720,
    height: int = 440,
    y_range: tuple[float, float] | None = None,
) -> None:
    """Write a multi-series line chart; one polyline point per x sample."""
    xs = [float(x) for x in x_values]
    if not xs or not series:
        raise ValueError("chart needs at least one x sample and one series")
    for name, ys in series.items():
        if len(ys) != len(xs):
            raise ValueError(f"series {name!r} has {len(ys)} values for {len(xs)} x samples")
    all_y = [float(y) for ys in series.values() for y in ys]
    y_lo, y_hi = y_range if y_range else (min(all_y), max(all_y))
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    x_lo, x_hi = min(xs), max(xs)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def sx(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return _MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
    ]
    # Axes and ticks.
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444444" stroke-width="1"/>'
    )
    for tick in _ticks(y_lo, y_hi):
        y = sy(tick)
        parts.append(f'<line x1="{_MARGIN_L - 4}" y1="{y:.2f}" x2="{_MARGIN_L}" y2="{y:.2f}" stroke="#444444"/>')
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{tick:.3g}</text>'
        )
    for tick in _ticks(x_lo, x_hi):
        x = sx(tick)
        parts.append(
            f'<line x1="{x:.2f}" y1="{_MARGIN_T + plot_h}" x2="{x:.2f}" '
            f'y2="{_MARGIN_T + plot_h + 4}" stroke="#444444"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{_MARGIN_T + plot_h + 16}" text-anchor="middle" font-size="10" '
            f'font-family="sans-serif">{tick:.3g}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-size="11" font-family="sans-serif">{x_label}</text>'
    )
    parts.append(
        f'<text x="14" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" font-size="11" '
        f'font-family="sans-serif" transform="rotate(-90 14 {_MARGIN_T + plot_h / 2:.1f})">{y_label}</text>'
    )
    # Series and legend.
    for idx, (name, ys) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5" '
            f'data-series="{name}"/>'
        )
        ly = _MARGIN_T + 14 + 14 * idx
        lx = _MARGIN_L + plot_w - 130
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{lx + 24}" y="{ly}" font-size="10" font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def read_epoch_csv(path) -> dict[str, list[float]]:
    """Load a run's epoch CSV into column lists keyed by header name."""
    if not os.path.exists(path):
        raise DataIntegrityError(f"missing epoch CSV: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[float]] = {name: [] for name in reader.fieldnames or ()}
        for row in reader:
            for name, raw in row.items():
                columns[name].append(float(raw))
    if not columns or not next(iter(columns.values())):
        raise DataIntegrityError(f"epoch CSV {path} holds no rows")
    return columns


def plot_run(run_dir) -> list[str]:
    """Emit the loss-curve and policy-evolution charts for a finished run.

    Returns the paths written.
    """
    run_dir = str(run_dir)
    columns = read_epoch_csv(os.path.join(run_dir, "epochs.csv"))
    epochs = columns["epoch"]
    loss_path = os.path.join(run_dir, "loss_curves.svg")
    line_chart_svg(
        loss_path,
        epochs,
        {"train_loss": columns["train_loss"], "val_loss": columns["val_loss"]},
        title="Detector loss by epoch",
        x_label="epoch",
        y_label="mean BCE",
    )
    policy_path = os.path.join(run_dir, "policy_evolution.svg")
    line_chart_svg(
        policy_path,
        epochs,
        {"p_bi": columns["p_bi"], "p_sbi": columns["p_sbi"], "p_ssbi": columns["p_ssbi"]},
        title="Epoch-mean augmentation policy",
        x_label="epoch",
        y_label="probability",
        y_range=(0.0, 1.0),
    )
    return [loss_path, policy_path]
