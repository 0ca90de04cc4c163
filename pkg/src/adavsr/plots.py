"""Rendering of training/adaptation logs as PNG line charts."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class PlotError(ValueError):
    """Raised on malformed or empty log files."""


def _read_log(log_csv: Path) -> tuple[list[str], list[dict]]:
    with open(log_csv, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise PlotError(f"{log_csv}: empty log") from None
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise PlotError(
                f"{log_csv}: line {lineno}: expected {len(header)} fields, "
                f"got {len(rec)}")
        row = {}
        for key, value in zip(header, rec):
            try:
                row[key] = float(value)
            except ValueError:
                row[key] = value
        rows.append(row)
    if not rows:
        raise PlotError(f"{log_csv}: no data rows")
    return header, rows


def _series(rows: list[dict], header: list[str], column: str):
    """Split one column into per-phase (label, xs, ys) series."""
    x_key = "step" if "step" in header else header[0]
    groups: dict[str, tuple[list, list]] = {}
    for row in rows:
        value = row.get(column)
        if not isinstance(value, float) or value != value:  # skip NaN
            continue
        phase = str(row.get("phase", "")) if "phase" in header else ""
        xs, ys = groups.setdefault(phase, ([], []))
        xs.append(row[x_key])
        ys.append(value)
    label = column if len(groups) <= 1 else None
    return [(column if not phase else f"{column} [{phase}]", xs, ys)
            for phase, (xs, ys) in groups.items() if ys], x_key


def _render(series, x_key: str, ylabel: str, title: str, path: Path):
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for label, xs, ys in series:
        ax.plot(xs, ys, label=label, linewidth=1.2)
    ax.set_xlabel(x_key)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def emit_plots(log_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Render loss curves (and PSNR curves when present) from a log CSV.

    Writes ``loss.png`` for columns containing 'loss' and ``psnr.png``
    for columns containing 'psnr'. Returns the written paths.
    """
    log_csv = Path(log_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = _read_log(log_csv)

    loss_cols = [c for c in header if "loss" in c.lower()]
    psnr_cols = [c for c in header if "psnr" in c.lower()]
    if not loss_cols and not psnr_cols:
        raise PlotError(f"{log_csv}: no loss or psnr columns in {header}")

    written = []
    if loss_cols:
        series, x_key = [], "step"
        for col in loss_cols:
            s, x_key = _series(rows, header, col)
            series.extend(s)
        path = out_dir / "loss.png"
        _render(series, x_key, "loss", log_csv.stem, path)
        written.append(path)
    if psnr_cols:
        series, x_key = [], "step"
        for col in psnr_cols:
            s, x_key = _series(rows, header, col)
            series.extend(s)
        path = out_dir / "psnr.png"
        _render(series, x_key, "PSNR (dB)", log_csv.stem, path)
        written.append(path)
    return written
