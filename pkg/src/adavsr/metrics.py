"""Quality metrics (PSNR, SSIM) and the evaluation report.

Both metrics work on the unit pixel domain: PSNR uses peak 1.0 and caps
at 99.0 dB (the documented stand-in for the zero-error case); SSIM is
the standard single-scale measure with an 11x11 Gaussian window
(sigma 1.5), K1=0.01, K2=0.03, averaged over valid window positions and
channels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .video import Video

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    """Raised on mismatched shapes or undersized frames."""


@dataclass(frozen=True)
class MetricsReport:
    """Per-frame PSNR/SSIM plus their arithmetic means."""

    per_frame: tuple[tuple[int, float, float], ...]
    mean_psnr_db: float
    mean_ssim: float
    frame_count: int


def _as_frame(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise MetricError(f"frame must be (H, W, C), got shape {arr.shape}")
    return arr


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on the unit domain, capped at 99."""
    fa, fb = _as_frame(a), _as_frame(b)
    if fa.shape != fb.shape:
        raise MetricError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    mse = float(np.mean((fa - fb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    return signal.correlate(x, _WINDOW, mode="valid", method="direct")


def ssim(a, b) -> float:
    """Structural similarity, mean over valid window positions and channels."""
    fa, fb = _as_frame(a), _as_frame(b)
    if fa.shape != fb.shape:
        raise MetricError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    if min(fa.shape[0], fa.shape[1]) < SSIM_WINDOW:
        raise MetricError(
            f"frame {fa.shape[0]}x{fa.shape[1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    values = []
    for ch in range(fa.shape[2]):
        x, y = fa[:, :, ch], fb[:, :, ch]
        mx, my = _filter_valid(x), _filter_valid(y)
        # population (weighted) second moments
        vx = _filter_valid(x * x) - mx * mx
        vy = _filter_valid(y * y) - my * my
        cxy = _filter_valid(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def evaluate(pred: Video, gt: Video) -> MetricsReport:
    """Frame-by-frame comparison of a reconstruction against ground truth."""
    if pred.pixels.shape != gt.pixels.shape:
        raise MetricError(
            f"video shape mismatch: {pred.pixels.shape} vs {gt.pixels.shape}")
    rows = []
    for i in range(pred.frame_count):
        rows.append((i, psnr(pred.frame(i), gt.frame(i)),
                     ssim(pred.frame(i), gt.frame(i))))
    return MetricsReport(
        per_frame=tuple(rows),
        mean_psnr_db=float(np.mean([r[1] for r in rows])),
        mean_ssim=float(np.mean([r[2] for r in rows])),
        frame_count=pred.frame_count)


def write_report(report: MetricsReport, path: str | Path) -> None:
    """Report CSV: frame_index,psnr_db,ssim rows plus a trailing mean row.

    Header comments record the metric conventions.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# psnr: peak 1.0 (unit pixel domain), zero-MSE capped at "
                 f"{PSNR_CAP_DB} dB\n")
        fh.write(f"# ssim: {SSIM_WINDOW}x{SSIM_WINDOW} gaussian window "
                 f"sigma={SSIM_SIGMA}, K1={SSIM_K1}, K2={SSIM_K2}, "
                 "valid-window mean\n")
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "psnr_db", "ssim"])
        for idx, p, s in report.per_frame:
            writer.writerow([idx, f"{p:.6f}", f"{s:.8f}"])
        writer.writerow(["mean", f"{report.mean_psnr_db:.6f}",
                         f"{report.mean_ssim:.8f}"])
