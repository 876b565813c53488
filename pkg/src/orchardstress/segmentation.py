"""Canopy/soil segmentation via dual DSM + NExG thresholding.

Both the surface model and the normalized excess-green index separate
into a vegetation mode and a background mode, so each layer gets an
automatic bimodal threshold and a pixel counts as canopy only when both
layers agree. NExG doubles as the shadow filter: shadowed areas are
tall in the DSM but dark in the visible bands, so the greenness test
drops them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError
from .raster import BandName, CanopyMask, Raster, equal_width_histogram

OTSU_DEFAULT_BINS = 256


@dataclass(frozen=True)
class ThresholdReport:
    """Record of one automatic threshold decision."""

    band_or_index: str
    threshold: float
    method: str
    class_counts: tuple[int, int]  # (below, at-or-above)


def compute_nexg(raster: Raster) -> Raster:
    """Normalized excess green: (2*Green - Red - Blue) / (Green + Red + Blue).

    Output is a single-band raster named "NExG". A pixel is NaN when any
    input band is NaN or the denominator is zero.
    """
    green = raster.band(BandName.GREEN).astype(np.float64)
    red = raster.band(BandName.RED).astype(np.float64)
    blue = raster.band(BandName.BLUE).astype(np.float64)
    num = 2.0 * green - red - blue
    den = green + red + blue
    with np.errstate(divide="ignore", invalid="ignore"):
        nexg = np.where(den != 0.0, num / den, np.nan)
    return raster.with_bands({"NExG": nexg.astype(np.float32)})


def otsu_threshold(
    values, bin_count: int = OTSU_DEFAULT_BINS, label: str = "values"
) -> ThresholdReport:
    """Pick the histogram bin edge maximizing between-class variance.

    The input must contain at least two finite values with min < max.
    Candidate thresholds are the interior edges of a bin_count-bin
    equal-width histogram; class membership is value >= threshold. Ties
    in the between-class variance break toward the lower threshold.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    vals = vals[np.isfinite(vals)]
    if vals.size < 2:
        raise DegenerateDataError(
            f"otsu needs at least 2 finite values, got {vals.size}"
        )
    if vals.min() == vals.max():
        raise DegenerateDataError("otsu threshold undefined for constant input")
    edges, counts = equal_width_histogram(vals, bin_count)
    centers = (edges[:-1] + edges[1:]) / 2.0
    counts_f = counts.astype(np.float64)
    cum_n = np.cumsum(counts_f)
    cum_s = np.cumsum(counts_f * centers)
    n_total = cum_n[-1]
    s_total = cum_s[-1]

    # Candidate k splits bins [0, k) from [k, bin_count); k = 1..bin_count-1.
    n0 = cum_n[:-1]
    s0 = cum_s[:-1]
    n1 = n_total - n0
    s1 = s_total - s0
    valid = (n0 > 0) & (n1 > 0)
    scores = np.full(bin_count - 1, -np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = s0 / n0
        mu1 = s1 / n1
        w0 = n0 / n_total
        w1 = n1 / n_total
        sb = w0 * w1 * (mu0 - mu1) ** 2
    scores[valid] = sb[valid]
    best_k = int(np.argmax(scores)) + 1  # first max -> lowest threshold
    threshold = float(edges[best_k])
    below = int(cum_n[best_k - 1])
    return ThresholdReport(
        band_or_index=label,
        threshold=threshold,
        method="otsu",
        class_counts=(below, int(n_total) - below),
    )


def build_canopy_mask(
    raster: Raster, bin_count: int = OTSU_DEFAULT_BINS
) -> tuple[CanopyMask, ThresholdReport, ThresholdReport]:
    """Flag a pixel as canopy iff DSM and NExG both clear their thresholds.

    NaN in either layer excludes the pixel. Returns the mask plus the
    threshold reports for DSM and NExG, in that order.
    """
    dsm = raster.band(BandName.DSM).astype(np.float64)
    nexg = compute_nexg(raster).band("NExG").astype(np.float64)
    dsm_report = otsu_threshold(dsm[np.isfinite(dsm)], bin_count, label="DSM")
    nexg_report = otsu_threshold(nexg[np.isfinite(nexg)], bin_count, label="NExG")
    with np.errstate(invalid="ignore"):
        flags = (dsm >= dsm_report.threshold) & (nexg >= nexg_report.threshold)
    flags &= np.isfinite(dsm) & np.isfinite(nexg)
    mask = CanopyMask(raster.width, raster.height, flags)
    return mask, dsm_report, nexg_report


def threshold_reports_to_text(reports: list[ThresholdReport]) -> str:
    blocks = []
    for rep in reports:
        blocks.append(
            "\n".join(
                [
                    f"band_or_index {rep.band_or_index}",
                    f"method {rep.method}",
                    f"threshold {rep.threshold!r}",
                    f"count_below {rep.class_counts[0]}",
                    f"count_at_or_above {rep.class_counts[1]}",
                ]
            )
        )
    return "\n\n".join(blocks) + "\n"


def write_threshold_reports(reports: list[ThresholdReport], path: str | Path) -> None:
    Path(path).write_text(threshold_reports_to_text(reports), encoding="utf-8")
