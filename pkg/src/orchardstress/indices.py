"""Per-pixel vegetation indices from masked reflectance rasters."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .raster import BandName, Raster


class IndexName(str, Enum):
    NDVI = "NDVI"
    NDRE = "NDRE"
    PSRI = "PSRI"


# index -> (numerator bands, denominator bands); ratio-of-difference style
_REQUIRED_BANDS = {
    IndexName.NDVI: (BandName.NIR, BandName.RED),
    IndexName.NDRE: (BandName.NIR, BandName.REDEDGE),
    IndexName.PSRI: (BandName.RED, BandName.BLUE, BandName.REDEDGE),
}


def required_bands(index: IndexName) -> tuple[BandName, ...]:
    return _REQUIRED_BANDS[IndexName(index)]


def compute_index(raster: Raster, index: IndexName | str) -> Raster:
    """Compute one vegetation index as a single-band raster.

    NDVI = (NIR - Red) / (NIR + Red)
    NDRE = (NIR - RedEdge) / (NIR + RedEdge)
    PSRI = (Red - Blue) / RedEdge

    Pixels are NaN wherever any operand is NaN or the denominator is 0.
    """
    index = IndexName(index)
    if index is IndexName.NDVI:
        nir = raster.band(BandName.NIR).astype(np.float64)
        red = raster.band(BandName.RED).astype(np.float64)
        num, den = nir - red, nir + red
    elif index is IndexName.NDRE:
        nir = raster.band(BandName.NIR).astype(np.float64)
        rededge = raster.band(BandName.REDEDGE).astype(np.float64)
        num, den = nir - rededge, nir + rededge
    else:
        red = raster.band(BandName.RED).astype(np.float64)
        blue = raster.band(BandName.BLUE).astype(np.float64)
        rededge = raster.band(BandName.REDEDGE).astype(np.float64)
        num, den = red - blue, rededge
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den != 0.0, num / den, np.nan)
    return raster.with_bands({index.value: out.astype(np.float32)})
