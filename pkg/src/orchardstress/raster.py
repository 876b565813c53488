"""Raster data model and the ORR flat container format.

A raster is a stack of equally sized single-band float32 grids with a
pixel size and a local-meter origin. Nodata is always NaN; no other
sentinel is used anywhere in the pipeline.

The ORR format is a text header (``<name>.orr``) next to a raw binary
payload. Header: one ``key value`` pair per line, in this order::

    magic ORR1
    width <pixels>
    height <pixels>
    pixel_size_m <meters>
    origin_x <meters>
    origin_y <meters>
    bands <comma-separated band names>
    data <relative payload filename>

Payload: little-endian 32-bit floats, band-sequential, each band
row-major top to bottom. NaN is written as the canonical quiet-NaN
bit pattern so identical rasters produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError, FormatError

ORR_MAGIC = "ORR1"

# 8 cm ground resolution of the source imagery.
DEFAULT_PIXEL_SIZE_M = 0.08


class BandName(str, Enum):
    """The seven camera bands plus the photogrammetry-derived DSM layer."""

    BLUE = "Blue"
    GREEN = "Green"
    PANCHROMATIC = "Panchromatic"
    RED = "Red"
    REDEDGE = "RedEdge"
    NIR = "NIR"
    THERMAL = "Thermal"
    DSM = "DSM"

    @classmethod
    def parse(cls, name: str) -> "BandName":
        try:
            return cls(name)
        except ValueError:
            raise FormatError(f"unknown band name {name!r}") from None


# Band names the pipeline itself derives and may store in ORR files.
DERIVED_BAND_NAMES = ("NExG", "NDVI", "NDRE", "PSRI", "CanopyMask", "SWP")

KNOWN_BAND_NAMES = tuple(b.value for b in BandName) + DERIVED_BAND_NAMES

_HEADER_KEYS = (
    "width",
    "height",
    "pixel_size_m",
    "origin_x",
    "origin_y",
    "bands",
    "data",
)


class OrrFormatError(FormatError):
    """The ORR header or payload violates the container format."""


@dataclass(frozen=True)
class RasterGeometry:
    """Placement of a pixel grid in local meters (origin = top-left corner)."""

    width: int
    height: int
    pixel_size_m: float
    origin: tuple[float, float]

    def contains_point(self, x: float, y: float) -> bool:
        ox, oy = self.origin
        return (
            ox <= x < ox + self.width * self.pixel_size_m
            and oy <= y < oy + self.height * self.pixel_size_m
        )


@dataclass
class Raster:
    """Multi-band pixel grid. Bands are float32, row-major, NaN nodata."""

    width: int
    height: int
    pixel_size_m: float
    origin: tuple[float, float]
    bands: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise FormatError("raster dimensions must be positive")
        if not self.pixel_size_m > 0:
            raise FormatError("pixel_size_m must be > 0")
        if not self.bands:
            raise FormatError("raster must have at least one band")
        clean: dict[str, np.ndarray] = {}
        for name, grid in self.bands.items():
            key = name.value if isinstance(name, BandName) else str(name)
            if key in clean:
                raise FormatError(f"duplicate band name {key!r}")
            arr = np.asarray(grid, dtype=np.float32)
            if arr.shape != (self.height, self.width):
                raise FormatError(
                    f"band {key!r} has shape {arr.shape}, "
                    f"expected {(self.height, self.width)}"
                )
            clean[key] = arr
        self.bands = clean

    @property
    def band_names(self) -> tuple[str, ...]:
        return tuple(self.bands)

    @property
    def geometry(self) -> RasterGeometry:
        return RasterGeometry(self.width, self.height, self.pixel_size_m, self.origin)

    def band(self, name: str | BandName) -> np.ndarray:
        key = name.value if isinstance(name, BandName) else name
        try:
            return self.bands[key]
        except KeyError:
            raise FormatError(
                f"band {key!r} not present (have: {', '.join(self.bands)})"
            ) from None

    def has_band(self, name: str | BandName) -> bool:
        key = name.value if isinstance(name, BandName) else name
        return key in self.bands

    def with_bands(self, bands: dict[str, np.ndarray]) -> "Raster":
        """New raster sharing this one's geometry."""
        return Raster(self.width, self.height, self.pixel_size_m, self.origin, bands)


@dataclass
class CanopyMask:
    """Boolean pixel grid marking vegetated pixels."""

    width: int
    height: int
    flags: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.flags, dtype=bool)
        if arr.shape != (self.height, self.width):
            raise FormatError(
                f"mask flags shape {arr.shape} != {(self.height, self.width)}"
            )
        self.flags = arr

    def to_raster(self, pixel_size_m: float, origin: tuple[float, float]) -> Raster:
        """Encode as a single-band 1.0/0.0 raster for ORR output."""
        grid = self.flags.astype(np.float32)
        return Raster(self.width, self.height, pixel_size_m, origin, {"CanopyMask": grid})

    @classmethod
    def from_raster(cls, raster: Raster) -> "CanopyMask":
        flags = raster.band("CanopyMask") > 0.5
        return cls(raster.width, raster.height, flags)


def rasters_equal(a: Raster, b: Raster) -> bool:
    """Field-for-field equality, treating NaN positions as equal."""
    if (a.width, a.height, a.pixel_size_m, a.origin) != (
        b.width,
        b.height,
        b.pixel_size_m,
        b.origin,
    ):
        return False
    if a.band_names != b.band_names:
        return False
    return all(
        np.array_equal(a.bands[n], b.bands[n], equal_nan=True) for n in a.band_names
    )


def save_raster(raster: Raster, path: str | Path) -> None:
    """Write a raster as an ORR header plus raw payload.

    The payload file is named after the header with a ``.bin`` suffix and
    referenced relatively, so the pair can be moved together. Output bytes
    are a pure function of the raster contents.
    """
    header_path = Path(path)
    payload_name = header_path.stem + ".bin"
    lines = [
        f"magic {ORR_MAGIC}",
        f"width {raster.width}",
        f"height {raster.height}",
        f"pixel_size_m {float(raster.pixel_size_m)!r}",
        f"origin_x {float(raster.origin[0])!r}",
        f"origin_y {float(raster.origin[1])!r}",
        f"bands {','.join(raster.band_names)}",
        f"data {payload_name}",
    ]
    payload = np.empty(
        (len(raster.bands), raster.height, raster.width), dtype="<f4"
    )
    for i, name in enumerate(raster.band_names):
        grid = raster.bands[name]
        # Canonical quiet-NaN pattern so saves are byte-deterministic.
        payload[i] = np.where(np.isnan(grid), np.float32(np.nan), grid)
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (header_path.parent / payload_name).write_bytes(payload.tobytes())


def load_raster(path: str | Path) -> Raster:
    """Read an ORR header + payload pair back into a Raster.

    Raises FileNotFoundError for missing files and OrrFormatError for a
    bad magic line, malformed or missing header keys, unknown or
    duplicate band names, and payload length mismatches.
    """
    header_path = Path(path)
    if not header_path.is_file():
        raise FileNotFoundError(f"raster header not found: {header_path}")
    text = header_path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != f"magic {ORR_MAGIC}":
        raise OrrFormatError(f"bad magic in {header_path}")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        if key not in _HEADER_KEYS:
            raise OrrFormatError(f"unknown header key {key!r} in {header_path}")
        if key in fields:
            raise OrrFormatError(f"repeated header key {key!r} in {header_path}")
        fields[key] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise OrrFormatError(f"missing header keys {missing} in {header_path}")
    try:
        width = int(fields["width"])
        height = int(fields["height"])
        pixel_size = float(fields["pixel_size_m"])
        origin = (float(fields["origin_x"]), float(fields["origin_y"]))
    except ValueError as exc:
        raise OrrFormatError(f"malformed numeric header field: {exc}") from None
    band_names = [b.strip() for b in fields["bands"].split(",") if b.strip()]
    if not band_names:
        raise OrrFormatError(f"empty band list in {header_path}")
    seen: set[str] = set()
    for name in band_names:
        if name not in KNOWN_BAND_NAMES:
            raise OrrFormatError(f"unknown band name {name!r} in {header_path}")
        if name in seen:
            raise OrrFormatError(f"duplicate band name {name!r} in {header_path}")
        seen.add(name)
    payload_path = header_path.parent / fields["data"]
    if not payload_path.is_file():
        raise FileNotFoundError(f"raster payload not found: {payload_path}")
    raw = payload_path.read_bytes()
    expected = width * height * len(band_names) * 4
    if len(raw) != expected:
        raise OrrFormatError(
            f"payload size mismatch in {payload_path}: "
            f"{len(raw)} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(len(band_names), height, width)
    bands = {name: data[i].copy() for i, name in enumerate(band_names)}
    return Raster(width, height, pixel_size, origin, bands)


def apply_mask(raster: Raster, mask: CanopyMask) -> Raster:
    """NaN out every band value where the mask flag is false."""
    if (mask.width, mask.height) != (raster.width, raster.height):
        raise FormatError(
            f"mask {mask.width}x{mask.height} does not match "
            f"raster {raster.width}x{raster.height}"
        )
    keep = mask.flags
    bands = {
        name: np.where(keep, grid, np.float32(np.nan))
        for name, grid in raster.bands.items()
    }
    return raster.with_bands(bands)


def equal_width_histogram(
    values: np.ndarray, bin_count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram over [min, max] of the given finite values.

    A value equal to the maximum falls in the last (closed) bin. For a
    constant input all mass is therefore in the last bin. Returns
    (edges, counts) with len(edges) == bin_count + 1.
    """
    if bin_count < 2:
        raise DegenerateDataError("bin_count must be >= 2")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise DegenerateDataError("no finite values to histogram")
    lo = float(vals.min())
    hi = float(vals.max())
    edges = np.linspace(lo, hi, bin_count + 1)
    if hi == lo:
        counts = np.zeros(bin_count, dtype=np.int64)
        counts[-1] = vals.size
        return edges, counts
    idx = np.floor((vals - lo) / (hi - lo) * bin_count).astype(np.int64)
    np.clip(idx, 0, bin_count - 1, out=idx)
    counts = np.bincount(idx, minlength=bin_count).astype(np.int64)
    return edges, counts


def band_histogram(
    raster: Raster, band: str | BandName, bin_count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of one band's finite pixels; counts sum to the finite count."""
    grid = raster.band(band)
    finite = grid[np.isfinite(grid)]
    if finite.size == 0:
        raise DegenerateDataError(
            f"band {band!r} has zero finite pixels to histogram"
        )
    return equal_width_histogram(finite.astype(np.float64), bin_count)
