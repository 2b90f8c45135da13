"""Equirectangular global grid, spherical pixel areas and great-circle helpers.

Row 0 is the northmost band (north edge at +90), column 0 starts at -180.
Areas are computed on a sphere of radius ``earth_radius``; every pixel in a
row shares the same area so only one value per row is stored.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

EARTH_RADIUS_KM = 6371.0088

# Veltkamp splitting constant 2**27 + 1.
_SPLITTER = 134217729.0


@dataclass(frozen=True)
class GeoPoint:
    """A location in degrees. Longitude is normalised into [-180, 180)."""

    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))


def normalize_lon(lon):
    """Wrap a longitude (scalar or array) into [-180, 180)."""
    wrapped = np.mod(np.asarray(lon, dtype=np.float64) + 180.0, 360.0) - 180.0
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class GlobalGrid:
    height: int
    width: int
    earth_radius: float = EARTH_RADIUS_KM

    def __post_init__(self):
        if int(self.height) != self.height or int(self.width) != self.width:
            raise ValueError("grid dimensions must be integers")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.height}x{self.width}")
        if not self.earth_radius > 0:
            raise ValueError("earth_radius must be positive")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "earth_radius", float(self.earth_radius))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def n_pixels(self):
        return self.height * self.width

    @property
    def dlat(self):
        return 180.0 / self.height

    @property
    def dlon(self):
        return 360.0 / self.width

    def lat_edges(self):
        """Latitude of the height+1 row boundaries, north to south.

        Written as 90 * (H - 2k) / H so that edge k and edge H - k are exact
        negatives of each other.
        """
        k = np.arange(self.height + 1, dtype=np.float64)
        return 90.0 * (self.height - 2.0 * k) / self.height

    def row_centers(self):
        return 90.0 - (np.arange(self.height) + 0.5) * self.dlat

    def col_centers(self):
        return -180.0 + (np.arange(self.width) + 0.5) * self.dlon

    def index_to_center(self, row, col):
        _check_index(self, row, col)
        return GeoPoint(90.0 - (row + 0.5) * self.dlat, -180.0 + (col + 0.5) * self.dlon)

    @cached_property
    def areas(self):
        return PixelAreaMap.for_grid(self)

    @property
    def sphere_area(self):
        return 4.0 * math.pi * self.earth_radius ** 2


@dataclass(frozen=True, eq=False)
class PixelAreaMap:
    """Per-row spherical pixel areas in km**2."""

    grid: GlobalGrid
    areas: np.ndarray

    @classmethod
    def for_grid(cls, grid):
        edges = np.deg2rad(grid.lat_edges())
        sin_e = np.sin(edges)
        dlon_rad = 2.0 * math.pi / grid.width
        areas = grid.earth_radius ** 2 * dlon_rad * (sin_e[:-1] - sin_e[1:])
        areas.setflags(write=False)
        return cls(grid, areas)

    def __getitem__(self, row):
        return float(self.areas[row])

    @cached_property
    def total(self):
        """Exactly rounded area of the whole grid."""
        counts = np.full(self.grid.height, self.grid.width, dtype=np.int64)
        return area_from_row_counts(counts, self.areas)

    def dense(self):
        """Full H x W array of pixel areas (for small grids and oracles)."""
        return np.repeat(self.areas[:, None], self.grid.width, axis=1)


def _check_index(grid, row, col=0):
    if not 0 <= row < grid.height:
        raise IndexError(f"row {row} out of range for grid height {grid.height}")
    if not 0 <= col < grid.width:
        raise IndexError(f"column {col} out of range for grid width {grid.width}")


def pixel_area(grid, row):
    _check_index(grid, row)
    return grid.areas[row]


def area_from_row_counts(counts, row_areas):
    """Correctly rounded value of sum(counts[i] * row_areas[i]).

    Each row area is split into two halves of at most 26 significant bits so
    that ``count * half`` is exact for counts below 2**27; math.fsum then
    rounds the exact total once. This makes the result independent of
    summation order, which is what lets the streaming evaluator agree bit for
    bit with a pixel-by-pixel accumulation.
    """
    counts = np.asarray(counts)
    row_areas = np.asarray(row_areas, dtype=np.float64)
    if counts.size and counts.max() >= 2 ** 27:
        raise ValueError("per-row count too large for exact accumulation")
    c = row_areas * _SPLITTER
    hi = c - (c - row_areas)
    lo = row_areas - hi
    nz = counts != 0
    n = counts[nz].astype(np.float64)
    return math.fsum(np.concatenate([n * hi[nz], n * lo[nz]]).tolist())


def latlon_to_index(grid, p):
    """Pixel containing ``p``; shared edges belong to the south/east pixel."""
    rows, cols = latlon_to_index_arrays(grid, [p.lat], [p.lon])
    return int(rows[0]), int(cols[0])


def latlon_to_index_arrays(grid, lats, lons):
    lats = np.asarray(lats, dtype=np.float64)
    lons = normalize_lon(np.asarray(lons, dtype=np.float64))
    rows = np.floor((90.0 - lats) * grid.height / 180.0).astype(np.int64)
    rows = np.clip(rows, 0, grid.height - 1)
    cols = np.floor((lons + 180.0) * grid.width / 360.0).astype(np.int64)
    cols = np.mod(cols, grid.width)
    return rows, cols


def great_circle_distance(a, b, radius=EARTH_RADIUS_KM):
    """Haversine distance in km between two GeoPoints."""
    return float(haversine(a.lat, a.lon, b.lat, b.lon, radius))


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Vectorised haversine distance in km; inputs in degrees."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def spherical_cap_area(radius_km, radius=EARTH_RADIUS_KM):
    """Area of a spherical cap whose geodesic radius is ``radius_km``."""
    if not 0.0 <= radius_km <= math.pi * radius:
        raise ValueError(f"cap radius {radius_km} km outside [0, pi*R]")
    # 1 - cos(x) = 2 sin^2(x/2), stable for small caps
    return 4.0 * math.pi * radius ** 2 * math.sin(radius_km / (2.0 * radius)) ** 2
