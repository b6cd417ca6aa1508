"""WGS-84 geodetic to Earth-centered Earth-fixed conversion plus small helpers.

The ECEF transform uses the standard closed form with the prime-vertical
radius of curvature. The degree/kilometer helpers use a spherical earth and
are shared by the synthetic generator and the Kalman baseline so both sides
agree on the local scale factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WGS84_A = 6378137.0                  # semi-major axis, meters
WGS84_F = 1.0 / 298.257223563        # flattening
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)  # first eccentricity squared

#: Mean earth radius (km) for the spherical helpers below.
EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class EcefPoint:
    """Cartesian position in the earth-centered earth-fixed frame, meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError("ECEF coordinates must be finite")


def wgs84_to_ecef(lon_deg: float, lat_deg: float, alt_m: float) -> EcefPoint:
    """Geodetic longitude/latitude (degrees) and ellipsoidal height (m) to ECEF."""
    if abs(lat_deg) > 90.0:
        raise ValueError(f"latitude {lat_deg} outside [-90, 90]")
    lon = math.radians(lon_deg)
    lat = math.radians(lat_deg)
    sin_lat = math.sin(lat)
    cos_lat = math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + alt_m) * cos_lat * math.cos(lon)
    y = (n + alt_m) * cos_lat * math.sin(lon)
    z = (n * (1.0 - WGS84_E2) + alt_m) * sin_lat
    return EcefPoint(x, y, z)


def wgs84_to_ecef_array(lon_deg, lat_deg, alt_m) -> np.ndarray:
    """Vectorized transform; returns an array of shape (..., 3) in meters."""
    lon = np.radians(np.asarray(lon_deg, dtype=np.float64))
    lat = np.radians(np.asarray(lat_deg, dtype=np.float64))
    alt = np.asarray(alt_m, dtype=np.float64)
    sin_lat = np.sin(lat)
    cos_lat = np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + alt) * cos_lat * np.cos(lon)
    y = (n + alt) * cos_lat * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + alt) * sin_lat
    return np.stack([x, y, z], axis=-1)


def km_per_deg_lat() -> float:
    """Kilometers per degree of latitude on the mean sphere."""
    return EARTH_RADIUS_KM * math.pi / 180.0


def km_per_deg_lon(lat_deg: float) -> float:
    """Kilometers per degree of longitude at the given latitude."""
    return EARTH_RADIUS_KM * math.cos(math.radians(lat_deg)) * math.pi / 180.0


def great_circle_km(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Haversine distance on the mean sphere, kilometers."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))
