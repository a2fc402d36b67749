"""Spherical coordinate conventions and equirectangular pixel mapping.

Frame: y is up, forward is +z, longitude phi = 0 looks down +z and phi = pi/2
looks down +x. Latitude theta is +pi/2 at the zenith.

Equirectangular grids are row-major with row 0 at the zenith and column 0 at
longitude -pi. Pixel centers sit at half-integer offsets::

    phi(i)   = ((i + 0.5) / w) * 2pi - pi
    theta(j) = pi/2 - ((j + 0.5) / h) * pi

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
HALF_PI = 0.5 * np.pi


class GeometryError(ValueError):
    pass


def wrap_longitude(phi):
    """Wrap longitude into [-pi, pi)."""
    return np.mod(np.asarray(phi, dtype=np.float64) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class SphericalPoint:
    """Direction plus radial distance. Fields may be scalars or arrays."""

    phi: np.ndarray | float
    theta: np.ndarray | float
    r: np.ndarray | float = 1.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        phi = np.asarray(self.phi, dtype=np.float64)
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise GeometryError("radial distance must be finite and positive")
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > HALF_PI + 1e-12):
            raise GeometryError("latitude must lie in [-pi/2, pi/2]")
        if not np.all(np.isfinite(phi)):
            raise GeometryError("longitude must be finite")
        object.__setattr__(self, "phi", _unbox(wrap_longitude(phi)))
        object.__setattr__(self, "theta", _unbox(np.clip(theta, -HALF_PI, HALF_PI)))
        object.__setattr__(self, "r", _unbox(r))


@dataclass(frozen=True)
class CartesianPoint:
    x: np.ndarray | float
    y: np.ndarray | float
    z: np.ndarray | float

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.x, self.y, self.z), axis=-1)

    @property
    def norm(self):
        return np.sqrt(np.square(self.x) + np.square(self.y) + np.square(self.z))


def _unbox(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def spherical_to_cartesian(p: SphericalPoint) -> CartesianPoint:
    cos_t = np.cos(p.theta)
    return CartesianPoint(
        x=_unbox(np.asarray(p.r * cos_t * np.sin(p.phi))),
        y=_unbox(np.asarray(p.r * np.sin(p.theta))),
        z=_unbox(np.asarray(p.r * cos_t * np.cos(p.phi))),
    )


def cartesian_to_spherical(c: CartesianPoint) -> SphericalPoint:
    """Inverse of :func:`spherical_to_cartesian`; phi is 0 on the poles."""
    x, y, z = (np.asarray(v, dtype=np.float64) for v in (c.x, c.y, c.z))
    horiz = np.hypot(x, z)
    r = np.hypot(horiz, y)
    if np.any(r == 0) or not np.all(np.isfinite(r)):
        raise GeometryError("cannot convert a zero-length vector")
    theta = np.arctan2(y, horiz)
    phi = np.where(horiz > 0, np.arctan2(x, z), 0.0)
    return SphericalPoint(phi=phi, theta=theta, r=r)


def _check_grid(w: int, h: int) -> None:
    if h <= 0 or w != 2 * h:
        raise GeometryError(f"equirectangular grid must be 2:1, got {w}x{h}")


def pixel_to_direction(i, j, w: int, h: int) -> SphericalPoint:
    """Unit direction through the center of pixel (column i, row j)."""
    _check_grid(w, h)
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i < 0) or np.any(i >= w) or np.any(j < 0) or np.any(j >= h):
        raise GeometryError("pixel index out of range")
    phi = (i + 0.5) / w * TWO_PI - np.pi
    theta = HALF_PI - (j + 0.5) / h * np.pi
    return SphericalPoint(phi=phi, theta=theta, r=1.0)


def direction_to_pixel(p: SphericalPoint, w: int, h: int):
    """Continuous (u, v) pixel coordinates; integers are pixel centers.

    u is wrapped into [-0.5, w - 0.5) so rounding gives a valid column.
    """
    _check_grid(w, h)
    u = (wrap_longitude(p.phi) + np.pi) / TWO_PI * w - 0.5
    v = (HALF_PI - np.asarray(p.theta, dtype=np.float64)) / np.pi * h - 0.5
    return _unbox(np.asarray(u)), _unbox(np.asarray(v))


def pixel_grid(w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """(phi, theta) arrays of shape (h, w) at every pixel center."""
    _check_grid(w, h)
    phi = (np.arange(w) + 0.5) / w * TWO_PI - np.pi
    theta = HALF_PI - (np.arange(h) + 0.5) / h * np.pi
    return np.broadcast_to(phi[None, :], (h, w)), np.broadcast_to(theta[:, None], (h, w))


def unit_rays(w: int, h: int) -> np.ndarray:
    """(h, w, 3) unit direction vectors for every pixel center."""
    phi, theta = pixel_grid(w, h)
    cos_t = np.cos(theta)
    return np.stack([cos_t * np.sin(phi), np.sin(theta), cos_t * np.cos(phi)], axis=-1)


def directions_to_uv(dirs: np.ndarray, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates for an array of (..., 3) direction vectors."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    horiz = np.hypot(x, z)
    theta = np.arctan2(y, horiz)
    phi = np.where(horiz > 0, np.arctan2(x, z), 0.0)
    u = (wrap_longitude(phi) + np.pi) / TWO_PI * w - 0.5
    v = (HALF_PI - theta) / np.pi * h - 0.5
    return u, v


def check_equirect(arr: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an (h, w) or (h, w, c) equirectangular array and return it."""
    arr = np.asarray(arr)
    if arr.ndim not in (2, 3):
        raise GeometryError(f"{name}: expected a 2D or 3D array, got shape {arr.shape}")
    h, w = arr.shape[:2]
    if w != 2 * h:
        raise GeometryError(f"{name}: width must be twice the height, got {w}x{h}")
    return arr


def sample_equirect(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample at continuous pixel coordinates.

    Columns wrap around the longitude seam; rows clamp at the poles.
    """
    h, w = img.shape[:2]
    v = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    c0 = np.mod(u0, w)
    c1 = np.mod(u0 + 1, w)
    r0 = v0
    r1 = np.minimum(v0 + 1, h - 1)
    if img.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = img[r0, c0] * (1 - fu) + img[r0, c1] * fu
    bot = img[r1, c0] * (1 - fu) + img[r1, c1] * fu
    return top * (1 - fv) + bot * fv
