"""Equirectangular <-> cubemap projection with spherical padding.

Faces are ordered +X, -X, +Y, -Y, +Z, -Z. Each face has 2D coordinates
(a, b) in [-1, 1], a growing to the right and b growing downward; texel
(col, row) of a face of size S has a = 2 (col + 0.5) / S - 1 and likewise
for b. The ray through (a, b) is:

    +X: ( 1, -b, -a)      -X: (-1, -b,  a)
    +Y: ( a,  1,  b)      -Y: ( a, -1, -b)
    +Z: ( a, -b,  1)      -Z: (-a, -b, -1)

so the four side faces read left to right in the same order as the
equirectangular columns, and the +Z face is the panorama center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, check_equirect, directions_to_uv, sample_equirect, unit_rays

FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")


@dataclass(frozen=True)
class CubemapFaces:
    """Six faces stacked in a (6, S + 2 pad, S + 2 pad[, C]) array."""

    faces: np.ndarray
    pad: int = 0

    def __post_init__(self):
        f = self.faces
        if f.ndim not in (3, 4) or f.shape[0] != 6 or f.shape[1] != f.shape[2]:
            raise GeometryError(f"cubemap faces must have shape (6, n, n[, c]), got {f.shape}")
        if self.pad < 0 or f.shape[1] - 2 * self.pad < 2:
            raise GeometryError("invalid padding for face size")

    @property
    def face_size(self) -> int:
        return self.faces.shape[1] - 2 * self.pad

    def interior(self) -> np.ndarray:
        if self.pad == 0:
            return self.faces
        p = self.pad
        return self.faces[:, p:-p, p:-p]


def face_directions(face: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    one = np.ones_like(a)
    if face == 0:
        d = (one, -b, -a)
    elif face == 1:
        d = (-one, -b, a)
    elif face == 2:
        d = (a, one, b)
    elif face == 3:
        d = (a, -one, -b)
    elif face == 4:
        d = (a, -b, one)
    elif face == 5:
        d = (-a, -b, -one)
    else:
        raise GeometryError(f"face index out of range: {face}")
    return np.stack(d, axis=-1)


def directions_to_face(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face index and (a, b) face coordinates hit by each direction.

    Ties between major axes go to the lower face index.
    """
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    face = np.where(
        (ax >= ay) & (ax >= az),
        np.where(x > 0, 0, 1),
        np.where(ay >= az, np.where(y > 0, 2, 3), np.where(z > 0, 4, 5)),
    )
    a = np.empty_like(x)
    b = np.empty_like(x)
    # Invert the per-face ray formulas from the module docstring.
    for f, (ae, be, me) in enumerate(
        [(-z, -y, ax), (z, -y, ax), (x, z, ay), (x, -z, ay), (x, -y, az), (-x, -y, az)]
    ):
        sel = face == f
        a[sel] = ae[sel] / me[sel]
        b[sel] = be[sel] / me[sel]
    return face, a, b


def _texel_coords(size: int, pad: int) -> np.ndarray:
    return (2.0 * (np.arange(-pad, size + pad) + 0.5) / size) - 1.0


def _sample_face(face: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Bilinear sample of one (padded) face with edge clamping."""
    n = face.shape[0]
    col = np.clip(col, 0.0, n - 1.0)
    row = np.clip(row, 0.0, n - 1.0)
    c0 = np.minimum(np.floor(col).astype(np.int64), n - 2)
    r0 = np.minimum(np.floor(row).astype(np.int64), n - 2)
    fc = col - c0
    fr = row - r0
    if face.ndim == 3:
        fc = fc[..., None]
        fr = fr[..., None]
    top = face[r0, c0] * (1 - fc) + face[r0, c0 + 1] * fc
    bot = face[r0 + 1, c0] * (1 - fc) + face[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def sample_cubemap(cm: CubemapFaces, dirs: np.ndarray) -> np.ndarray:
    """Bilinear sample along arbitrary ray directions of shape (..., 3)."""
    face, a, b = directions_to_face(dirs)
    s = cm.face_size
    col = (a + 1.0) * 0.5 * s - 0.5 + cm.pad
    row = (b + 1.0) * 0.5 * s - 0.5 + cm.pad
    out = np.empty(dirs.shape[:-1] + cm.faces.shape[3:], dtype=np.float64)
    for f in range(6):
        sel = face == f
        if np.any(sel):
            out[sel] = _sample_face(cm.faces[f], col[sel], row[sel])
    return out


def equirect_to_cubemap(img: np.ndarray, face_size: int) -> CubemapFaces:
    img = check_equirect(img)
    if face_size < 2:
        raise GeometryError("face_size must be at least 2")
    h, w = img.shape[:2]
    t = _texel_coords(face_size, 0)
    a, b = np.meshgrid(t, t)
    faces = []
    for f in range(6):
        u, v = directions_to_uv(face_directions(f, a, b), w, h)
        faces.append(sample_equirect(img.astype(np.float64), u, v))
    return CubemapFaces(np.stack(faces), pad=0)


def spherical_pad(cm: CubemapFaces, pad_width: int) -> CubemapFaces:
    """Surround every face with a ring sampled from its sphere neighbours.

    Ring texels continue the face's own ray parametrisation past |a| = 1 or
    |b| = 1, so each one is a bilinear sample of whichever face that ray
    actually hits. Interiors are copied unchanged.
    """
    if cm.pad != 0:
        raise GeometryError("cubemap is already padded")
    s = cm.face_size
    if pad_width < 0 or pad_width >= s / 2:
        raise GeometryError("pad_width must be in [0, face_size / 2)")
    if pad_width == 0:
        return cm
    p = pad_width
    n = s + 2 * p
    t = _texel_coords(s, p)
    a, b = np.meshgrid(t, t)
    ring = np.ones((n, n), dtype=bool)
    ring[p:-p, p:-p] = False
    src = cm.faces.astype(np.float64)
    out = np.zeros((6, n, n) + src.shape[3:], dtype=np.float64)
    for f in range(6):
        out[f, p:-p, p:-p] = src[f]
        dirs = face_directions(f, a[ring], b[ring])
        out[f][ring] = sample_cubemap(cm, dirs)
    return CubemapFaces(out, pad=p)


def cubemap_to_equirect(cm: CubemapFaces, w: int, h: int) -> np.ndarray:
    """Resample a cubemap onto a (h, w) equirectangular grid.

    Unpadded input gets a one-texel spherical pad first so bilinear taps near
    face borders read real neighbour data instead of clamped edges.
    """
    if h <= 0 or w != 2 * h:
        raise GeometryError(f"equirectangular grid must be 2:1, got {w}x{h}")
    if cm.pad == 0:
        cm = spherical_pad(cm, 1)
    return sample_cubemap(cm, unit_rays(w, h))


def stack_faces(cm: CubemapFaces) -> np.ndarray:
    """Debug layout: unpadded faces stacked vertically in face order."""
    inner = cm.interior()
    return np.concatenate(list(inner), axis=0)


def unstack_faces(img: np.ndarray) -> CubemapFaces:
    img = np.asarray(img)
    s = img.shape[1]
    if img.shape[0] != 6 * s:
        raise GeometryError(f"stacked cubemap must be (6n, n), got {img.shape[:2]}")
    return CubemapFaces(img.reshape((6, s) + img.shape[1:]), pad=0)
