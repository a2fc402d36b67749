"""Analytic ray-cast RGB-D panoramas of box rooms with box/sphere props.

The room is an axis-aligned box whose floor is y = 0, centred on x = z = 0.
The camera sits at (camera_x, camera_height, camera_z). Every ray ends on a
room surface, so every pixel gets a finite radial depth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import unit_rays

SCENE_FORMAT = "panoshift.scene"
SCENE_VERSION = 1


class SceneError(ValueError):
    pass


def _rgb(r: int, g: int, b: int) -> tuple:
    # 8-bit exact colours so PNG round trips are lossless
    return (r / 255.0, g / 255.0, b / 255.0)


@dataclass(frozen=True)
class Texture:
    """Flat colour, or a checkerboard of ``tile`` metres when color2 is set."""

    color: tuple = _rgb(200, 200, 200)
    color2: tuple | None = None
    tile: float = 0.5

    def shade(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), u.shape + (3,))
        if self.color2 is None:
            return base.copy()
        odd = (np.floor(u / self.tile) + np.floor(v / self.tile)).astype(np.int64) % 2 == 1
        return np.where(odd[..., None], np.asarray(self.color2, dtype=np.float64), base)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    texture: Texture = Texture(_rgb(180, 90, 60))
    # optional per-axis textures (x faces, y faces, z faces); falls back to texture
    face_textures: tuple | None = None

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise SceneError("box extents must be positive")

    def contains(self, p) -> bool:
        return all(l < c < h for l, c, h in zip(self.lo, p, self.hi))


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = Texture(_rgb(70, 120, 190))

    def __post_init__(self):
        if self.radius <= 0:
            raise SceneError("sphere radius must be positive")

    def contains(self, p) -> bool:
        return float(np.sum((np.asarray(p) - np.asarray(self.center)) ** 2)) < self.radius ** 2


@dataclass(frozen=True)
class SceneSpec:
    room: tuple = (8.0, 8.0, 3.0)  # width (x), depth (z), height (y)
    objects: tuple = ()
    camera_height: float = 1.40
    camera_x: float = 0.0
    camera_z: float = 0.0
    floor: Texture = Texture(_rgb(190, 170, 140), _rgb(90, 80, 70), 0.5)
    ceiling: Texture = Texture(_rgb(235, 235, 225))
    # walls ordered +X, -X, +Z, -Z
    walls: tuple = (
        Texture(_rgb(160, 190, 170)),
        Texture(_rgb(170, 160, 200)),
        Texture(_rgb(205, 185, 150)),
        Texture(_rgb(150, 175, 205)),
    )

    @property
    def camera(self) -> tuple:
        return (self.camera_x, self.camera_height, self.camera_z)

    def with_height(self, height: float) -> SceneSpec:
        return SceneSpec(self.room, self.objects, height, self.camera_x, self.camera_z,
                         self.floor, self.ceiling, self.walls)

    def validate(self) -> None:
        w, d, h = self.room
        if min(w, d, h) <= 0:
            raise SceneError("room dimensions must be positive")
        cx, cy, cz = self.camera
        if not (abs(cx) < w / 2 and abs(cz) < d / 2 and 0 < cy < h):
            raise SceneError("camera must be strictly inside the room")
        for obj in self.objects:
            if obj.contains(self.camera):
                raise SceneError("camera is inside an object")


def default_scene() -> SceneSpec:
    """8 x 8 x 3 m room, eye at 1.40 m, a 1 m cube standing 3 m ahead."""
    box = Box(lo=(-0.5, 0.0, 2.5), hi=(0.5, 1.0, 3.5),
              face_textures=(Texture(_rgb(150, 70, 50)), Texture(_rgb(220, 120, 80)), Texture(_rgb(185, 95, 65))))
    return SceneSpec(objects=(box,))


def two_plane_scene() -> SceneSpec:
    """A thin 2 x 1 m panel 2 m ahead of the camera against the far wall 4 m away."""
    panel = Box(lo=(-1.0, 1.0, 1.95), hi=(1.0, 2.0, 2.0), texture=Texture(_rgb(60, 110, 160)))
    return SceneSpec(objects=(panel,))


# --- ray casting -------------------------------------------------------------


def _box_entry(o, d, lo, hi):
    """Entry distance and hit axis of rays into an axis-aligned box (inf on miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (np.asarray(lo) - o) * inv
        t2 = (np.asarray(hi) - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf), axis


def _sphere_entry(o, d, center, radius):
    oc = o - np.asarray(center)
    b = d @ oc
    c = oc @ oc - radius ** 2
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    return np.where((disc >= 0) & (t > 1e-9), t, np.inf)


def _box_colors(obj: Box, pts: np.ndarray, axis: np.ndarray) -> np.ndarray:
    out = np.empty(pts.shape[:-1] + (3,))
    # in-plane coordinates per hit axis
    planes = {0: (2, 1), 1: (0, 2), 2: (0, 1)}
    for ax, (iu, iv) in planes.items():
        sel = axis == ax
        if not np.any(sel):
            continue
        tex = obj.face_textures[ax] if obj.face_textures else obj.texture
        out[sel] = tex.shade(pts[sel, iu], pts[sel, iv])
    return out


def raycast(scene: SceneSpec, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """(color (h, w, 3) in [0, 1], radial depth (h, w)) seen from the camera."""
    scene.validate()
    if h <= 0 or w != 2 * h:
        raise SceneError(f"panorama must be 2:1, got {w}x{h}")
    d = unit_rays(w, h)
    o = np.asarray(scene.camera, dtype=np.float64)
    rw, rd, rh = scene.room
    lo = np.array([-rw / 2, 0.0, -rd / 2])
    hi = np.array([rw / 2, rh, rd / 2])

    # exit distance through each room slab, always finite for a closed room
    with np.errstate(divide="ignore"):
        t_axes = np.where(d > 0, (hi - o) / d, np.where(d < 0, (lo - o) / d, np.inf))
    exit_axis = t_axes.argmin(axis=-1)
    depth = t_axes.min(axis=-1)
    pts = o + d * depth[..., None]
    color = np.empty((h, w, 3))
    positive = np.take_along_axis(d, exit_axis[..., None], axis=-1)[..., 0] > 0
    surfaces = [
        (exit_axis == 0) & positive, (exit_axis == 0) & ~positive,
        (exit_axis == 2) & positive, (exit_axis == 2) & ~positive,
    ]
    for tex, sel in zip(scene.walls, surfaces):
        # walls: u along the wall, v is height
        u = np.where(exit_axis[sel] == 0, pts[sel, 2], pts[sel, 0])
        color[sel] = tex.shade(u, pts[sel, 1])
    floor = (exit_axis == 1) & ~positive
    ceil = (exit_axis == 1) & positive
    color[floor] = scene.floor.shade(pts[floor, 0], pts[floor, 2])
    color[ceil] = scene.ceiling.shade(pts[ceil, 0], pts[ceil, 2])

    for obj in scene.objects:
        if isinstance(obj, Box):
            t, axis = _box_entry(o, d, obj.lo, obj.hi)
        else:
            t = _sphere_entry(o, d, obj.center, obj.radius)
        closer = t < depth
        if not np.any(closer):
            continue
        depth = np.where(closer, t, depth)
        p = o + d[closer] * t[closer][..., None]
        if isinstance(obj, Box):
            color[closer] = _box_colors(obj, p, axis[closer])
        else:
            n = (p - np.asarray(obj.center)) / obj.radius
            color[closer] = obj.texture.shade(np.arctan2(n[:, 0], n[:, 2]), n[:, 1])
    return color, depth


def gen_pair(scene: SceneSpec, dy: float, w: int, h: int):
    """Source render at camera_height and target render at camera_height + dy."""
    src = raycast(scene, w, h)
    tgt = raycast(scene.with_height(scene.camera_height + dy), w, h)
    return src, tgt


# --- scene files -------------------------------------------------------------


def _texture_from(doc) -> Texture:
    if doc is None:
        return None
    c2 = doc.get("color2")
    return Texture(tuple(doc["color"]), tuple(c2) if c2 is not None else None, float(doc.get("tile", 0.5)))


def scene_to_dict(scene: SceneSpec) -> dict:
    objs = []
    for obj in scene.objects:
        entry = asdict(obj)
        entry["type"] = "box" if isinstance(obj, Box) else "sphere"
        objs.append(entry)
    doc = asdict(scene)
    doc["objects"] = objs
    return {"format": SCENE_FORMAT, "version": SCENE_VERSION, "scene": doc}


def scene_from_dict(doc: dict) -> SceneSpec:
    if doc.get("format") != SCENE_FORMAT or doc.get("version") != SCENE_VERSION:
        raise SceneError(f"unsupported scene header: {doc.get('format')!r} v{doc.get('version')!r}")
    s = doc["scene"]
    base = SceneSpec()
    objects = []
    for o in s.get("objects", []):
        kind = o.get("type")
        if kind == "box":
            ft = o.get("face_textures")
            objects.append(Box(tuple(o["lo"]), tuple(o["hi"]), _texture_from(o.get("texture")) or Box.texture,
                               tuple(_texture_from(t) for t in ft) if ft else None))
        elif kind == "sphere":
            objects.append(Sphere(tuple(o["center"]), float(o["radius"]),
                                  _texture_from(o.get("texture")) or Sphere.texture))
        else:
            raise SceneError(f"unknown object type {kind!r}")
    walls = s.get("walls")
    scene = SceneSpec(
        room=tuple(s.get("room", base.room)),
        objects=tuple(objects),
        camera_height=float(s.get("camera_height", base.camera_height)),
        camera_x=float(s.get("camera_x", 0.0)),
        camera_z=float(s.get("camera_z", 0.0)),
        floor=_texture_from(s.get("floor")) or base.floor,
        ceiling=_texture_from(s.get("ceiling")) or base.ceiling,
        walls=tuple(_texture_from(t) for t in walls) if walls else base.walls,
    )
    scene.validate()
    return scene


def load_scene(path) -> SceneSpec:
    return scene_from_dict(json.loads(Path(path).read_text()))


def save_scene(path, scene: SceneSpec) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")
