"""Eye-height shift of LDI pixels and z-buffered equirectangular rendering."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ldi as L
from .config import Config
from .geometry import GeometryError, SphericalPoint, TWO_PI, HALF_PI, check_equirect
from .inpaint import ClassicalInpainter, InpaintRequest

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def shift_arrays(phi, theta, r, dy: float):
    """Closed-form vertical shift: returns (phi', theta', r').

    The camera moves up by dy, so every point moves down by dy relative to
    it. Longitude is untouched.
    """
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    up = r * np.sin(theta) - dy
    horiz = r * np.cos(theta)
    r2 = np.sqrt(r * r - 2.0 * r * dy * np.sin(theta) + dy * dy)
    return phi, np.arctan2(up, horiz), r2


def shift_point(p: SphericalPoint, dy: float) -> SphericalPoint:
    if not np.isfinite(dy):
        raise GeometryError("dy must be finite")
    phi, theta, r = shift_arrays(p.phi, p.theta, p.r, dy)
    if np.any(r <= 0):
        raise GeometryError("shifted point coincides with the camera")
    return SphericalPoint(phi=phi, theta=theta, r=r)


@dataclass
class RenderedView:
    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray
    # winning LDI pixel per target pixel; -1 for holes and median-filled pixels
    source: np.ndarray
    ldi: L.LayeredDepthImage | None = None
    stats: dict = field(default_factory=dict)


def _project_chunk(ldi: L.LayeredDepthImage, sl: slice, dy: float, w: int, h: int):
    pos = ldi.pos[sl]
    phi = (pos[:, 0] + 0.5) / ldi.width * TWO_PI - np.pi
    theta = HALF_PI - (pos[:, 1] + 0.5) / ldi.height * np.pi
    _, theta2, r2 = shift_arrays(phi, theta, ldi.depth[sl], dy)
    u = (phi + np.pi) / TWO_PI * w - 0.5
    v = (HALF_PI - theta2) / np.pi * h - 0.5
    return u, v, r2


def project(ldi: L.LayeredDepthImage, dy: float, w: int, h: int, workers: int = 1):
    """Continuous target coordinates (u, v) and shifted depth of every pool pixel."""
    n = ldi.size
    if workers <= 1 or n < 4096:
        return _project_chunk(ldi, slice(0, n), dy, w, h)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda s: _project_chunk(ldi, s, dy, w, h), slices))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def _zbuffer(target: np.ndarray, depth: np.ndarray, npix: int):
    """Index into the candidate arrays of the nearest candidate per target pixel.

    Ties in depth go to the earlier candidate.
    """
    order = np.lexsort((np.arange(len(target)), depth, target))
    t_sorted = target[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = t_sorted[1:] != t_sorted[:-1]
    win = order[first]
    return target[win], win


# 8-neighbourhood offsets (drow, dcol)
_RING = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _ring_values(a: np.ndarray, fill):
    """Stack of the 8 neighbours of every pixel, wrapping columns only."""
    h = a.shape[0]
    out = []
    for dr, dc in _RING:
        s = np.roll(a, -dc, axis=1)
        shifted = np.full_like(a, fill)
        if dr == -1:
            shifted[1:] = s[:-1]
        elif dr == 1:
            shifted[:-1] = s[1:]
        else:
            shifted = s
        out.append(shifted)
    return np.stack(out)


def median_fill(color: np.ndarray, depth: np.ndarray, coverage: np.ndarray, min_neighbors: int = 5):
    """One 3x3 median pass over holes that have at least min_neighbors covered neighbours."""
    cov = _ring_values(coverage, False)
    n_cov = cov.sum(axis=0)
    holes = ~coverage & (n_cov >= min_neighbors)
    if not np.any(holes):
        return color, depth, coverage
    color = color.copy()
    depth = depth.copy()
    rr, cc = np.nonzero(holes)
    cov_h = cov[:, rr, cc]
    d_ring = _ring_values(depth, np.nan)[:, rr, cc]
    depth[rr, cc] = np.nanmedian(np.where(cov_h, d_ring, np.nan), axis=0)
    for ch in range(3):
        c_ring = _ring_values(color[..., ch], np.nan)[:, rr, cc]
        color[rr, cc, ch] = np.nanmedian(np.where(cov_h, c_ring, np.nan), axis=0)
    coverage = coverage | holes
    return color, depth, coverage


def render(ldi: L.LayeredDepthImage, dy: float, w: int | None = None, h: int | None = None,
           footprint: str = "nearest", workers: int = 1) -> RenderedView:
    """Forward-splat every LDI pixel into the view raised by ``dy`` metres."""
    w = ldi.width if w is None else w
    h = ldi.height if h is None else h
    if h <= 0 or w != 2 * h:
        raise GeometryError(f"output must be 2:1, got {w}x{h}")
    if not np.isfinite(dy):
        raise GeometryError("dy must be finite")
    u, v, r2 = project(ldi, dy, w, h, workers)
    keep = r2 > 1e-9
    idx = np.nonzero(keep)[0]
    u, v, r2 = u[keep], v[keep], r2[keep]
    npix = w * h
    color = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    source = np.full(npix, -1, dtype=np.int64)

    if footprint == "nearest":
        col = np.mod(np.rint(u).astype(np.int64), w)
        row = np.clip(np.rint(v).astype(np.int64), 0, h - 1)
        tgt, win = _zbuffer(row * w + col, r2, npix)
        color.reshape(-1, 3)[tgt] = ldi.color[idx[win]]
        depth.reshape(-1)[tgt] = r2[win]
        source[tgt] = idx[win]
    elif footprint == "bilinear":
        c0 = np.floor(u).astype(np.int64)
        r0 = np.floor(v).astype(np.int64)
        fu, fv = u - c0, v - r0
        tg, wt, cand = [], [], []
        for dc, dr, wgt in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                            (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
            rr = r0 + dr
            # zero-weight taps must not win the z-test
            ok = (rr >= 0) & (rr < h) & (wgt > 1e-9)
            tg.append((rr * w + np.mod(c0 + dc, w))[ok])
            wt.append(wgt[ok])
            cand.append(np.nonzero(ok)[0])
        tg, wt, cand = np.concatenate(tg), np.concatenate(wt), np.concatenate(cand)
        tgt, win = _zbuffer(tg, r2[cand], npix)
        zmin = np.full(npix, np.inf)
        zmin[tgt] = r2[cand[win]]
        front_src = idx[cand[win]]
        # blend candidates on the front surface, within 2% of the nearest depth
        front = r2[cand] <= zmin[tg] * 1.02
        tg, wt, cand = tg[front], wt[front], cand[front]
        acc = np.zeros((npix, 3))
        wsum = np.zeros(npix)
        dacc = np.zeros(npix)
        np.add.at(acc, tg, ldi.color[idx[cand]] * wt[:, None])
        np.add.at(dacc, tg, r2[cand] * wt)
        np.add.at(wsum, tg, wt)
        hit = wsum > 1e-6
        color.reshape(-1, 3)[hit] = acc[hit] / wsum[hit, None]
        depth.reshape(-1)[hit] = dacc[hit] / wsum[hit]
        source[tgt] = front_src
        source[~hit] = -1
    else:
        raise ValueError(f"unknown footprint {footprint!r}")

    coverage = (source >= 0).reshape(h, w)
    color, depth, coverage = median_fill(color, depth, coverage)
    return RenderedView(color=color, depth=depth, coverage=coverage, source=source.reshape(h, w))


# --- full pipeline -----------------------------------------------------------


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


def classical_inpainter(config: Config) -> ClassicalInpainter:
    return ClassicalInpainter(config.patch_size, config.diffusion_tol, config.diffusion_max_iter)


def layer_ldi(color, depth, seg=None, config: Config = Config(), inpainter=None) -> tuple[L.LayeredDepthImage, dict]:
    """Build, cut and inpaint the LDI; returns it with per-stage statistics."""
    with _Stage("input"):
        color = check_equirect(np.asarray(color, dtype=np.float64), "color")
        depth = check_equirect(np.asarray(depth, dtype=np.float64), "depth")
        if color.shape != depth.shape + (3,):
            raise ValueError(f"color {color.shape} does not match depth {depth.shape}")
    with _Stage("build_ldi"):
        ldi = L.build_ldi(color, depth)
    with _Stage("detect_discontinuities"):
        mask = L.detect_discontinuities(depth, seg, config.tau)
    with _Stage("group_edges"):
        edges = L.group_edges(mask, depth, config.tau, config.min_edge_length)
    with _Stage("disconnect"):
        ldi = L.disconnect(ldi, edges)
    inpainter = inpainter or classical_inpainter(config)
    claimed = np.zeros(depth.shape, dtype=bool)
    synthesized = []
    for k, edge in enumerate(edges):
        with _Stage(f"regions[{k}]"):
            reg = L.context_synthesis_regions(ldi, edge, config.dilation, config.tau, claimed)
        claimed |= reg.synthesis
        if not reg.synthesis.any() or len(reg.context_pixels) == 0:
            synthesized.append(0)
            continue
        rows, cols = np.nonzero(reg.synthesis)
        cells = np.stack([cols, rows], axis=1)
        cp = reg.context_pixels
        req = InpaintRequest(
            width=ldi.width, height=ldi.height,
            context_cells=ldi.pos[cp], context_color=ldi.color[cp], context_depth=ldi.depth[cp],
            synthesis_cells=cells, edge=edge,
        )
        with _Stage(f"inpaint[{k}]"):
            res = inpainter(req)
        with _Stage(f"merge[{k}]"):
            fg = ldi.depth[ldi.front()[rows, cols]]
            ok = np.asarray(res.depth) > fg
            ldi = L.merge_inpainted(ldi, reg, cells[ok], np.asarray(res.depth)[ok], np.asarray(res.color)[ok])
        synthesized.append(int(ok.sum()))
    stats = {"edges": len(edges), "edge_lengths": [len(e) for e in edges],
             "synthesized": synthesized, "pool_size": ldi.size}
    log.debug("ldi stats: %s", stats)
    return ldi, stats


def adapt(color, depth, seg=None, dy: float = 0.0, config: Config = Config(), inpainter=None) -> RenderedView:
    """Re-render an RGB-D panorama from an eye height raised by ``dy`` metres."""
    ldi, stats = layer_ldi(color, depth, seg, config, inpainter)
    with _Stage("render"):
        view = render(ldi, dy, config.width, config.height, config.footprint, config.workers)
    view.ldi = ldi
    view.stats = stats
    return view
