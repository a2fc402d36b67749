"""Depth and colour inpainting for synthesis regions, plus loss functions.

Inpainters are callables ``(InpaintRequest) -> InpaintResult``. The default
:class:`ClassicalInpainter` runs harmonic depth diffusion and onion-peel
exemplar colour synthesis. :class:`ExternalInpainter` hands the request to
another process through files (PNG colour and mask, PFM depth).
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import io


class InpaintError(ValueError):
    pass


@dataclass
class InpaintRequest:
    """Cells are (column, row) on a ``width`` x ``height`` equirectangular grid."""

    width: int
    height: int
    context_cells: np.ndarray
    context_color: np.ndarray
    context_depth: np.ndarray
    synthesis_cells: np.ndarray
    edge: object = None
    # overrides the depth clamp floor (default: min context depth touching synthesis)
    boundary_depth: float | None = None

    def __post_init__(self):
        self.context_cells = np.asarray(self.context_cells, dtype=np.int64).reshape(-1, 2)
        self.synthesis_cells = np.asarray(self.synthesis_cells, dtype=np.int64).reshape(-1, 2)
        self.context_color = np.asarray(self.context_color, dtype=np.float64).reshape(-1, 3)
        self.context_depth = np.asarray(self.context_depth, dtype=np.float64).reshape(-1)
        if len(self.context_cells) == 0:
            raise InpaintError("empty context region")
        if len(self.context_color) != len(self.context_cells) or len(self.context_depth) != len(self.context_cells):
            raise InpaintError("context arrays differ in length")
        ctx = set(map(tuple, self.context_cells.tolist()))
        if any(tuple(c) in ctx for c in self.synthesis_cells.tolist()):
            raise InpaintError("context and synthesis regions overlap")

    def frame(self, margin: int = 0) -> Frame:
        return Frame.around(self, margin)


@dataclass
class InpaintResult:
    depth: np.ndarray
    color: np.ndarray


class Inpainter(Protocol):
    def __call__(self, req: InpaintRequest) -> InpaintResult: ...


@dataclass
class Frame:
    """Local raster covering a request, unwrapped across the longitude seam."""

    col0: int
    row0: int
    cols: int
    rows: int
    width: int

    @classmethod
    def around(cls, req: InpaintRequest, margin: int) -> Frame:
        cells = np.vstack([req.context_cells, req.synthesis_cells])
        ucols = np.unique(cells[:, 0])
        if len(ucols) == 1:
            start, span = int(ucols[0]), 1
        else:
            gaps = np.diff(np.concatenate([ucols, [ucols[0] + req.width]]))
            g = int(np.argmax(gaps))
            start = int(ucols[(g + 1) % len(ucols)])
            span = req.width - int(gaps[g]) + 1
        if span + 2 * margin > req.width:
            col0, cols = 0, req.width
        else:
            col0, cols = start - margin, span + 2 * margin
        row0 = int(cells[:, 1].min()) - margin
        rows = int(cells[:, 1].max()) - row0 + 1 + margin
        return cls(col0=col0, row0=row0, cols=cols, rows=rows, width=req.width)

    def local(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) local indices for global (column, row) cells."""
        c = np.mod(cells[:, 0] - self.col0, self.width)
        return cells[:, 1] - self.row0, c

    def raster(self, cells, values, fill, channels: int = 0) -> np.ndarray:
        shape = (self.rows, self.cols) + ((channels,) if channels else ())
        out = np.full(shape, fill, dtype=np.float64)
        r, c = self.local(cells)
        out[r, c] = values
        return out

    def mask(self, cells) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=bool)
        r, c = self.local(cells)
        out[r, c] = True
        return out


def _shift(a: np.ndarray, dr: int, dc: int, fill) -> np.ndarray:
    """out[r, c] = a[r + dr, c + dc], ``fill`` where that falls outside."""
    out = np.full_like(a, fill)
    h, w = a.shape[:2]
    rs = slice(max(-dr, 0), h - max(dr, 0))
    cs = slice(max(-dc, 0), w - max(dc, 0))
    rd = slice(max(dr, 0), h - max(-dr, 0))
    cd = slice(max(dc, 0), w - max(-dc, 0))
    out[rs, cs] = a[rd, cd]
    return out


_NEIGHBORS4 = ((0, -1), (0, 1), (-1, 0), (1, 0))


def _nearest_seed_fill(values, known, region):
    """Give every region cell the value of a nearest known cell (BFS through region)."""
    vals = values.copy()
    have = known.copy()
    todo = region & ~have
    while np.any(todo):
        grown = False
        for dr, dc in _NEIGHBORS4:
            src_have = _shift(have, dr, dc, False)
            take = todo & src_have
            if np.any(take):
                vals[take] = _shift(vals, dr, dc, 0.0)[take]
                have = have | take
                todo = todo & ~take
                grown = True
        if not grown:
            break
    return vals, have


def _frame_rays(fr: Frame, height: int) -> np.ndarray:
    rr, cc = np.indices((fr.rows, fr.cols))
    phi = (np.mod(cc + fr.col0, fr.width) + 0.5) / fr.width * 2.0 * np.pi - np.pi
    theta = np.pi / 2 - (np.clip(rr + fr.row0, 0, height - 1) + 0.5) / height * np.pi
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta), np.cos(theta) * np.cos(phi)], axis=-1)


PLANE_FIT_RINGS = 5
PLANE_FIT_RMS = 0.01


def _plane_trend(vals: np.ndarray, known: np.ndarray, syn: np.ndarray, rays: np.ndarray):
    """Depth of the plane fitted to the context cells nearest the synthesis region.

    Fits 1/r = a . d + b by least squares over context cells within
    PLANE_FIT_RINGS steps of the synthesis region. A planar background
    n . X = p satisfies this exactly with b = 0, and a constant radial depth is
    the case a = 0. Returns None when the fit is degenerate or leaves a
    relative RMS residual above PLANE_FIT_RMS (several surfaces in view).
    """
    near = syn.copy()
    for _ in range(PLANE_FIT_RINGS):
        grown = near.copy()
        for dr, dc in _NEIGHBORS4:
            grown |= _shift(near, dr, dc, False)
        near = grown
    sel = known & near
    kv = vals[sel]
    if len(kv) < 8:
        return None
    if np.all(kv == kv[0]):
        return np.full(vals.shape, kv[0])
    A = np.concatenate([rays[sel], np.ones((len(kv), 1))], axis=1)
    coef, *_ = np.linalg.lstsq(A, 1.0 / kv, rcond=None)
    inv = rays @ coef[:3] + coef[3]
    if np.any(inv[syn | known] <= 0):
        return None
    pred = 1.0 / np.where(inv > 0, inv, np.inf)
    rms = np.sqrt(np.mean(((pred[sel] - kv) / kv) ** 2))
    if not rms <= PLANE_FIT_RMS:
        return None
    return pred


def inpaint_depth_diffusion(req: InpaintRequest, tol: float = 1e-4, max_iter: int = 2000,
                            detrend: bool = True) -> np.ndarray:
    """Harmonic fill of synthesis depths with context cells as fixed boundary.

    Red-black Gauss-Seidel sweeps of the 4-neighbour Laplacian; cells that are
    neither context nor synthesis act as insulated (zero-flux) borders. Stops
    once the largest per-sweep change drops below ``tol`` metres or after
    ``max_iter`` sweeps, then clamps to the smallest context depth adjacent to
    the synthesis region.

    With ``detrend``, the depth of a plane fitted to the nearby context (see
    :func:`_plane_trend`) is subtracted first and added back afterwards, so
    only the residual is diffused and a planar background keeps its shape
    instead of flattening out against the insulated borders. Without a good
    plane fit the depths are diffused directly.
    """
    if len(req.context_cells) == 0:
        raise InpaintError("empty context region")
    if len(req.synthesis_cells) == 0:
        return np.zeros(0)
    fr = req.frame(margin=1)
    known = fr.mask(req.context_cells)
    syn = fr.mask(req.synthesis_cells)
    vals = fr.raster(req.context_cells, req.context_depth, 0.0)
    active = known | syn

    touching = np.zeros_like(known)
    for dr, dc in _NEIGHBORS4:
        touching |= _shift(syn, dr, dc, False)
    boundary = known & touching
    floor = float(vals[boundary].min()) if np.any(boundary) else float(req.context_depth.min())
    if req.boundary_depth is not None:
        floor = req.boundary_depth

    trend = _plane_trend(vals, known, syn, _frame_rays(fr, req.height)) if detrend else None
    if trend is None:
        trend = np.zeros(vals.shape)
    vals = np.where(known, vals - trend, 0.0)
    vals, reached = _nearest_seed_fill(vals, known, syn)
    vals[syn & ~reached] = 0.0

    counts = np.zeros(vals.shape)
    for dr, dc in _NEIGHBORS4:
        counts += _shift(active, dr, dc, False)
    rr, cc = np.indices(vals.shape)
    parity = (rr + cc) % 2
    sweep = [syn & (counts > 0) & (parity == p) for p in (0, 1)]
    safe_counts = np.maximum(counts, 1)
    for _ in range(max_iter):
        change = 0.0
        for upd in sweep:
            acc = np.zeros_like(vals)
            for dr, dc in _NEIGHBORS4:
                acc += np.where(_shift(active, dr, dc, False), _shift(vals, dr, dc, 0.0), 0.0)
            new = acc / safe_counts
            if np.any(upd):
                change = max(change, float(np.max(np.abs(new[upd] - vals[upd]))))
                vals[upd] = new[upd]
        if change < tol:
            break
    r, c = fr.local(req.synthesis_cells)
    return np.maximum(vals[r, c] + trend[r, c], floor)


def inpaint_color_exemplar(req: InpaintRequest, patch_size: int = 7) -> np.ndarray:
    """Onion-peel exemplar synthesis of synthesis-cell colours.

    Rings are filled from the synthesis boundary inward. Within a ring, cells
    are visited in raster order; each still-empty cell takes its whole
    patch_size x patch_size neighbourhood's empty synthesis cells from the
    context patch with the lowest squared difference over the known cells.
    Source patches must lie entirely inside the context. Ties go to the
    first patch in raster order.
    """
    if patch_size < 1 or patch_size % 2 == 0:
        raise InpaintError("patch_size must be a positive odd number")
    if len(req.synthesis_cells) == 0:
        return np.zeros((0, 3))
    rad = patch_size // 2
    fr = req.frame(margin=rad)
    ctx = fr.mask(req.context_cells)
    syn = fr.mask(req.synthesis_cells)
    img = fr.raster(req.context_cells, req.context_color, 0.0, channels=3)

    full = sliding_window_view(ctx, (patch_size, patch_size)).all(axis=(2, 3))
    src_r, src_c = np.nonzero(full)
    if len(src_r) == 0:
        raise InpaintError("context holds no complete patch")
    windows = sliding_window_view(img, (patch_size, patch_size), axis=(0, 1))
    # (P, k*k*3), ordered row, col, channel
    sources = windows[src_r, src_c].transpose(0, 2, 3, 1).reshape(len(src_r), -1)
    src_sq = sources ** 2

    filled = ctx.copy()
    todo = syn.copy()
    fallback = req.context_color.mean(axis=0)
    while np.any(todo):
        near = np.zeros_like(todo)
        for dr, dc in _NEIGHBORS4:
            near |= _shift(filled, dr, dc, False)
        ring = todo & near
        if not np.any(ring):
            img[todo] = fallback
            break
        for r, c in zip(*np.nonzero(ring)):
            if not todo[r, c]:
                continue
            r0, c0 = r - rad, c - rad
            # pad implicitly: clip the window to the frame
            pr0, pc0 = max(r0, 0), max(c0, 0)
            pr1, pc1 = min(r0 + patch_size, fr.rows), min(c0 + patch_size, fr.cols)
            tgt = np.zeros((patch_size, patch_size, 3))
            known = np.zeros((patch_size, patch_size), dtype=bool)
            tgt[pr0 - r0:pr1 - r0, pc0 - c0:pc1 - c0] = img[pr0:pr1, pc0:pc1]
            known[pr0 - r0:pr1 - r0, pc0 - c0:pc1 - c0] = filled[pr0:pr1, pc0:pc1]
            m = np.repeat(known.reshape(-1), 3).astype(np.float64)
            t = tgt.reshape(-1)
            cost = src_sq @ m - 2.0 * (sources @ (t * m))
            best = int(np.argmin(cost))
            patch = sources[best].reshape(patch_size, patch_size, 3)
            write = np.zeros((patch_size, patch_size), dtype=bool)
            write[pr0 - r0:pr1 - r0, pc0 - c0:pc1 - c0] = todo[pr0:pr1, pc0:pc1]
            region = (slice(pr0, pr1), slice(pc0, pc1))
            sub = write[pr0 - r0:pr1 - r0, pc0 - c0:pc1 - c0]
            img[region][sub] = patch[pr0 - r0:pr1 - r0, pc0 - c0:pc1 - c0][sub]
            filled[region] |= sub
            todo[region] &= ~sub
    r, c = fr.local(req.synthesis_cells)
    return np.clip(img[r, c], 0.0, 1.0)


@dataclass
class ClassicalInpainter:
    """Diffusion depth plus exemplar colour.

    When a narrow context holds no complete patch, the patch shrinks by two
    until one fits (down to a single pixel).
    """

    patch_size: int = 7
    tol: float = 1e-4
    max_iter: int = 2000

    def __call__(self, req: InpaintRequest) -> InpaintResult:
        depth = inpaint_depth_diffusion(req, self.tol, self.max_iter)
        for size in range(self.patch_size, 0, -2):
            try:
                color = inpaint_color_exemplar(req, size)
                break
            except InpaintError:
                if size == 1:
                    raise
        return InpaintResult(depth=depth, color=color)


# --- external process exchange ----------------------------------------------

REQUEST_FILES = ("context_color.png", "context_depth.pfm", "synthesis_mask.png")
RESPONSE_FILES = ("depth.pfm", "color.png")


def write_request(req: InpaintRequest, directory) -> None:
    """Write a request as full-grid rasters: context colour/depth and synthesis mask.

    Cells outside the context are black in the colour PNG and 0 in the PFM.
    """
    d = Path(directory)
    color = np.zeros((req.height, req.width, 3))
    depth = np.zeros((req.height, req.width), dtype=np.float32)
    mask = np.zeros((req.height, req.width), dtype=bool)
    cc, cr = req.context_cells[:, 0], req.context_cells[:, 1]
    color[cr, cc] = req.context_color
    depth[cr, cc] = req.context_depth
    mask[req.synthesis_cells[:, 1], req.synthesis_cells[:, 0]] = True
    io.write_color(d / REQUEST_FILES[0], color)
    io.write_pfm(d / REQUEST_FILES[1], depth)
    io.write_mask(d / REQUEST_FILES[2], mask)


def read_request(directory) -> InpaintRequest:
    d = Path(directory)
    color = io.read_color(d / REQUEST_FILES[0])
    depth = io.read_pfm(d / REQUEST_FILES[1]).astype(np.float64)
    mask = io.read_mask(d / REQUEST_FILES[2])
    h, w = depth.shape
    ctx = np.argwhere(depth > 0)[:, ::-1]
    syn = np.argwhere(mask)[:, ::-1]
    return InpaintRequest(w, h, ctx, color[ctx[:, 1], ctx[:, 0]], depth[ctx[:, 1], ctx[:, 0]], syn)


def write_response(result: InpaintResult, req: InpaintRequest, directory) -> None:
    d = Path(directory)
    depth = np.zeros((req.height, req.width), dtype=np.float32)
    color = np.zeros((req.height, req.width, 3))
    sc, sr = req.synthesis_cells[:, 0], req.synthesis_cells[:, 1]
    depth[sr, sc] = result.depth
    color[sr, sc] = result.color
    io.write_pfm(d / RESPONSE_FILES[0], depth)
    io.write_color(d / RESPONSE_FILES[1], color)


def read_response(req: InpaintRequest, directory) -> InpaintResult:
    d = Path(directory)
    depth = io.read_pfm(d / RESPONSE_FILES[0]).astype(np.float64)
    color = io.read_color(d / RESPONSE_FILES[1])
    if depth.shape != (req.height, req.width) or color.shape[:2] != depth.shape:
        raise InpaintError("response rasters do not match the request grid")
    sc, sr = req.synthesis_cells[:, 0], req.synthesis_cells[:, 1]
    return InpaintResult(depth=depth[sr, sc], color=color[sr, sc])


@dataclass
class ExternalInpainter:
    """Run ``command + [workdir]`` per request; it must write the response files there."""

    command: list
    timeout: float = 600.0

    def __call__(self, req: InpaintRequest) -> InpaintResult:
        with tempfile.TemporaryDirectory(prefix="panoshift-inpaint-") as tmp:
            write_request(req, tmp)
            proc = subprocess.run([*self.command, tmp], capture_output=True, timeout=self.timeout)
            if proc.returncode != 0:
                raise InpaintError(f"external inpainter failed ({proc.returncode}): {proc.stderr.decode()[-500:]}")
            return read_response(req, tmp)


# --- losses ------------------------------------------------------------------


def berhu_loss(pred, gt) -> float:
    """Mean reverse-Huber loss; threshold c is a fifth of the largest error."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InpaintError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    e = np.abs(pred - gt)
    c = e.max() / 5.0
    if c == 0:
        return 0.0
    loss = np.where(e <= c, e, (e ** 2 + c ** 2) / (2.0 * c))
    return float(loss.mean())


def masked_l1(a, b, mask) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if a.shape != b.shape:
        raise InpaintError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask.shape != a.shape[:mask.ndim]:
        raise InpaintError(f"mask {mask.shape} does not match {a.shape}")
    n = int(mask.sum())
    if n == 0:
        raise InpaintError("mask selects no pixels")
    diff = np.abs(a - b)[mask]
    # colour inputs: per-pixel L1 sums the channels
    return float(diff.sum() / n)


def color_objective(a, b, mask, alpha: float = 1.0, beta: float = 0.05,
                    perceptual: Callable | None = None) -> float:
    value = alpha * masked_l1(a, b, mask)
    if perceptual is not None:
        value += beta * float(perceptual(a, b))
    return value
