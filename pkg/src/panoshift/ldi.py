"""Layered depth image built from one RGB-D panorama.

Pixels live in flat arrays (struct of arrays) rather than per-pixel objects:

    color  (N, 3)  RGB in [0, 1]
    depth  (N,)    radial metres
    pos    (N, 2)  (column, row) on the source grid
    links  (N, 4)  neighbour pixel index per direction, -1 when absent

Direction slots are LEFT, RIGHT, UP, DOWN. Horizontal links wrap across the
longitude seam; vertical links stop at the first and last rows. Operations
return new LDIs and leave their input untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

LEFT, RIGHT, UP, DOWN = 0, 1, 2, 3
OPPOSITE = np.array([RIGHT, LEFT, DOWN, UP])
# (dcol, drow) per direction slot
OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))
MIN_EDGE_LENGTH = 10
DEFAULT_TAU = 1.15
DEFAULT_DILATION = 20


class LdiError(ValueError):
    pass


def neighbor_cells(col, row, direction: int, w: int, h: int):
    """Neighbouring cell coordinates and a validity mask (no vertical wrap)."""
    dc, dr = OFFSETS[direction]
    ncol = np.mod(np.asarray(col) + dc, w)
    nrow = np.asarray(row) + dr
    valid = (nrow >= 0) & (nrow < h)
    return ncol, np.clip(nrow, 0, h - 1), valid


@dataclass
class LayeredDepthImage:
    width: int
    height: int
    color: np.ndarray
    depth: np.ndarray
    pos: np.ndarray
    links: np.ndarray
    _index: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.depth)

    def copy(self) -> LayeredDepthImage:
        return LayeredDepthImage(self.width, self.height, self.color.copy(), self.depth.copy(),
                                 self.pos.copy(), self.links.copy())

    def cell_ids(self) -> np.ndarray:
        return self.pos[:, 1] * self.width + self.pos[:, 0]

    def grid_index(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR view of the per-cell pixel lists: (starts, members).

        Pixels of cell k are ``members[starts[k]:starts[k + 1]]`` in ascending
        depth, ties broken by pool index.
        """
        if self._index is None:
            cells = self.cell_ids()
            order = np.lexsort((np.arange(self.size), self.depth, cells))
            counts = np.bincount(cells, minlength=self.width * self.height)
            starts = np.concatenate([[0], np.cumsum(counts)])
            self._index = (starts, order)
        return self._index

    def cell(self, col: int, row: int) -> np.ndarray:
        starts, members = self.grid_index()
        k = row * self.width + col
        return members[starts[k]:starts[k + 1]]

    def layer_counts(self) -> np.ndarray:
        return np.bincount(self.cell_ids(), minlength=self.width * self.height).reshape(self.height, self.width)

    def front(self) -> np.ndarray:
        """Index of the nearest pixel in every cell, (h, w)."""
        starts, members = self.grid_index()
        if np.any(starts[1:] == starts[:-1]):
            raise LdiError("empty grid cell")
        return members[starts[:-1]].reshape(self.height, self.width)

    def check_links(self) -> None:
        """Raise if any link is asymmetric or points at a non-adjacent cell."""
        for d in range(4):
            src = np.nonzero(self.links[:, d] >= 0)[0]
            dst = self.links[src, d]
            if np.any(self.links[dst, OPPOSITE[d]] != src):
                raise LdiError(f"asymmetric link in direction {d}")
            ncol, nrow, valid = neighbor_cells(self.pos[src, 0], self.pos[src, 1], d, self.width, self.height)
            if not np.all(valid) or np.any(self.pos[dst, 0] != ncol) or np.any(self.pos[dst, 1] != nrow):
                raise LdiError(f"link in direction {d} joins non-adjacent cells")


def build_ldi(color: np.ndarray, depth: np.ndarray) -> LayeredDepthImage:
    """Single fully connected layer, one pixel per cell, index = row * w + col."""
    color = np.asarray(color, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2 or color.shape != depth.shape + (3,):
        raise LdiError(f"color {color.shape} does not match depth {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise LdiError("depth must be finite and positive")
    h, w = depth.shape
    rows, cols = np.divmod(np.arange(w * h), w)
    links = np.empty((w * h, 4), dtype=np.int64)
    for d in range(4):
        ncol, nrow, valid = neighbor_cells(cols, rows, d, w, h)
        links[:, d] = np.where(valid, nrow * w + ncol, -1)
    return LayeredDepthImage(
        width=w, height=h,
        color=color.reshape(-1, 3).copy(),
        depth=depth.reshape(-1).copy(),
        pos=np.stack([cols, rows], axis=1),
        links=links,
    )


# --- discontinuities ---------------------------------------------------------


def _neighbor_view(a: np.ndarray, direction: int, fill) -> np.ndarray:
    """Value of each pixel's neighbour in ``direction``; ``fill`` off the poles."""
    if direction == LEFT:
        return np.roll(a, 1, axis=1)
    if direction == RIGHT:
        return np.roll(a, -1, axis=1)
    out = np.full_like(a, fill)
    if direction == UP:
        out[1:] = a[:-1]
    else:
        out[:-1] = a[1:]
    return out


def background_directions(depth: np.ndarray, tau: float) -> np.ndarray:
    """Bitmask (bit d = direction d) of neighbours more than tau times deeper."""
    depth = np.asarray(depth, dtype=np.float64)
    bits = np.zeros(depth.shape, dtype=np.uint8)
    for d in range(4):
        nb = _neighbor_view(depth, d, np.nan)
        with np.errstate(invalid="ignore"):
            far = nb > depth * tau
        bits |= far.astype(np.uint8) << d
    return bits


def label_change_band(seg: np.ndarray) -> np.ndarray:
    """True where the 3x3 neighbourhood (longitude-wrapped) holds two labels."""
    seg = np.asarray(seg)
    lo = ndimage.minimum_filter(seg, size=3, mode=("nearest", "wrap"))
    hi = ndimage.maximum_filter(seg, size=3, mode=("nearest", "wrap"))
    return lo != hi


def detect_discontinuities(depth: np.ndarray, seg: np.ndarray | None = None,
                           tau: float = DEFAULT_TAU) -> np.ndarray:
    """Binary mask marking the nearer side of every depth jump above ratio tau.

    With a segmentation map, a mark survives only where a label boundary lies
    within one pixel.
    """
    if not tau > 1:
        raise LdiError("tau must be greater than 1")
    depth = np.asarray(depth, dtype=np.float64)
    mask = background_directions(depth, tau) != 0
    if seg is not None:
        seg = np.asarray(seg)
        if seg.shape != depth.shape:
            raise LdiError(f"segmentation {seg.shape} does not match depth {depth.shape}")
        mask &= label_change_band(seg)
    return mask.astype(np.uint8)


@dataclass(frozen=True)
class LocalEdge:
    """One 4-connected chain of discontinuity pixels.

    ``pixels`` are (column, row) in raster order. ``background`` holds, per
    pixel, a direction bitmask of the deeper neighbours across the edge;
    fg_depth/bg_depth are the pixel depth and the nearest such neighbour depth.
    """

    pixels: np.ndarray
    background: np.ndarray
    fg_depth: np.ndarray
    bg_depth: np.ndarray

    def __len__(self) -> int:
        return len(self.pixels)


def wrapped_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected component labels with the left/right border joined.

    Labels run 1..n in order of each component's first pixel in raster order.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask)
    if n == 0:
        return labels, 0
    parent = np.arange(n + 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    seam = np.nonzero(mask[:, 0] & mask[:, -1])[0]
    for r in seam:
        a, b = find(labels[r, 0]), find(labels[r, -1])
        if a != b:
            parent[max(a, b)] = min(a, b)
    roots = np.array([find(i) for i in range(n + 1)])
    merged = roots[labels]
    flat = merged.ravel()
    present = flat[flat > 0]
    _, first = np.unique(present, return_index=True)
    uniq = present[np.sort(first)]
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[uniq] = np.arange(1, len(uniq) + 1)
    return remap[merged], len(uniq)


def group_edges(mask: np.ndarray, depth: np.ndarray, tau: float = DEFAULT_TAU,
                min_length: int = MIN_EDGE_LENGTH) -> list[LocalEdge]:
    """Connected components of the mask, dropping those shorter than min_length."""
    mask = np.asarray(mask).astype(bool)
    depth = np.asarray(depth, dtype=np.float64)
    if mask.shape != depth.shape:
        raise LdiError(f"mask {mask.shape} does not match depth {depth.shape}")
    labels, n = wrapped_components(mask)
    if n == 0:
        return []
    bits = background_directions(depth, tau)
    flat = labels.ravel()
    order = np.nonzero(flat)[0]
    order = order[np.argsort(flat[order], kind="stable")]
    counts = np.bincount(flat[order], minlength=n + 1)[1:]
    bounds = np.concatenate([[0], np.cumsum(counts)])
    h, w = mask.shape
    nb_depth = np.stack([_neighbor_view(depth, d, np.nan) for d in range(4)], axis=-1).reshape(-1, 4)
    edges = []
    for k in range(n):
        if counts[k] < min_length:
            continue
        idx = order[bounds[k]:bounds[k + 1]]
        b = bits.ravel()[idx]
        far = (b[:, None] >> np.arange(4)) & 1 == 1
        bg = np.where(far, nb_depth[idx], np.inf).min(axis=1)
        rows, cols = np.divmod(idx, w)
        edges.append(LocalEdge(
            pixels=np.stack([cols, rows], axis=1),
            background=b,
            fg_depth=depth.ravel()[idx],
            bg_depth=bg,
        ))
    return edges


# --- link editing ------------------------------------------------------------


def _edge_targets(ldi: LayeredDepthImage, edge: LocalEdge):
    """(foreground pixel, direction, background pixel) for every link the edge cuts."""
    w, h = ldi.width, ldi.height
    cols, rows = edge.pixels[:, 0], edge.pixels[:, 1]
    if np.any(cols < 0) or np.any(cols >= w) or np.any(rows < 0) or np.any(rows >= h):
        raise LdiError("edge pixel outside the LDI grid")
    front = ldi.front()
    fg, dirs, bg = [], [], []
    for d in range(4):
        sel = (edge.background >> d) & 1 == 1
        if not np.any(sel):
            continue
        ncol, nrow, valid = neighbor_cells(cols[sel], rows[sel], d, w, h)
        fg.append(front[rows[sel], cols[sel]][valid])
        bg.append(front[nrow, ncol][valid])
        dirs.append(np.full(int(valid.sum()), d))
    if not fg:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(fg), np.concatenate(dirs), np.concatenate(bg)


def disconnect(ldi: LayeredDepthImage, edges: list[LocalEdge]) -> LayeredDepthImage:
    """Sever every foreground/background link crossing the given edges."""
    out = ldi.copy()
    for edge in edges:
        fg, dirs, bg = _edge_targets(ldi, edge)
        linked = out.links[fg, dirs] == bg
        out.links[fg[linked], dirs[linked]] = -1
        out.links[bg[linked], OPPOSITE[dirs[linked]]] = -1
    return out


def count_links(ldi: LayeredDepthImage) -> int:
    return int(np.count_nonzero(ldi.links >= 0))


# --- context / synthesis regions ---------------------------------------------


@dataclass
class EdgeRegions:
    """Regions for one edge.

    ``synthesis`` marks cells that receive a new, deeper pixel behind the
    current foreground. ``context`` marks cells of visible background pixels
    (``context_pixels``) that seed the fill. The two masks are disjoint.
    """

    context: np.ndarray
    synthesis: np.ndarray
    context_pixels: np.ndarray
    # reference background depth each synthesis cell was reached from
    synthesis_ref: np.ndarray


def _flood(ldi: LayeredDepthImage, seeds: np.ndarray, ref: np.ndarray, steps: int, admit):
    """Breadth-first walk over LDI links from ``seeds`` for ``steps`` rings.

    Each reached pixel inherits the reference depth of the pixel that first
    reached it. ``admit(indices, ref)`` filters candidates.
    """
    n = ldi.size
    refs = np.full(n, np.nan)
    seen = np.zeros(n, dtype=bool)
    _, first = np.unique(seeds, return_index=True)
    keep = np.sort(first)
    frontier, fref = seeds[keep], ref[keep]
    ok = admit(frontier, fref)
    frontier, fref = frontier[ok], fref[ok]
    seen[frontier] = True
    refs[frontier] = fref
    for _ in range(steps - 1):
        if len(frontier) == 0:
            break
        cand = ldi.links[frontier].ravel()
        cref = np.repeat(fref, 4)
        sel = cand >= 0
        cand, cref = cand[sel], cref[sel]
        sel = ~seen[cand]
        cand, cref = cand[sel], cref[sel]
        _, first = np.unique(cand, return_index=True)
        first = np.sort(first)
        cand, cref = cand[first], cref[first]
        ok = admit(cand, cref)
        frontier, fref = cand[ok], cref[ok]
        seen[frontier] = True
        refs[frontier] = fref
    return seen, refs


def context_synthesis_regions(ldi: LayeredDepthImage, edge: LocalEdge, dilation: int = DEFAULT_DILATION,
                              tau: float = DEFAULT_TAU, claimed: np.ndarray | None = None) -> EdgeRegions:
    """Build the synthesis and context regions for one (already severed) edge.

    Synthesis grows from the edge's own foreground pixels through the links
    that survived the cut, so it never crosses back over the edge, and admits
    only pixels that are nearer than the background being extended by more
    than tau. Context grows the same number of rings from the background
    pixels on the far side of the cut and admits only pixels of comparable
    depth. Cells in ``claimed`` (taken by earlier edges) are excluded.
    """
    if dilation < 1:
        raise LdiError("dilation must be at least 1")
    w, h = ldi.width, ldi.height
    fg, _, bg = _edge_targets(ldi, edge)
    front = ldi.front()
    cols, rows = edge.pixels[:, 0], edge.pixels[:, 1]
    fg_seeds = front[rows, cols]
    fg_ref = edge.bg_depth.copy()
    depth = ldi.depth

    ctx_seen, _ = _flood(ldi, bg, depth[bg], dilation, lambda i, r: depth[i] * tau > r)
    ctx_pixels = np.nonzero(ctx_seen)[0]
    context = np.zeros((h, w), dtype=bool)
    context[ldi.pos[ctx_pixels, 1], ldi.pos[ctx_pixels, 0]] = True

    blocked = context.copy()
    if claimed is not None:
        blocked |= claimed

    def admit_syn(i, r):
        p = ldi.pos[i]
        return (depth[i] * tau < r) & ~blocked[p[:, 1], p[:, 0]]

    syn_seen, syn_refs = _flood(ldi, fg_seeds, fg_ref, dilation, admit_syn)
    syn_pixels = np.nonzero(syn_seen)[0]
    synthesis = np.zeros((h, w), dtype=bool)
    synthesis[ldi.pos[syn_pixels, 1], ldi.pos[syn_pixels, 0]] = True
    ref = np.full((h, w), np.nan)
    ref[ldi.pos[syn_pixels, 1], ldi.pos[syn_pixels, 0]] = syn_refs[syn_pixels]
    return EdgeRegions(context=context, synthesis=synthesis, context_pixels=ctx_pixels, synthesis_ref=ref)


# --- merging -----------------------------------------------------------------


def merge_inpainted(ldi: LayeredDepthImage, regions: EdgeRegions, cells: np.ndarray,
                    depth: np.ndarray, color: np.ndarray) -> LayeredDepthImage:
    """Append inpainted pixels at ``cells`` (K, 2 as column, row) and link them.

    New pixels link to each other and to background context pixels whose link
    slot toward them is free; they never link to the foreground layer.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    color = np.asarray(color, dtype=np.float64).reshape(-1, 3)
    k = len(cells)
    if k == 0:
        return ldi
    if len(depth) != k or len(color) != k:
        raise LdiError("cells, depth and color lengths differ")
    w, h = ldi.width, ldi.height
    cols, rows = cells[:, 0], cells[:, 1]
    if not np.all(regions.synthesis[rows, cols]):
        raise LdiError("inpainted pixel outside the synthesis region")
    if len(np.unique(rows * w + cols)) != k:
        raise LdiError("duplicate inpainted cell")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise LdiError("inpainted depth must be finite and positive")
    front = ldi.front()
    if np.any(depth <= ldi.depth[front[rows, cols]]):
        raise LdiError("inpainted pixel is nearer than the foreground it hides")

    n = ldi.size
    new_id = np.full((h, w), -1, dtype=np.int64)
    new_id[rows, cols] = n + np.arange(k)
    ctx_owner = np.full((h, w), -1, dtype=np.int64)
    cp = regions.context_pixels
    if len(cp):
        # nearest context pixel per cell, ties to the lower index
        cp = cp[np.lexsort((cp, ldi.depth[cp]))]
        cell = ldi.pos[cp, 1] * w + ldi.pos[cp, 0]
        _, first = np.unique(cell, return_index=True)
        cp = cp[first]
        ctx_owner[ldi.pos[cp, 1], ldi.pos[cp, 0]] = cp

    links = np.vstack([ldi.links, np.full((k, 4), -1, dtype=np.int64)])
    for d in range(4):
        ncol, nrow, valid = neighbor_cells(cols, rows, d, w, h)
        me = n + np.arange(k)
        other_new = np.where(valid, new_id[nrow, ncol], -1)
        links[me, d] = other_new
        cand = np.where(valid & (other_new < 0), ctx_owner[nrow, ncol], -1)
        free = cand >= 0
        free[free] = links[cand[free], OPPOSITE[d]] < 0
        # a context pixel may be offered by several new pixels only once per slot
        idx = np.nonzero(free)[0]
        _, first = np.unique(cand[idx], return_index=True)
        idx = idx[np.sort(first)]
        links[me[idx], d] = cand[idx]
        links[cand[idx], OPPOSITE[d]] = me[idx]

    return LayeredDepthImage(
        width=w, height=h,
        color=np.vstack([ldi.color, color]),
        depth=np.concatenate([ldi.depth, depth]),
        pos=np.vstack([ldi.pos, cells]),
        links=links,
    )


# --- debug dump --------------------------------------------------------------

DUMP_HEADER = "panoshift-ldi 1"


def dump_ldi(ldi: LayeredDepthImage) -> str:
    """Text listing of the pool: one pixel per line, stable across runs."""
    lines = [DUMP_HEADER, f"{ldi.width} {ldi.height} {ldi.size}",
             "# index col row depth r g b left right up down"]
    for i in range(ldi.size):
        c = ldi.color[i]
        lk = " ".join(str(int(x)) for x in ldi.links[i])
        vals = " ".join(repr(float(x)) for x in (ldi.depth[i], *c))
        lines.append(f"{i} {ldi.pos[i, 0]} {ldi.pos[i, 1]} {vals} {lk}")
    return "\n".join(lines) + "\n"


def load_ldi(text: str) -> LayeredDepthImage:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if rows[0] != DUMP_HEADER:
        raise LdiError("not an LDI dump")
    w, h, n = (int(x) for x in rows[1].split())
    body = [r.split() for r in rows[2:2 + n]]
    if len(body) != n:
        raise LdiError("truncated LDI dump")
    arr = np.array(body, dtype=object)
    return LayeredDepthImage(
        width=w, height=h,
        color=arr[:, 4:7].astype(np.float64),
        depth=arr[:, 3].astype(np.float64),
        pos=arr[:, 1:3].astype(np.int64),
        links=arr[:, 7:11].astype(np.int64),
    )
