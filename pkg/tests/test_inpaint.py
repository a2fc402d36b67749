import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panoshift.config import Config
from panoshift.geometry import unit_rays
from panoshift.inpaint import (
    ClassicalInpainter,
    ExternalInpainter,
    InpaintError,
    InpaintRequest,
    InpaintResult,
    berhu_loss,
    color_objective,
    inpaint_color_exemplar,
    inpaint_depth_diffusion,
    masked_l1,
    read_request,
    write_request,
)
from panoshift.render import adapt, layer_ldi
from panoshift.scene import SceneSpec, raycast, two_plane_scene

W, H = 64, 32


def cells_of(mask):
    r, c = np.nonzero(mask)
    return np.stack([c, r], axis=1)


def request(ctx_mask, syn_mask, depth, color):
    cc = cells_of(ctx_mask)
    return InpaintRequest(W, H, cc, color[cc[:, 1], cc[:, 0]], depth[cc[:, 1], cc[:, 0]], cells_of(syn_mask))


def box_masks(r0=8, r1=20, c0=24, c1=36, ring=4):
    syn = np.zeros((H, W), bool)
    syn[r0:r1, c0:c1] = True
    ctx = np.zeros((H, W), bool)
    ctx[r0 - ring:r1 + ring, c0 - ring:c1 + ring] = True
    return ctx & ~syn, syn


def test_request_validation():
    ctx, syn = box_masks()
    depth = np.ones((H, W))
    with pytest.raises(InpaintError):
        request(np.zeros((H, W), bool), syn, depth, np.zeros((H, W, 3)))
    with pytest.raises(InpaintError):
        request(ctx | syn, syn, depth, np.zeros((H, W, 3)))


def test_constant_depth_fill_is_exact():
    ctx, syn = box_masks()
    req = request(ctx, syn, np.full((H, W), 5.0), np.zeros((H, W, 3)))
    assert np.all(inpaint_depth_diffusion(req) == 5.0)


def test_one_sided_constant_context():
    ctx = np.zeros((H, W), bool)
    ctx[:, 10:20] = True
    syn = np.zeros((H, W), bool)
    syn[:, 20:30] = True
    req = request(ctx, syn, np.full((H, W), 5.0), np.zeros((H, W, 3)))
    assert np.all(inpaint_depth_diffusion(req) == 5.0)


def test_linear_ramp_is_continued():
    ctx, syn = box_masks()
    ramp = 2.0 + 0.1 * np.arange(W)[None, :] + 0.05 * np.arange(H)[:, None]
    req = request(ctx, syn, ramp, np.zeros((H, W, 3)))
    filled = inpaint_depth_diffusion(req, tol=1e-6, max_iter=5000)
    truth = ramp[syn]
    assert np.max(np.abs(filled - truth) / truth) < 0.01


def test_planar_background_extends_exactly():
    # wall z = 4 seen from the origin; the region sits right of centre so the
    # true depth never drops below the boundary clamp
    rays = unit_rays(W, H)
    wall = 4.0 / rays[..., 2].clip(1e-3)
    ctx, syn = box_masks(8, 20, 36, 42, ring=4)
    req = request(ctx, syn, wall, np.zeros((H, W, 3)))
    assert np.allclose(inpaint_depth_diffusion(req), wall[syn], rtol=1e-6)
    flat = inpaint_depth_diffusion(req, detrend=False)
    assert np.max(np.abs(flat - wall[syn]) / wall[syn]) > 1e-3


def test_depth_clamp_floor():
    ctx, syn = box_masks()
    depth = np.where(np.arange(W)[None, :] < 30, 3.0, 6.0) * np.ones((H, W))
    req = request(ctx, syn, depth, np.zeros((H, W, 3)))
    out = inpaint_depth_diffusion(req)
    assert out.min() >= 3.0
    req.boundary_depth = 4.0
    assert inpaint_depth_diffusion(req).min() >= 4.0


def test_fill_across_the_seam():
    ctx = np.zeros((H, W), bool)
    syn = np.zeros((H, W), bool)
    syn[10:20, [62, 63, 0, 1]] = True
    ctx[6:24, [58, 59, 60, 61, 2, 3, 4, 5]] = True
    ctx[6:10, 58:] = ctx[20:24, 58:] = ctx[6:10, :6] = ctx[20:24, :6] = True
    req = request(ctx, syn, np.full((H, W), 7.0), np.full((H, W, 3), 0.25))
    res = ClassicalInpainter()(req)
    assert np.all(res.depth == 7.0) and np.all(res.color == 0.25)


@pytest.mark.parametrize("w,dilation", [(1024, 20), (512, 20)])
def test_two_plane_fill_matches_occluded_wall(w, dilation):
    h = w // 2
    color, depth = raycast(two_plane_scene(), w, h)
    _, wall = raycast(SceneSpec(), w, h)
    ldi, stats = layer_ldi(color, depth, config=Config(dilation=dilation))
    new = np.arange(w * h, ldi.size)
    assert len(new) > 0
    c, r = ldi.pos[new, 0], ldi.pos[new, 1]
    rel = np.abs(ldi.depth[new] - wall[r, c]) / wall[r, c]
    assert rel.max() < 0.05


def test_constant_colour_fill_is_exact():
    ctx, syn = box_masks(ring=8)
    req = request(ctx, syn, np.ones((H, W)), np.full((H, W, 3), 0.3))
    assert np.all(inpaint_color_exemplar(req) == 0.3)


def stripes(n=32, period=4):
    levels = np.array([0.1, 0.4, 0.7, 0.9])[:period]
    row = levels[np.arange(n) % period]
    img = np.repeat(row[None, :], n, axis=0)
    return np.stack([img, img[:, ::-1], 1 - img], axis=-1)


def brute_force_exemplar(img, ctx, syn, k):
    """Loop-based onion-peel search with the same visiting order and first-found ties."""
    rad = k // 2
    h, w = ctx.shape
    img = np.where(ctx[..., None], img, 0.0)
    filled, todo = ctx.copy(), syn.copy()
    sources = [(r, c) for r in range(rad, h - rad) for c in range(rad, w - rad)
               if ctx[r - rad:r + rad + 1, c - rad:c + rad + 1].all()]
    while todo.any():
        ring = [(r, c) for r in range(h) for c in range(w) if todo[r, c] and any(
            0 <= r + dr < h and 0 <= c + dc < w and filled[r + dr, c + dc]
            for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)))]
        for r, c in ring:
            if not todo[r, c]:
                continue
            best, best_cost = None, np.inf
            for sr, sc in sources:
                cost = 0.0
                for dr in range(-rad, rad + 1):
                    for dc in range(-rad, rad + 1):
                        tr, tc = r + dr, c + dc
                        if 0 <= tr < h and 0 <= tc < w and filled[tr, tc]:
                            cost += float(np.sum((img[tr, tc] - img[sr + dr, sc + dc]) ** 2))
                if cost < best_cost:
                    best, best_cost = (sr, sc), cost
            for dr in range(-rad, rad + 1):
                for dc in range(-rad, rad + 1):
                    tr, tc = r + dr, c + dc
                    if 0 <= tr < h and 0 <= tc < w and todo[tr, tc]:
                        img[tr, tc] = img[best[0] + dr, best[1] + dc]
                        filled[tr, tc] = True
                        todo[tr, tc] = False
    return img


def test_stripes_reproduced_exactly():
    n = 32
    tex = stripes(n)
    syn = np.zeros((n, n), bool)
    syn[11:21, 11:21] = True
    ctx = ~syn
    cells_c, cells_s = cells_of(ctx), cells_of(syn)
    req = InpaintRequest(2 * n, n, cells_c, tex[cells_c[:, 1], cells_c[:, 0]], np.ones(len(cells_c)), cells_s)
    out = inpaint_color_exemplar(req, 7)
    assert np.array_equal(out, tex[syn])
    oracle = brute_force_exemplar(tex, ctx, syn, 7)
    assert np.array_equal(oracle[syn], out)


def test_exemplar_is_deterministic_on_noise():
    rng = np.random.default_rng(3)
    tex = rng.random((H, W, 3))
    ctx, syn = box_masks(ring=8)
    req = request(ctx, syn, np.ones((H, W)), tex)
    a = inpaint_color_exemplar(req)
    b = inpaint_color_exemplar(request(ctx, syn, np.ones((H, W)), tex))
    assert a.tobytes() == b.tobytes()
    assert np.all((a >= 0) & (a <= 1))


def test_exemplar_errors():
    ctx, syn = box_masks(ring=2)
    req = request(ctx, syn, np.ones((H, W)), np.zeros((H, W, 3)))
    with pytest.raises(InpaintError):
        inpaint_color_exemplar(req, 7)
    with pytest.raises(InpaintError):
        inpaint_color_exemplar(req, 4)
    # the classical wrapper shrinks the patch until one fits
    res = ClassicalInpainter()(req)
    assert res.color.shape == (len(req.synthesis_cells), 3)


def test_berhu_examples():
    assert berhu_loss(np.ones(3), np.ones(3)) == 0.0
    assert berhu_loss(np.array([1.1, 2.0]), np.array([1.0, 1.0])) == pytest.approx(1.35)
    with pytest.raises(InpaintError):
        berhu_loss(np.ones(2), np.ones(3))


def test_berhu_continuous_at_branch_point():
    # e = (c, 5c): the max fixes c, and the first error sits exactly on the branch point
    c = 0.2
    gt = np.zeros(2)
    below = berhu_loss(np.array([c - 1e-9, 5 * c]), gt)
    at = berhu_loss(np.array([c, 5 * c]), gt)
    above = berhu_loss(np.array([c + 1e-9, 5 * c]), gt)
    assert below == pytest.approx(at, abs=1e-8) and above == pytest.approx(at, abs=1e-8)


@settings(max_examples=50)
@given(arrays(np.float64, 6, elements=st.floats(0.1, 10)), arrays(np.float64, 6, elements=st.floats(0.1, 10)))
def test_berhu_non_negative_and_zero_iff_equal(a, b):
    loss = berhu_loss(a, b)
    assert loss >= 0
    assert (loss == 0) == np.array_equal(a, b)


def test_masked_l1_examples():
    a = np.zeros((4, 4))
    mask = np.zeros((4, 4), bool)
    mask[:2] = True
    assert masked_l1(a, a, mask) == 0.0
    assert masked_l1(a + 2, a, mask) == 2.0
    junk = a.copy()
    junk[~mask] = 99.0
    assert masked_l1(junk + 0, a + 2 * 0, mask) == masked_l1(a, a, mask)
    with pytest.raises(InpaintError):
        masked_l1(a, a, np.zeros((4, 4), bool))


def test_colour_objective_examples():
    a = np.zeros((2, 2))
    mask = np.ones((2, 2), bool)
    assert color_objective(a, a, mask) == 0.0
    assert color_objective(a + 0.5, a, mask, alpha=2.0) == pytest.approx(1.0)
    assert color_objective(a + 0.5, a, mask, perceptual=lambda x, y: 10.0) == pytest.approx(0.5 + 0.5)


EXTERNAL_SCRIPT = textwrap.dedent("""
    import sys
    import numpy as np
    from panoshift.inpaint import InpaintResult, read_request, write_response

    req = read_request(sys.argv[1])
    n = len(req.synthesis_cells)
    write_response(InpaintResult(np.full(n, 9.0), np.tile([0.2, 0.4, 0.6], (n, 1))), req, sys.argv[1])
""")


def test_request_file_round_trip(tmp_path):
    ctx, syn = box_masks()
    depth = np.full((H, W), 3.5)
    color = np.full((H, W, 3), 0.2)
    req = request(ctx, syn, depth, color)
    write_request(req, tmp_path)
    back = read_request(tmp_path)
    assert np.array_equal(back.context_cells, req.context_cells)
    assert np.array_equal(back.synthesis_cells, req.synthesis_cells)
    assert np.allclose(back.context_depth, 3.5) and np.allclose(back.context_color, 0.2)


def test_external_inpainter_plugs_into_pipeline(tmp_path):
    script = tmp_path / "fill.py"
    script.write_text(EXTERNAL_SCRIPT)
    ext = ExternalInpainter([sys.executable, str(script)])
    ctx, syn = box_masks()
    res = ext(request(ctx, syn, np.full((H, W), 3.0), np.zeros((H, W, 3))))
    assert np.allclose(res.depth, 9.0)
    assert np.allclose(res.color, np.array([51, 102, 153]) / 255.0)

    color, depth = raycast(two_plane_scene(), 128, 64)
    view = adapt(color, depth, dy=0.0, config=Config(dilation=4), inpainter=ext)
    new = view.ldi.depth[128 * 64:]
    assert len(new) > 0 and np.allclose(new, 9.0)


def test_external_failure_is_reported(tmp_path):
    ext = ExternalInpainter([sys.executable, "-c", "import sys; sys.exit(3)"])
    ctx, syn = box_masks()
    with pytest.raises(InpaintError):
        ext(request(ctx, syn, np.ones((H, W)), np.zeros((H, W, 3))))


def test_custom_inpainter_needs_no_pipeline_changes():
    seen = []

    def stub(req):
        seen.append(len(req.synthesis_cells))
        return InpaintResult(np.full(len(req.synthesis_cells), 50.0), np.zeros((len(req.synthesis_cells), 3)))

    color, depth = raycast(two_plane_scene(), 128, 64)
    ldi, stats = layer_ldi(color, depth, config=Config(dilation=4), inpainter=stub)
    assert sum(seen) == sum(stats["synthesized"]) > 0
