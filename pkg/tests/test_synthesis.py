import numpy as np
import pytest

from kinterp.flow import FlowField
from kinterp.frames import Frame, KeyStateQuad
from kinterp.simulator import (
    SceneSpec,
    Sprite,
    gen_scene_frame,
    random_scene,
    scene_quad,
    sprite_interiors,
)
from kinterp.synthesis import (
    ModelOptions,
    QuadError,
    QuadFlows,
    build_trajectories,
    forward_splat,
    interpolate_sequence,
    render_intermediate,
    reversed_trajectory,
)
from kinterp.trajectory import estimate_lambda, eval_displacement, fit_trajectory

from conftest import const_field, kinematic_displacements


def test_splat_zero_flow():
    rng = np.random.default_rng(0)
    src = rng.random((6, 7, 3))
    res = forward_splat(src, FlowField.zeros(6, 7))
    assert np.array_equal(res.accum, src) and np.all(res.weight == 1.0)


def test_splat_integer_shift_leaves_hole_band():
    rng = np.random.default_rng(1)
    src = rng.random((5, 9, 3))
    img, holes = forward_splat(src, FlowField.constant(5, 9, (3, 0))).normalized()
    assert np.all(holes[:, :3]) and not holes[:, 3:].any()
    assert np.array_equal(img[:, 3:], src[:, :6])


def test_splat_two_pixel_collision_fixture():
    # pixel 0 lands at x=0.75, pixel 2 at x=0.5, pixel 1 leaves the image
    src = np.array([[0.2, 0.9, 0.8]])
    flow = FlowField(np.array([[[0.75, 0], [10.0, 0], [-1.5, 0]]]))
    res = forward_splat(src, flow)
    np.testing.assert_allclose(res.weight[0], [0.75, 1.25, 0.0])
    np.testing.assert_allclose(res.accum[0, :, 0], [0.25 * 0.2 + 0.5 * 0.8, 0.75 * 0.2 + 0.5 * 0.8, 0])
    img, holes = res.normalized()
    np.testing.assert_allclose(img[0, :, 0], [0.6, 0.44, 0.0])
    assert holes.tolist() == [[False, False, True]]


def test_splat_dimension_mismatch():
    with pytest.raises(ValueError):
        forward_splat(np.zeros((3, 3, 3)), FlowField.zeros(3, 4))


@pytest.fixture(scope="module")
def rendered_quad():
    spec = random_scene(4, t0=0.7, n_sprites=2)
    quad, flows = scene_quad(spec, 0.7)
    fwd, bwd = build_trajectories(flows, 3 / 7, ModelOptions())
    return spec, quad, flows, fwd, bwd


def test_render_endpoints(rendered_quad):
    _, quad, _, fwd, bwd = rendered_quad
    assert render_intermediate(quad, fwd, bwd, 0.0) == quad.l1
    at_t1 = render_intermediate(quad, fwd, bwd, fwd.t1)
    assert np.mean(np.abs(at_t1.data - quad.l2.data)) <= 1e-3
    assert render_intermediate(quad, fwd, bwd, -fwd.t0) == quad.l0
    assert render_intermediate(quad, fwd, bwd, fwd.t1 + fwd.t0) == quad.l3
    with pytest.raises(ValueError):
        render_intermediate(quad, fwd, bwd, 1.2)


def test_render_inner_frames_track_ground_truth(rendered_quad):
    from kinterp.metrics import psnr

    spec, quad, _, fwd, bwd = rendered_quad
    for t in (-0.4, 0.15, 0.6):
        out = render_intermediate(quad, fwd, bwd, t)
        assert psnr(out, gen_scene_frame(spec, 0.7 + t)) > 30


def _centroid(img, center, radius):
    lum = img.data.sum(axis=2)
    gy, gx = np.mgrid[0:lum.shape[0], 0:lum.shape[1]]
    win = (gx - center[0]) ** 2 + (gy - center[1]) ** 2 <= (radius + 4) ** 2
    w = lum * win
    return np.array([(w * gx).sum(), (w * gy).sum()]) / w.sum()


def test_sprite_centroid_at_gap_midpoint():
    sp = Sprite(5, (40.0, 60.0), (24.0, -6.0), (10.0, 8.0), 14.0)
    spec = SceneSpec(128, 128, (sp,), None, 4, 0.0, 1.7)
    quad, flows = scene_quad(spec, 0.7)
    fwd, bwd = build_trajectories(flows, 3 / 7, ModelOptions())
    t = fwd.t1 / 2
    out = render_intermediate(quad, fwd, bwd, t)
    truth = gen_scene_frame(spec, 0.7 + t)
    c = sp.center(0.7 + t)
    assert np.linalg.norm(_centroid(out, c, sp.radius) - _centroid(truth, c, sp.radius)) < 0.5


def test_reversed_trajectory_static_and_symmetry():
    z = FlowField.zeros(4, 4, "L2")
    rt = reversed_trajectory(z, z, z, 0.5)
    assert rt.reversed and np.all(rt.v1.data == 0) and np.all(rt.accel.data == 0)

    # forward: L1 pixel; reversed: where that pixel sits at L2
    v1, a, t0 = np.array([9.0, -3.0]), np.array([5.0, 2.0]), 0.7
    s01, s12, s23 = kinematic_displacements(v1, a, t0)
    lam = (1 - t0) / t0
    fwd = fit_trajectory(const_field(s01), const_field(s23), lam)
    rev = reversed_trajectory(const_field(-s23, anchor="L2"), const_field(-s12, anchor="L2"),
                              const_field(-s01, anchor="L2"), lam)
    for t in np.linspace(-t0, 1.0, 13):
        p_fwd = eval_displacement(fwd, t).data[0, 0]
        p_rev = s12 + eval_displacement(rev, t - fwd.t1).data[0, 0]
        np.testing.assert_allclose(p_fwd, p_rev, atol=1e-6)


def test_palindromic_lambda():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t0 = rng.uniform(0.1, 0.9)
        s01, s12, s23 = (const_field(s) for s in kinematic_displacements(
            rng.normal(0, 15, 2), rng.normal(0, 6, 2), t0))
        if np.hypot(*(s01 + s23).data[0, 0]) < 1:
            continue
        assert estimate_lambda(-s23, -s12, -s01).lam == estimate_lambda(s01, s12, s23).lam


def test_palindromic_lambda_on_scene(rendered_quad):
    _, _, flows, _, _ = rendered_quad
    rev = estimate_lambda(-flows.r10, flows.r12, flows.r13 - flows.r12).lam
    assert abs(rev - 3 / 7) <= 1e-9


def _stream(spec, t0, periods):
    return [scene_quad(spec, t0, k) for k in range(periods)]


def test_sequence_counts_and_order():
    spec = random_scene(1, t0=0.5, periods=2)
    out = list(interpolate_sequence(_stream(spec, 0.5, 2), 10))
    assert len(out) == 20
    assert sum(o.kind == "intra" for o in out[:10]) == 6
    times = [o.time for o in out]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_factor_one_emits_exposure_starts():
    spec = random_scene(1, t0=0.5, periods=2)
    items = _stream(spec, 0.5, 2)
    out = list(interpolate_sequence(items, 1))
    assert [o.time for o in out] == [0.0, 1.0]
    assert out[0].frame == items[0][0].l0 and out[1].frame == items[1][0].l0


def test_static_video():
    f = Frame(np.random.default_rng(3).random((24, 24, 3)))
    z = FlowField.zeros(24, 24)
    zr = FlowField.zeros(24, 24, "L2")
    item = (KeyStateQuad(f, f, f, f), QuadFlows(z, z, z, zr, zr, zr))
    out = list(interpolate_sequence([item], 10, lam=0.5))
    assert len(out) == 10 and all(o.frame == f for o in out)
    with pytest.raises(QuadError) as err:
        list(interpolate_sequence([item], 10))
    assert err.value.index == 0


def test_degenerate_quad_can_reuse_previous_lambda():
    spec = random_scene(6, t0=0.7, periods=1)
    moving = scene_quad(spec, 0.7)
    f = moving[0].l1
    z, zr = FlowField.zeros(*f.shape), FlowField.zeros(*f.shape, "L2")
    static = (KeyStateQuad(f, f, f, f), QuadFlows(z, z, z, zr, zr, zr))
    out = list(interpolate_sequence([moving, static], 4, on_degenerate="previous"))
    assert len(out) == 8 and out[-1].lam == pytest.approx(3 / 7, abs=1e-9)


def test_qvi_mode_forces_unit_lambda():
    spec = random_scene(1, t0=0.7)
    out = list(interpolate_sequence(_stream(spec, 0.7, 1), 4, opts=ModelOptions(qvi=True)))
    assert all(o.lam == 1.0 for o in out)
    assert [o.kind for o in out] == ["intra", "intra", "intra", "inter"]


def test_determinism_across_threads():
    spec = random_scene(2, t0=0.6, periods=1)
    items = _stream(spec, 0.6, 1)
    runs = [[o.frame.data for o in interpolate_sequence(items, 10, threads=n)] for n in (1, 4, 16)]
    for other in runs[1:]:
        assert all(np.array_equal(a, b) for a, b in zip(runs[0], other))


def test_brightness_conservation_rigid_translation():
    sprites = (Sprite(3, (40.0, 64.0), (20.0, 4.0), (0.0, 0.0), 18.0),
               Sprite(8, (90.0, 40.0), (-12.0, 10.0), (0.0, 0.0), 16.0))
    spec = SceneSpec(128, 128, sprites, 7, 4, 0.0, 1.6)
    quad, flows = scene_quad(spec, 0.6)
    fwd, bwd = build_trajectories(flows, 0.4 / 0.6, ModelOptions())
    for frac in (0.25, 0.5, 0.75):
        t = frac * fwd.t1
        out = render_intermediate(quad, fwd, bwd, t)
        expect = (1 - frac) * quad.l1.data.mean() + frac * quad.l2.data.mean()
        assert abs(out.data.mean() / expect - 1) < 0.02


def test_interior_pixels_match_truth_closely(rendered_quad):
    spec, quad, _, fwd, bwd = rendered_quad
    t = 0.5 * fwd.t1
    out = render_intermediate(quad, fwd, bwd, t)
    mask = sprite_interiors(spec, 0.7 + t, margin=3)
    err = np.abs(out.data - gen_scene_frame(spec, 0.7 + t).data)[mask]
    assert err.mean() < 0.01
