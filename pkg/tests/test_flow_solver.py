import numpy as np
import pytest

from flowrecon import (
    FlowDualState,
    FlowField,
    SolveConfig,
    flow_energy,
    flow_residual,
    flow_step_sizes,
    linearize,
    solve_flow_level,
    solve_flow_pyramid,
    zero_flow,
    zero_flow_dual,
)
from flowrecon.flow_solver import WarpLinearization
from flowrecon.interpolation import median_filter
from flowrecon.synth import blob_support_mask, gaussian_blob, translating_blob


def one_blob_pair(shape, shift, sigma=5.0):
    frames, flows = translating_blob(shape, 2, shift, sigma=sigma)
    return frames[0], frames[1], flows[0]


def test_linearize_identity_warp(rng):
    u = gaussian_blob((12, 12), (5.5, 5.5), 2.0)
    lin = linearize(u, u, zero_flow((12, 12)))
    interior = lin.valid
    assert np.abs(lin.ut[interior]).max() == 0.0
    # derivative images are the centered finite differences of u, exactly on the interior
    from flowrecon.operators import centered_gradient

    du = centered_gradient(u)
    assert np.abs(lin.gx[interior] - du.gx[interior]).max() <= 1e-12
    assert np.abs(lin.gy[interior] - du.gy[interior]).max() <= 1e-12
    assert not lin.valid[0, :].any() and not lin.valid[:, 0].any()


def test_linearize_constant_offset():
    u = gaussian_blob((12, 12), (5.5, 5.5), 2.0)
    lin = linearize(u, u + 0.1, zero_flow((12, 12)))
    assert np.abs(lin.ut[lin.valid] - 0.1).max() <= 1e-12


def test_linearize_shifted_smooth_pair():
    # at vtilde = true shift the linearized residual rho(vtilde) vanishes;
    # ut itself absorbs -vtilde . grad(utilde) and is nonzero by design
    u1, u2, _ = one_blob_pair((24, 24), (1.0, 0.0), sigma=4.0)
    vt = FlowField(np.ones((24, 24)), np.zeros((24, 24)))
    lin = linearize(u1, u2, vt)
    rho = lin.gx * vt.v1 + lin.gy * vt.v2 + lin.ut
    assert np.abs(rho[lin.valid]).max() <= 1e-3


def test_linearize_shape_mismatch():
    with pytest.raises(ValueError):
        linearize(np.zeros((4, 4)), np.zeros((5, 4)), zero_flow((4, 4)))


def test_solve_level_zero_data_keeps_zero_flow():
    shape = (10, 10)
    lin = WarpLinearization(
        utilde=np.zeros(shape), gx=np.zeros(shape), gy=np.zeros(shape),
        ut=np.zeros(shape), valid=np.ones(shape, dtype=bool),
    )
    flow, dual, info = solve_flow_level(
        lin, zero_flow(shape), zero_flow_dual(shape), 0.02, 1e-6, 50
    )
    assert np.all(flow.v1 == 0.0) and np.all(flow.v2 == 0.0)
    assert info.converged and info.residual == 0.0


def test_solve_level_recovers_unit_translation():
    u1, u2, _ = one_blob_pair((32, 32), (1.0, 0.0))
    lin = linearize(u1, u2, zero_flow((32, 32)))
    flow, _, info = solve_flow_level(
        lin, zero_flow((32, 32)), zero_flow_dual((32, 32)), 0.02, 1e-6, 100
    )
    support = blob_support_mask((32, 32), (15.0, 15.5), 5.0)
    assert abs(flow.v1[support].mean() - 1.0) <= 0.2
    assert abs(flow.v2[support].mean()) <= 0.2


def test_solve_level_residual_trend():
    u1, u2, _ = one_blob_pair((32, 32), (1.0, 0.0))
    lin = linearize(u1, u2, zero_flow((32, 32)))
    args = (lin, zero_flow((32, 32)), zero_flow_dual((32, 32)), 0.02, 0.0, 100)
    _, _, early = solve_flow_level(*args, iter_cap=200)
    _, _, late = solve_flow_level(*args, iter_cap=2000)
    assert late.residual <= early.residual


def test_solve_level_dual_feasibility():
    u1, u2, _ = one_blob_pair((24, 24), (1.5, 0.5))
    lin = linearize(u1, u2, zero_flow((24, 24)))
    weight = 0.02
    flow, dual, _ = solve_flow_level(
        lin, zero_flow((24, 24)), zero_flow_dual((24, 24)), weight, 1e-6, 100
    )
    assert np.sqrt(dual.y1[0] ** 2 + dual.y1[1] ** 2).max() <= weight + 1e-12
    assert np.sqrt(dual.y2[0] ** 2 + dual.y2[1] ** 2).max() <= weight + 1e-12
    assert np.abs(dual.y3).max() <= 1.0 + 1e-12


def test_solve_level_lowers_energy_vs_zero_field():
    u1, u2, _ = one_blob_pair((32, 32), (1.0, 0.5))
    lin = linearize(u1, u2, zero_flow((32, 32)))
    flow, _, _ = solve_flow_level(
        lin, zero_flow((32, 32)), zero_flow_dual((32, 32)), 0.02, 1e-6, 100
    )
    assert flow_energy(lin, flow, 0.02) <= flow_energy(lin, zero_flow((32, 32)), 0.02)


def test_flow_residual_fixed_point_is_exactly_zero(rng):
    shape = (6, 6)
    u1, u2, _ = one_blob_pair(shape, (0.5, 0.0), sigma=1.5)
    lin = linearize(u1, u2, zero_flow(shape))
    steps = flow_step_sizes(lin)
    flow = FlowField(rng.standard_normal(shape), rng.standard_normal(shape))
    dual = FlowDualState(rng.standard_normal((2,) + shape), rng.standard_normal((2,) + shape),
                         rng.standard_normal(shape), vbar=flow)
    assert flow_residual(flow, dual, flow, dual, lin, steps) == 0.0


def test_flow_residual_positive_after_one_iteration():
    u1, u2, _ = one_blob_pair((16, 16), (1.0, 0.0), sigma=3.0)
    lin = linearize(u1, u2, zero_flow((16, 16)))
    _, _, info = solve_flow_level(
        lin, zero_flow((16, 16)), zero_flow_dual((16, 16)), 0.02, 0.0, 1, iter_cap=1
    )
    assert info.residual > 0.0


def test_flow_residual_hand_computed_2x2(rng):
    shape = (2, 2)
    lin = WarpLinearization(
        utilde=np.zeros(shape),
        gx=np.array([[0.3, -0.2], [0.1, 0.4]]),
        gy=np.array([[-0.1, 0.2], [0.5, -0.3]]),
        ut=np.array([[0.05, -0.02], [0.01, 0.03]]),
        valid=np.ones(shape, dtype=bool),
    )
    steps = flow_step_sizes(lin)
    pf = FlowField(rng.standard_normal(shape), rng.standard_normal(shape))
    pd = FlowDualState(0.01 * rng.standard_normal((2,) + shape),
                       0.01 * rng.standard_normal((2,) + shape),
                       0.5 * rng.standard_normal(shape), vbar=pf)
    cf = FlowField(rng.standard_normal(shape), rng.standard_normal(shape))
    cd = FlowDualState(0.01 * rng.standard_normal((2,) + shape),
                       0.01 * rng.standard_normal((2,) + shape),
                       0.5 * rng.standard_normal(shape), vbar=cf)

    # spreadsheet-style evaluation with explicit scalar loops
    def grad(a):
        gx = np.zeros(shape)
        gy = np.zeros(shape)
        for j in range(2):
            for i in range(2):
                if i < 1:
                    gx[j, i] = a[j, i + 1] - a[j, i]
                if j < 1:
                    gy[j, i] = a[j + 1, i] - a[j, i]
        return gx, gy

    def grad_t(yx, yy):
        out = np.zeros(shape)
        for j in range(2):
            for i in range(2):
                tx = -yx[j, 0] if i == 0 else yx[j, 0]
                ty = -yy[0, i] if j == 0 else yy[0, i]
                out[j, i] = tx + ty
        return out

    dv1 = pf.v1 - cf.v1
    dv2 = pf.v2 - cf.v2
    dy1 = pd.y1 - cd.y1
    dy2 = pd.y2 - cd.y2
    dy3 = pd.y3 - cd.y3
    p1 = np.abs(dv1 / steps.tau1 + grad_t(dy1[0], dy1[1]) + lin.gx * dy3).mean()
    p2 = np.abs(dv2 / steps.tau2 + grad_t(dy2[0], dy2[1]) + lin.gy * dy3).mean()
    g1x, g1y = grad(dv1)
    g2x, g2y = grad(dv2)
    d1 = (np.abs(dy1[0] / 0.5 - g1x).sum() + np.abs(dy1[1] / 0.5 - g1y).sum()) / 8.0
    d2 = (np.abs(dy2[0] / 0.5 - g2x).sum() + np.abs(dy2[1] / 0.5 - g2y).sum()) / 8.0
    d3 = np.abs(dy3 / steps.sigma3 - (lin.gx * dv1 + lin.gy * dv2)).mean()
    expected = p1 + p2 + d1 + d2 + d3

    assert flow_residual(pf, pd, cf, cd, lin, steps) == pytest.approx(expected, abs=1e-12)


def test_pyramid_identical_frames_zero_flow():
    u = gaussian_blob((48, 48), (23.5, 23.5), 7.0)
    flow = solve_flow_pyramid(u, u, SolveConfig())
    assert max(np.abs(flow.v1).max(), np.abs(flow.v2).max()) <= 1e-6


def test_pyramid_large_displacement():
    frames, true_flows = translating_blob((64, 64), 2, (6.0, 2.0), sigma=8.0)
    flow = solve_flow_pyramid(frames[0], frames[1], SolveConfig())
    center0 = ((64 - 1 - 6.0) / 2.0, (64 - 1 - 2.0) / 2.0)
    support = blob_support_mask((64, 64), center0, 8.0)
    epe = np.sqrt((flow.v1 - 6.0) ** 2 + (flow.v2 - 2.0) ** 2)
    assert epe[support].mean() <= 0.5


def test_pyramid_time_continuous_mode():
    frames, _ = translating_blob((24, 24), 2, (0.4, 0.2), sigma=4.0)
    cfg = SolveConfig(time_continuous=True)
    infos = []
    flow = solve_flow_pyramid(frames[0], frames[1], cfg,
                              level_callback=lambda l, w, i: infos.append((l, w, i)))
    assert len(infos) == 1  # single scale, single linearization
    assert np.isfinite(flow.v1).all() and np.isfinite(flow.v2).all()


def test_pyramid_deterministic():
    frames, _ = translating_blob((40, 40), 2, (2.0, 1.0), sigma=6.0)
    a = solve_flow_pyramid(frames[0], frames[1], SolveConfig())
    b = solve_flow_pyramid(frames[0], frames[1], SolveConfig())
    assert np.array_equal(a.v1, b.v1) and np.array_equal(a.v2, b.v2)


def test_pyramid_callback_reports_residuals():
    frames, _ = translating_blob((32, 32), 2, (1.0, 0.5), sigma=5.0)
    seen = []
    solve_flow_pyramid(frames[0], frames[1], SolveConfig(),
                       callback=lambda it, res, en: seen.append((it, res, en)))
    assert seen and all(np.isfinite(e) for _, _, e in seen)


def test_median_never_increases_flow_sup_norm(rng):
    v = rng.standard_normal((12, 12)) * 3.0
    assert np.abs(median_filter(v, 5)).max() <= np.abs(v).max() + 1e-15


def test_solve_level_rejects_nonpositive_weight():
    shape = (4, 4)
    lin = WarpLinearization(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                            np.zeros(shape), np.ones(shape, dtype=bool))
    with pytest.raises(ValueError):
        solve_flow_level(lin, zero_flow(shape), zero_flow_dual(shape), 0.0, 1e-6, 10)
