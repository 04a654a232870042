import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscint import wavepacket as W
from oscint.field import AmplitudeSpec, InputFunction, bump
from oscint.phase import (build_extension_phase, build_model_phase, build_reduced_phase, gauss_map,
                          kakeya_blocks, model_matrix, paraboloid_phase, translate_phase)

PAR2 = paraboloid_phase(2)
PAR3 = paraboloid_phase(3)
AMP = AmplitudeSpec()


@pytest.fixture(scope="module")
def bump_dec():
    return W.decompose(InputFunction.smooth_bump(1), 256, 0.1, 256)


@given(st.floats(-20, 20))
def test_pou_sums_to_one(t):
    total = sum(W.pou(t - m) for m in range(int(np.floor(t)) - 2, int(np.floor(t)) + 3))
    assert abs(total - 1) <= 1e-12
    assert W.pou(t) == 0 or abs(t) < W.CAP_HALF


def test_zero_input():
    dec = W.decompose(InputFunction.zero(1), 64, 0.1, 64)
    assert dec.packets == [] and dec.residual == 0


def test_bump_reconstruction(bump_dec):
    dec = bump_dec
    assert dec.residual <= 1e-6 * dec.f_norm
    assert 1 / 8 <= dec.defect <= 8
    assert dec.pou_error <= 1e-10
    assert all(p.support_ok() for p in dec.packets)


@pytest.mark.parametrize("R", [64, 256])
def test_reconstruction_random_smooth(R):
    f = InputFunction.random_smooth(1, seed=R, max_freq=8)
    dec = W.decompose(f, R, 0.1, 256)
    assert dec.residual <= 1e-6 * dec.f_norm


def test_almost_orthogonality(bump_dec):
    dec = bump_dec
    rng = np.random.default_rng(0)
    for _ in range(20):
        idx = rng.choice(len(dec.packets), size=rng.integers(2, len(dec.packets)), replace=False)
        g = dec.assemble(idx)
        num = np.sum(np.abs(g) ** 2) * dec.lattice.cell
        den = sum(dec.packets[i].norm ** 2 for i in idx)
        assert 1 / 8 <= num / den <= 8


def test_basic_packet_localises():
    R, delta, lam = 64.0, 0.1, 64.0
    rv = R ** ((1 + delta) / 2)
    s = R ** -0.5
    w0 = np.array([3 * s])
    v0 = np.array([2 * rv])
    f = InputFunction.from_callable(
        1, lambda w: np.exp(-2j * np.pi * (w[..., 0] - w0[0]) * v0[0]) * bump(np.abs(w[..., 0] - w0[0]) / (0.7 * s)),
        center=w0, radius=s)
    dec = W.decompose(f, R, delta, lam)
    total = sum(p.norm ** 2 for p in dec.packets)
    near = sum(p.norm ** 2 for p in dec.packets
               if p.theta == (3,) and np.linalg.norm(p.v - v0) <= 2 * rv)
    assert near >= 0.9 * total


def test_decompose_parameter_checks():
    f = InputFunction.smooth_bump(1)
    with pytest.raises(W.PacketError):
        W.decompose(f, 64, 0.5, 64)
    with pytest.raises(W.PacketError):
        W.decompose(f, 128, 0.1, 64)


# core curves ----------------------------------------------------------------------------

def test_core_curve_extension_is_line():
    ph = build_extension_phase(2, "w1^2/2 + w1^3/3")
    w, v, lam = np.array([0.4]), np.array([5.0]), 128.0
    t = np.linspace(-50, 50, 21)
    cc = W.core_curve(ph, w, v, lam, t)
    dh = w[0] + w[0] ** 2
    assert np.all(cc.valid)
    assert np.allclose(cc.gamma[:, 0], v[0] - t * dh, atol=1e-8)
    assert np.all(cc.residual <= 1e-8 * lam)


@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(-20, 20), st.floats(-20, 20))
def test_core_curve_paraboloid(a, b, v1, v2):
    w, v = np.array([a, b]), np.array([v1, v2])
    t = np.linspace(-30, 30, 7)
    cc = W.core_curve(PAR3, w, v, 64.0, t)
    assert np.allclose(cc.gamma, v - t[:, None] * w, atol=1e-8)


def test_core_curve_model_phase():
    ph = build_model_phase(kakeya_blocks(3), 3)
    A = model_matrix(ph)
    lam = 64.0
    w, v = np.array([0.3, -0.2]), np.array([4.0, -1.0])
    t = np.linspace(-40, 40, 17)
    cc = W.core_curve(ph, w, v, lam, t)
    ref = np.array([v - lam * A(tt / lam) @ w for tt in t])
    assert np.allclose(cc.gamma[cc.valid], ref[cc.valid], atol=1e-8)
    assert np.all(cc.valid)


def test_tube_defining_equation(bump_dec):
    p = bump_dec.packets[len(bump_dec.packets) // 2]
    tube = W.make_tube(PAR2, p, 256)
    pts = tube.curve.points[tube.curve.valid]
    r = PAR2.grad_w_lam(pts, np.tile(p.center, (len(pts), 1)), 256) - p.v
    assert np.max(np.abs(r)) <= 1e-6 * 256
    assert tube.radius == pytest.approx(256 ** 0.6)


def test_tangent_follows_gauss_map():
    ph = build_reduced_phase(3, "w1^2/2 + w2^2/2 + w1^3/6", "x1*x3*w1^2/40")
    lam = 32.0
    w, v = np.array([0.2, 0.1]), np.array([1.0, 2.0])
    t = np.linspace(-15, 15, 7)
    eps = 1e-4
    cp = W.core_curve(ph, w, v, lam, t + eps).points
    cm = W.core_curve(ph, w, v, lam, t - eps).points
    c0 = W.core_curve(ph, w, v, lam, t).points
    tang = (cp - cm) / (2 * eps)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    G = gauss_map(ph, c0, np.tile(w, (len(t), 1)), lam)
    ang = np.arccos(np.clip(np.abs(np.sum(tang * G, 1)), -1, 1))
    assert np.max(ang) <= 1e-4


def test_curve_regularity():
    ph = build_reduced_phase(3, "w1^2/2 + w2^2/2 + w1^3/6", "x1*x3*w1^2/40")
    rng = np.random.default_rng(4)
    for _ in range(10):
        w = rng.uniform(-0.5, 0.5, 2)
        v = rng.uniform(-0.3, 0.3, 2)
        t = np.linspace(-0.5, 0.5, 11)
        eps = 1e-5
        gp = W.core_curve(ph, w, v, 1.0, t + eps).gamma
        gm = W.core_curve(ph, w, v, 1.0, t - eps).gamma
        speed = np.sqrt(1 + np.sum(((gp - gm) / (2 * eps)) ** 2, axis=1))
        assert np.all((0.5 <= speed) & (speed <= 2))


def test_core_curve_reports_invalid_range():
    cc = W.core_curve(PAR2, np.array([0.5]), np.array([0.0]), 16.0, np.linspace(-40, 40, 81))
    assert not cc.valid[0] and not cc.valid[-1] and cc.valid[40]
    # |(gamma, t)| = |t| sqrt(1 + 1/4) reaches lambda at |t| = 16 / sqrt(1.25)
    assert cc.t_end == pytest.approx(16 / np.sqrt(1.25), rel=1e-6)
    assert cc.t_start == pytest.approx(-16 / np.sqrt(1.25), rel=1e-6)


# concentration --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def central_packet(bump_dec):
    best = max(bump_dec.packets, key=lambda p: p.norm if np.allclose(p.v, 0) else 0)
    return best


def test_concentration_far_from_tube(central_packet):
    tube = W.make_tube(PAR2, central_packet, 256)
    ext = W.exterior_shell(tube, 8 * 256 ** 0.6)
    assert len(ext) > 0
    assert W.concentration_profile(PAR2, AMP, 256, central_packet, ext, tube) <= 1e-3


def test_concentration_on_core(central_packet):
    tube = W.make_tube(PAR2, central_packet, 256)
    ratio = W.concentration_profile(PAR2, AMP, 256, central_packet, tube.core_points(), tube)
    assert ratio == pytest.approx(1.0)


def test_concentration_monotone(central_packet):
    tube = W.make_tube(PAR2, central_packet, 256)
    r0 = 256 ** 0.6
    ratios = [W.concentration_profile(PAR2, AMP, 256, central_packet, W.exterior_shell(tube, k * r0), tube)
              for k in (2, 4, 8)]
    assert ratios[0] >= ratios[1] >= ratios[2]


def test_concentration_needs_points(central_packet):
    with pytest.raises(W.PacketError):
        W.concentration_profile(PAR2, AMP, 256, central_packet, np.zeros((0, 2)))


# regrouping -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def dec3():
    f = InputFunction.smooth_bump(2, radius=0.3)
    return W.decompose(f, 32, 0.1, 32, tol=1e-6)


def test_regroup_at_origin(dec3):
    rg = W.regroup_at_scale(dec3, np.zeros(3), 16, PAR3, check_hausdorff=False)
    for i, p in enumerate(dec3.packets):
        assert np.allclose(rg.windows[i]["v_center"], p.v)


def test_regroup_is_partition(dec3):
    rg = W.regroup_at_scale(dec3, np.array([3.0, -2.0, 10.0]), 16, PAR3, check_hausdorff=False)
    members = sorted(i for fam in rg.families.values() for i in fam)
    assert members == list(range(len(dec3.packets)))


def test_regroup_hausdorff(dec3):
    rg = W.regroup_at_scale(dec3, np.array([0.0, 0.0, 8.0]), 16, PAR3)
    assert rg.hausdorff and max(rg.hausdorff.values()) <= rg.hausdorff_limit


def test_regroup_range(dec3):
    with pytest.raises(W.PacketError):
        W.regroup_at_scale(dec3, np.zeros(3), 4, PAR3)


def test_translated_curve_identity():
    lam = 64.0
    y = np.array([0.0, 0.0, 12.0])
    tr = translate_phase(PAR3, y, lam)
    rng = np.random.default_rng(2)
    t = np.linspace(-20, 20, 20)
    for _ in range(5):
        w = rng.uniform(-0.5, 0.5, 2)
        v = rng.uniform(-5, 5, 2)
        lhs = W.core_curve(PAR3, w, v, lam, t).gamma
        vb = W.vbar(PAR3, y, w, lam)
        rhs = W.core_curve(tr, w, v - vb, lam, t - y[-1]).gamma + y[:-1]
        assert np.max(np.abs(lhs - rhs)) <= 1e-6


def test_csv_export(tmp_path, bump_dec):
    path = tmp_path / "p.csv"
    small = W.Decomposition(bump_dec.R, bump_dec.delta, bump_dec.lam, bump_dec.lattice,
                            bump_dec.packets[:5], bump_dec.f_values)
    small.to_csv(path, PAR2)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "theta1,v1,norm,t_start,t_end"
    assert len(rows) == 6
