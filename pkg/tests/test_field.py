import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from oscint import field as F
from oscint.experiments import concentration_input
from oscint.phase import build_model_phase, kakeya_blocks, paraboloid_phase

PAR2 = paraboloid_phase(2)
PAR3 = paraboloid_phase(3)
AMP = F.AmplitudeSpec()


def test_zero_input_gives_zero_field(rng):
    pts = rng.uniform(-30, 30, (40, 3))
    fld = F.evaluate(PAR3, AMP, 64, F.InputFunction.zero(2), pts)
    assert np.all(fld.values == 0)
    for p in (1, 2, 4, np.inf):
        assert F.lp_norm(fld, p).value == 0


def test_origin_value_is_total_weight():
    f = F.InputFunction.smooth_bump(2, radius=0.8)
    lat = F.default_lattice(PAR3, f, np.zeros((1, 3)), 64)
    v = F.evaluate(PAR3, AMP, 64, f, np.zeros((1, 3)), lattice=lat).values[0]
    total = np.sum(f.sample(lat)) * lat.cell
    assert abs(v - total) <= 1e-12 * abs(total)
    assert abs(v.imag) <= 1e-12


def test_matches_quadrature_oracle():
    lam = 64.0
    f = F.InputFunction.smooth_bump(1)
    x = np.array([[0.0, lam / 2]])
    got = F.evaluate(PAR2, AMP, lam, f, x).values[0]
    # phi^lam(x; w) = x1 w + x2 w^2 / 2, so the exponent is 2 pi i (lam/2) w^2 / 2
    def part(fn):
        return integrate.quad(lambda w: fn(2 * np.pi * lam / 4 * w * w) * F.bump(abs(w)), -1, 1,
                              limit=400, epsabs=1e-14, epsrel=1e-12)[0]
    ref = part(np.cos) + 1j * part(np.sin)
    assert abs(got - ref) <= 1e-3 * abs(ref)


def test_bit_identical_reruns(rng):
    ph = build_model_phase(kakeya_blocks(3), 3)
    f = F.InputFunction.random_smooth(2, seed=3, max_freq=8)
    pts = F.ball_stratified(np.zeros(3), 64, 200, seed=5)
    a = F.evaluate(ph, AMP, 64, f, pts).values
    b = F.evaluate(ph, AMP, 64, f, pts).values
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(F.ball_stratified(np.zeros(3), 64, 200, seed=5), pts)


@given(st.integers(0, 2 ** 16), st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_linearity(seed, c):
    rng = np.random.default_rng(seed)
    lam = 32.0
    lat = F.Lattice.covering(np.zeros(1), 1.0, 1.0 / 64)
    shape = lat.shape[::-1]
    v1 = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    v2 = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    pts = rng.uniform(-lam / 2, lam / 2, (25, 2))
    ev = lambda v: F.evaluate(PAR2, AMP, lam, F.InputFunction.on_lattice(lat, v), pts, lattice=lat).values
    lhs = ev(v1 + c * v2)
    rhs = ev(v1) + c * ev(v2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_modulation_covariance(rng):
    lam = 64.0
    v = np.array([3.0, -2.0])
    f = F.InputFunction.smooth_bump(2, radius=0.6)
    fm = F.InputFunction.modulated_bump(2, f"{v[0]}*w1 + {v[1]}*w2", radius=0.6)
    pts = rng.uniform(-20, 20, (20, 3))
    shifted = pts + np.concatenate([v, [0.0]])
    a = F.evaluate(PAR3, AMP, lam, fm, pts).values
    b = F.evaluate(PAR3, AMP, lam, f, shifted).values
    assert np.allclose(np.abs(a), np.abs(b), rtol=1e-8, atol=1e-10)


def test_locally_constant(rng):
    lam, rho = 256.0, 16.0
    f = F.InputFunction.smooth_bump(1, center=[0.3], radius=1 / rho)
    base = rng.uniform(-lam / 3, lam / 3, (400, 2))
    d = rng.normal(size=base.shape)
    d *= (rho / 10) * rng.uniform(size=(len(base), 1)) / np.linalg.norm(d, axis=1, keepdims=True)
    va = np.abs(F.evaluate(PAR2, AMP, lam, f, base).values)
    vb = np.abs(F.evaluate(PAR2, AMP, lam, f, base + d).values)
    assert np.max(np.abs(va - vb)) <= 0.2 * max(va.max(), vb.max())


def test_resolution_error_on_coarse_lattice():
    f = F.InputFunction.smooth_bump(1)
    coarse = F.Lattice.covering(np.zeros(1), 1.0, 0.1)
    with pytest.raises(F.ResolutionError):
        F.evaluate(PAR2, AMP, 256, f, [[100.0, 100.0]], lattice=coarse)


def test_fast_transform_audit():
    f = F.InputFunction.random_smooth(1, seed=1, max_freq=8)
    ax = np.arange(-40, 41) * 0.5
    vals, err = F.evaluate_grid(PAR2, AMP, 64, f, [ax], ax, audit=True)
    assert vals.shape == (len(ax), len(ax))
    assert err <= 1e-8


def test_lp_norm_constant_field():
    pts = F.ball_stratified(np.zeros(3), 5.0, 500, 0)
    region = {"kind": "ball", "center": [0, 0, 0], "radius": 5.0}
    fld = F.SampledField(pts, np.full(len(pts), 2.0 + 0j), 1.0, region, "random", 0)
    V = 4 / 3 * np.pi * 125
    for p in (1, 2, 3):
        assert F.lp_norm(fld, p).value == pytest.approx(2.0 * V ** (1 / p), rel=1e-12)
    assert F.lp_norm(fld, np.inf).value == 2.0
    with pytest.raises(F.FieldError):
        F.lp_norm(fld, 0.5)


def test_lp_norm_matches_dense_grid():
    lam = 64.0
    ph = build_model_phase([[["t"]]], 2)
    f = concentration_input(2, lam)
    region = {"kind": "ball", "center": [0, 0], "radius": lam}
    pts = F.ball_stratified(np.zeros(2), lam, 4000, seed=11)
    est = F.lp_norm(F.evaluate(ph, AMP, lam, f, pts, region=region, scheme="random", seed=11), 2)
    grid = F.ball_grid(np.zeros(2), lam, 0.5)
    dense = F.evaluate(ph, AMP, lam, f, grid, region=region, scheme="grid", cell_volume=0.25)
    oracle = F.lp_norm(dense, 2).value
    assert abs(est.value - oracle) <= 2 * est.stderr


@pytest.mark.parametrize("seed", range(5))
def test_hormander_ratios(seed):
    f = F.InputFunction.random_smooth(1, seed=seed, max_freq=16)
    out = F.hormander_ratio(PAR2, AMP, 256, f, [16, 64, 256])
    assert all(r <= 10 for _, r in out)
    assert all(r > 0 for _, r in out)


def test_hormander_zero_and_domain():
    assert F.hormander_ratio(PAR2, AMP, 64, F.InputFunction.zero(1), [4, 16]) == [(4, 0.0), (16, 0.0)]
    with pytest.raises(F.FieldError):
        F.hormander_ratio(PAR2, AMP, 64, F.InputFunction.smooth_bump(1), [128])


def test_slab_ratios(rng):
    f = F.InputFunction.random_smooth(1, seed=9, max_freq=16)
    out = F.slab_ratio(PAR2, AMP, 64, f, rng.uniform(-60, 60, 5))
    assert all(0 < r <= 10 for _, r in out)


# non-stationary phase ------------------------------------------------------------------

LAMS = [2 ** k for k in range(4, 11)]


def test_decay_linear_phase():
    rep = F.nonstationary_decay(F.ScalarOscillatory([0.0, 1.0]), LAMS, 3)
    assert rep.slope <= -3
    assert rep.C < np.inf


def test_decay_quadratic_perturbation():
    spec = F.ScalarOscillatory([0.0, 1.0, 0.1], -0.5, 0.5, gradient_floor=0.9)
    assert F.nonstationary_decay(spec, LAMS, 3).slope <= -2.7


def test_decay_zero_amplitude():
    rep = F.nonstationary_decay(F.ScalarOscillatory([0.0, 1.0], amplitude="zero"), LAMS[:3], 3)
    assert rep.magnitudes == [0.0, 0.0, 0.0]


def test_decay_precondition():
    with pytest.raises(F.PreconditionError, match="i\\)"):
        F.nonstationary_decay(F.ScalarOscillatory([0.0, 0.0, 1.0]), LAMS[:3], 3)
    with pytest.raises(F.PreconditionError, match="ii\\)"):
        F.nonstationary_decay(F.ScalarOscillatory([0.0, 1.0, 0.3], -0.5, 0.5, gradient_floor=0.5, M=0.1),
                              LAMS[:3], 2)
