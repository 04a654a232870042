"""Scaling experiments built on the sharp-example constructions."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import variety as V
from . import wavepacket as wp
from .field import (AmplitudeSpec, InputFunction, Lattice, ball_stratified, bump, default_lattice,
                    evaluate, lp_norm, region_volume)
from .phase import (PhaseSpec, bourgain_blocks, build_model_phase, kakeya_blocks, model_matrix,
                    paraboloid_phase, phase_from_json)


class ExperimentError(ValueError):
    pass


@dataclass
class Fit:
    slope: float
    intercept: float
    ci: tuple
    residuals: list
    stderr: float


def loglog_fit(xs, ys) -> Fit:
    x = np.log(np.asarray(xs, float))
    y = np.log(np.asarray(ys, float))
    if len(x) < 3:
        raise ExperimentError("a slope fit needs at least 3 points")
    r = stats.linregress(x, y)
    tq = stats.t.ppf(0.975, len(x) - 2)
    res = y - (r.intercept + r.slope * x)
    return Fit(float(r.slope), float(r.intercept),
               (float(r.slope - tq * r.stderr), float(r.slope + tq * r.stderr)),
               [float(v) for v in res], float(r.stderr))


@dataclass
class ExperimentReport:
    name: str
    params: dict
    xs: list
    ys: list
    fit: Optional[Fit] = None
    expected: Optional[float] = None
    tolerance: Optional[float] = None
    extra: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def slope(self) -> Optional[float]:
        return None if self.fit is None else self.fit.slope

    def within(self, expected: float, tol: float) -> bool:
        return self.fit is not None and abs(self.fit.slope - expected) <= tol

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d, default=_jsonable))

    def write(self, json_path=None, csv_path=None):
        if json_path:
            with open(json_path, "w") as fh:
                json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y"])
                for a, b in zip(self.xs, self.ys):
                    w.writerow([f"{a:.17g}", f"{b:.17g}"])


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def _report(name, params, xs, ys, expected=None, tol=None, **extra) -> ExperimentReport:
    rep = ExperimentReport(name, params, [float(x) for x in xs], [float(y) for y in ys],
                           expected=expected, tolerance=tol, extra=extra)
    if len(xs) >= 3 and all(y > 0 for y in ys):
        rep.fit = loglog_fit(xs, ys)
    else:
        rep.flags.append("no-fit")
    return rep


def _dyadic(lams, cap):
    for lam in lams:
        if lam <= 0 or (int(lam) & (int(lam) - 1)) or lam != int(lam):
            raise ExperimentError(f"lambda={lam} is not a power of two")
        if lam > cap:
            raise ExperimentError(f"lambda={lam} exceeds the desk-scale cap {cap}")


# Kakeya compression -----------------------------------------------------------------------------

def kakeya_v(w) -> np.ndarray:
    """Translation that places the cap's curve in Z: v_{2j-1} = -w_{2j}, other entries 0."""
    w = np.asarray(w, float)
    v = np.zeros_like(w)
    d = w.shape[-1]
    for j in range(0, d - 1, 2):
        v[..., j] = -w[..., j + 1]
    return v


def compression_variety(n: int, lam: float) -> V.Variety:
    polys = [f"l*x{2 * j} - x{2 * j - 1}*x{n}" for j in range(1, (n - 1) // 2 + 1)]
    return V.make_tci(polys, n, params={"l": lam}, check=False)


def _matrix_batch(phase: PhaseSpec):
    """t-array -> (len(t), d, d) values of the model matrix A(t)."""
    import sympy as sp
    from .phase import T
    A = phase.data["A"]
    fns = [[sp.lambdify(T, A[i, j], "numpy") for j in range(A.shape[1])] for i in range(A.shape[0])]

    def ev(t):
        t = np.asarray(t, float)
        return np.stack([np.stack([np.broadcast_to(np.asarray(f(t), float), t.shape) for f in row], -1)
                         for row in fns], -2)
    return ev


def _model_curves(A_fn, caps, V_, ts, lam):
    """gamma(t) = lam v - lam A(t/lam) w for all caps at once: (len(ts), caps, n-1)."""
    As = A_fn(np.asarray(ts) / lam)                          # (T, d, d)
    return lam * V_[None] - lam * np.einsum("tij,cj->tci", As, caps)


def kakeya_compression(n: int = 3, lam_list: Sequence[int] = (64, 128, 256, 512), seed: int = 0,
                       samples: int = 200_000, radius_factor: float = 1.0, curve_points: int = 33,
                       check_caps: int = 64) -> ExperimentReport:
    """Tubes of radius c lam^{1/2} around the compressed curves; volume of their union in B(0, lam)."""
    _dyadic(lam_list, 2 ** 9)
    t0 = time.time()
    ph = build_model_phase(kakeya_blocks(n), n)
    A_fn = _matrix_batch(ph)
    rng = np.random.default_rng(seed)
    vols, errs, maxP, counts = [], [], [], []
    for lam in lam_list:
        caps = wp.cap_grid(lam ** -0.5, n - 1, 1.0)
        Vt = kakeya_v(caps)
        Z = compression_variety(n, lam)
        # every sampled Newton core point must lie on Z
        ts = np.linspace(-lam, lam, curve_points)
        pick = rng.choice(len(caps), min(check_caps, len(caps)), replace=False)
        worst = 0.0
        for c in pick:
            cc = wp.core_curve(ph, caps[c], lam * Vt[c], lam, ts)
            pts = cc.points[cc.valid]
            if len(pts):
                worst = max(worst, float(np.max(np.abs(Z.values(pts)))))
        maxP.append(worst)
        # Monte-Carlo volume of the union of tubes inside B(0, lam)
        r = radius_factor * lam ** 0.5
        x = _ball_points(rng, n, lam, samples)
        inside = np.zeros(len(x), bool)
        for a in range(0, len(x), 4096):
            xs = x[a:a + 4096]
            g = _model_curves(A_fn, caps, Vt, xs[:, -1], lam)     # (chunk, caps, n-1)
            d2 = np.sum((xs[:, None, :-1] - g) ** 2, axis=2)
            inside[a:a + 4096] = np.any(d2 <= r * r, axis=1)
        volB = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * lam ** n
        frac = float(np.mean(inside))
        vols.append(frac * volB)
        errs.append(math.sqrt(frac * (1 - frac) / samples) * volB)
        counts.append(len(caps))
    rep = _report("kakeya_compression", {"n": n, "lam_list": list(lam_list), "seed": seed,
                                         "samples": samples, "radius_factor": radius_factor},
                  lam_list, vols, expected=_compression_exponent(n),
                  tol=0.2, max_abs_P=maxP, max_abs_P_over_lam2=[p / l ** 2 for p, l in zip(maxP, lam_list)],
                  volume_stderr=errs, caps=counts)
    rep.seconds = time.time() - t0
    return rep


def _compression_exponent(n: int) -> float:
    m = n - (n - 1) // 2
    return m + (n - m) / 2


def _ball_points(rng, n, R, N):
    g = rng.normal(size=(N, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * R * rng.uniform(size=(N, 1)) ** (1.0 / n)


# mass concentration -------------------------------------------------------------------------------

def concentration_input(n: int, lam: float) -> InputFunction:
    """f = exp(2 pi i lam Q) psi with Q = (1/2) sum of the odd-indexed squares."""
    q = " + ".join(f"{lam}*w{2 * j - 1}^2/2" for j in range(1, (n - 1) // 2 + 1)) or "0"
    return InputFunction.modulated_bump(n - 1, q)


def near_variety_points(n: int, lam: float, c: float, N: int, seed: int) -> np.ndarray:
    """Points of N_c(Z) in B(0, lam): a point of Z pushed by s in [-c, c] along each unit normal.

    For even n the last frequency variable is not compressed; samples are kept where its
    stationary point -x_{n-1}/x_n lies in [-1/2, 1/2].
    """
    rng = np.random.default_rng(seed)
    Z = compression_variety(n, lam)
    out = []
    while len(out) < N:
        y = _ball_points(rng, n, lam, 4 * N)
        for j in range(1, (n - 1) // 2 + 1):
            y[:, 2 * j - 1] = y[:, 2 * j - 2] * y[:, -1] / lam
        if Z.polys:
            J = Z.jacobian(y)
            for k in range(J.shape[1]):
                nv = J[:, k] / np.linalg.norm(J[:, k], axis=1, keepdims=True)
                y = y + rng.uniform(-c, c, (len(y), 1)) * nv
        keep = np.linalg.norm(y, axis=1) < lam
        if n % 2 == 0:
            keep &= np.abs(y[:, -2]) <= 0.5 * np.abs(y[:, -1])
        out.extend(y[keep])
    return np.array(out[:N])


def mass_concentration(n: int = 3, lam_list: Sequence[int] = (64, 128, 256, 512), c: float = 0.1,
                       points: int = 1000, seed: int = 0, percentile: float = 10.0,
                       far_check: bool = False) -> ExperimentReport:
    _dyadic(lam_list, 2 ** 9 if n >= 3 else 2 ** 11)
    t0 = time.time()
    blocks = bourgain_blocks(n)
    ph = build_model_phase(blocks, n)
    amp = AmplitudeSpec()
    ys, med, shapes = [], [], []
    far = {}
    for lam in lam_list:
        f = concentration_input(n, lam)
        P = near_variety_points(n, lam, c, points, seed)
        lat = default_lattice(ph, f, P, lam)
        v = np.abs(evaluate(ph, amp, lam, f, P, lattice=lat).values)
        ys.append(float(np.percentile(v, percentile)))
        med.append(float(np.median(v)))
        shapes.append(list(lat.shape))
        if far_check and lam == 256:
            far[lam] = _far_contrast(ph, amp, lam, f, n, seed, float(np.median(v)))
    expected = -(n // 2) / 2
    rep = _report("mass_concentration", {"n": n, "lam_list": list(lam_list), "c": c, "points": points,
                                         "seed": seed, "percentile": percentile},
                  lam_list, ys, expected=expected, tol=0.1, median=med, lattice_shapes=shapes,
                  far_contrast=far)
    rep.seconds = time.time() - t0
    return rep


def _far_contrast(ph, amp, lam, f, n, seed, median):
    """max |T f| at points lam/4 away from Z (inside B(0, lam)) relative to the near median."""
    rng = np.random.default_rng(seed + 1)
    Z = compression_variety(n, lam)
    y = _ball_points(rng, n, 0.6 * lam, 400)
    for j in range(1, (n - 1) // 2 + 1):
        y[:, 2 * j - 1] = y[:, 2 * j - 2] * y[:, -1] / lam
    J = Z.jacobian(y)[:, 0]
    y = y + 0.25 * lam * J / np.linalg.norm(J, axis=1, keepdims=True)
    y = y[(np.linalg.norm(y, axis=1) < lam) & (Z.distance(y) >= 0.25 * lam * 0.999)][:100]
    v = np.abs(evaluate(ph, amp, lam, f, y).values)
    return {"points": int(len(y)), "max_over_median": float(v.max() / median),
            "median_over_median": float(np.median(v) / median)}


# transverse equidistribution ---------------------------------------------------------------------------

def _column_input(R, lam, seed, radius=0.5, zmax=(20.0, 10.0), modes=40):
    """Random modulated bump in the cap column around w_1 = 0 (plus the lattice it lives on)."""
    s = R ** -0.5
    h = wp.default_spacing(R, lam)
    lat = Lattice.covering(np.zeros(2), radius + 3 * s, h)
    W = lat.points()
    rng = np.random.default_rng(seed)
    zz = np.column_stack([rng.uniform(-zmax[0], zmax[0], modes), rng.uniform(-zmax[1], zmax[1], modes)])
    cc = rng.normal(size=modes) + 1j * rng.normal(size=modes)
    vals = wp.pou(W[..., 0] / s) * bump(np.linalg.norm(W, axis=-1) / radius) \
        * (np.exp(-2j * np.pi * (W @ zz.T)) @ cc)
    return InputFunction.on_lattice(lat, vals)


def _slab_points(rng, R, w, N):
    pts = np.empty((0, 3))
    while len(pts) < N:
        y = rng.uniform(-R, R, (2 * N, 2))
        x1 = rng.uniform(-w, w, 2 * N)
        p = np.column_stack([x1, y])
        pts = np.vstack([pts, p[np.linalg.norm(p, axis=1) <= R]])
    return pts[:N]


def transverse_equidistribution(n: int = 3, Z: Optional[V.Variety] = None, R: float = 256,
                                rho_list: Sequence[float] = (32, 64, 128), seed: int = 0,
                                delta: float = 0.02, delta_m: float = 0.15, points: int = 3000,
                                single_packet: bool = False) -> ExperimentReport:
    """Energy of the tangent part g of a wave packet decomposition in N_{rho^{1/2+delta_m}}(Z) cap B(0,R).

    The default Z is the plane {x_1 = 0}, which contains the cores of the packets with
    w_1 = 0 and v_1 = 0 for the paraboloid phase.
    """
    if n != 3:
        raise ExperimentError("the surrogate is implemented for n = 3")
    for rho in rho_list:
        if not (R ** 0.5 < rho < R):
            raise ExperimentError(f"rho={rho} outside (R^(1/2), R)")
    t0 = time.time()
    Z = Z if Z is not None else V.make_tci(["x1"], 3)
    ph = paraboloid_phase(3)
    amp = AmplitudeSpec()
    lam = R
    rv = R ** ((1 + delta) / 2)
    f = _column_input(R, lam, seed)
    dec = wp.decompose(f, R, delta, lam, cap_filter=lambda c: abs(c[0]) < 1e-12,
                       v_filter=lambda c, v: abs(v[0]) <= 2.01 * rv and abs(v[1]) <= 1.01 * rv)
    tangent = []
    for i, p in enumerate(dec.packets):
        rep = V.tangency_classify(wp.make_tube(ph, p, lam, 33), Z, R, delta_m)
        if rep.tangent:
            tangent.append(i)
    if not tangent:
        raise ExperimentError("no tangent packets found")
    if single_packet:
        tangent = [max(tangent, key=lambda i: dec.packets[i].norm)]
    g = dec.input_for(tangent)
    gn2 = g.l2_norm() ** 2
    rng = np.random.default_rng(seed + 17)
    whole = Z.is_whole_space
    ys = []
    fixed = _ball_points(rng, 3, R, points) if whole else None
    for rho in rho_list:
        if whole:
            pts, vol = fixed, 4 / 3 * math.pi * R ** 3
        else:
            w = rho ** (0.5 + delta_m)
            pts = _slab_points(rng, R, w, points)
            vol = math.pi * (2 * w * R * R - 2 * w ** 3 / 3)
        v = evaluate(ph, amp, lam, g, pts).values
        ys.append(float(vol * np.mean(np.abs(v) ** 2) / (R ** 0.5 * gn2)))
    m = Z.m
    rep = _report("transverse_equidistribution",
                  {"n": n, "R": R, "rho_list": list(rho_list), "seed": seed, "delta": delta,
                   "delta_m": delta_m, "points": points, "single_packet": single_packet,
                   "Z": Z.to_json()},
                  rho_list, ys, expected=(n - m) / 2, tol=0.2, tangent_packets=len(tangent),
                  packets=len(dec.packets),
                  normalised=[y / (r / R) ** ((n - m) / 2) for y, r in zip(ys, rho_list)])
    rep.seconds = time.time() - t0
    return rep


# generic sweep -------------------------------------------------------------------------------------------

def build_input(recipe: dict, dim: int, lam: float) -> InputFunction:
    kind = recipe.get("kind", "bump")
    if kind == "zero":
        return InputFunction.zero(dim)
    if kind == "bump":
        return InputFunction.smooth_bump(dim, radius=recipe.get("radius", 1.0))
    if kind == "modulated":
        q = str(recipe["q"]).replace("{lam}", repr(float(lam)))
        return InputFunction.modulated_bump(dim, q, radius=recipe.get("radius", 1.0))
    if kind == "concentration":
        return concentration_input(dim + 1, lam)
    if kind == "random":
        return InputFunction.random_smooth(dim, recipe.get("seed", 0), modes=recipe.get("modes", 24),
                                           max_freq=recipe.get("max_freq", 16.0))
    raise ExperimentError(f"unknown input recipe {kind!r}")


def build_phase(spec) -> PhaseSpec:
    if isinstance(spec, PhaseSpec):
        return spec
    if isinstance(spec, dict):
        return phase_from_json(spec)
    n = int(str(spec).split(":")[1]) if ":" in str(spec) else 3
    name = str(spec).split(":")[0]
    if name == "paraboloid":
        return paraboloid_phase(n)
    if name == "kakeya":
        return build_model_phase(kakeya_blocks(n), n)
    if name == "bourgain":
        return build_model_phase(bourgain_blocks(n), n)
    raise ExperimentError(f"unknown phase {spec!r}")


def scaling_sweep(config: dict) -> ExperimentReport:
    """Fit the lambda-exponent of an L^p norm of T^lam f over a ball of radius r*lam.

    config keys: phase, f (recipe), p (default 2), region_factor (default 1), lam_list,
    samples, seed.
    """
    t0 = time.time()
    lams = list(config["lam_list"])
    if len(lams) < 3:
        raise ExperimentError("a sweep needs at least 3 lambda values")
    ph = build_phase(config.get("phase", "bourgain:3"))
    amp = AmplitudeSpec(config.get("amplitude", "constant-one-on-Omega"))
    p = float(config.get("p", 2))
    rf = float(config.get("region_factor", 1.0))
    N = int(config.get("samples", 1000))
    seed = int(config.get("seed", 0))
    ys, errs = [], []
    for lam in lams:
        f = build_input(config.get("f", {"kind": "bump"}), ph.n - 1, lam)
        region = {"kind": "ball", "center": [0.0] * ph.n, "radius": rf * lam}
        pts = ball_stratified(np.zeros(ph.n), rf * lam, N, seed)
        fld = evaluate(ph, amp, lam, f, pts, region=region, scheme="random", seed=seed)
        est = lp_norm(fld, p)
        ys.append(float(est.value))
        errs.append(float(est.stderr))
    expected = config.get("expected")
    rep = _report("scaling_sweep", {k: (v if not isinstance(v, PhaseSpec) else v.to_json())
                                    for k, v in config.items()},
                  lams, ys, expected=expected, tol=config.get("tolerance"), stderr=errs)
    rep.seconds = time.time() - t0
    return rep


def packet_values(phase: PhaseSpec, amp: AmplitudeSpec, lam: float, dec: wp.Decomposition, points) -> np.ndarray:
    """(packets, points) array of T^lam f_{theta,v}."""
    return np.array([evaluate(phase, amp, lam, p.as_input(), points, lattice=p.window).values
                     for p in dec.packets])


def khintchine_check(R: float = 64, lam: float = 64, delta: float = 0.1, seeds: int = 10,
                     points: int = 400, seed: int = 0) -> dict:
    """Random-sign packet sums against the square function, in L^2 over B(0, R) (n = 2)."""
    ph = paraboloid_phase(2)
    amp = AmplitudeSpec()
    f = InputFunction.smooth_bump(1)
    dec = wp.decompose(f, R, delta, lam)
    pts = ball_stratified(np.zeros(2), R, points, seed)
    vals = packet_values(ph, amp, lam, dec, pts)
    sq = float(np.sqrt(np.mean(np.sum(np.abs(vals) ** 2, axis=0))))
    ratios = []
    for s in range(seeds):
        eps = np.random.default_rng(seed + 1 + s).choice([-1.0, 1.0], len(dec.packets))
        ratios.append(float(np.sqrt(np.mean(np.abs(eps @ vals) ** 2)) / sq))
    return {"ratios": ratios, "square_function_l2": sq, "packets": len(dec.packets)}


# named runs (CLI and scripts) -------------------------------------------------------------------

def hormander_sweep(n: int = 2, lam: float = 256, R_list: Sequence[float] = (16, 64, 256), seeds: int = 5,
                    seed: int = 0, max_freq: float = 16.0) -> ExperimentReport:
    """L^2(B_R) ratios for seeded random inputs; the worst ratio per R is the measurement."""
    from .field import hormander_ratio
    t0 = time.time()
    ph = paraboloid_phase(n)
    amp = AmplitudeSpec()
    table = []
    for s in range(seeds):
        f = InputFunction.random_smooth(n - 1, seed + s, max_freq=max_freq)
        table.append([r for _, r in hormander_ratio(ph, amp, lam, f, R_list)])
    worst = np.max(np.array(table), axis=0)
    rep = _report("hormander", {"n": n, "lam": lam, "R_list": list(R_list), "seeds": seeds, "seed": seed},
                  R_list, worst, ratios=table)
    rep.seconds = time.time() - t0
    return rep


def decay_sweep(poly: Sequence[float] = (0.0, 1.0), lo: float = -1.0, hi: float = 1.0, N: int = 3,
                lam_list: Sequence[float] = tuple(2 ** k for k in range(4, 11)),
                gradient_floor: float = 1.0, amplitude: str = "bump", seed: int = 0) -> ExperimentReport:
    """Decay of a scalar non-stationary oscillatory integral."""
    from .field import ScalarOscillatory, nonstationary_decay
    t0 = time.time()
    spec = ScalarOscillatory(list(poly), lo, hi, amplitude, gradient_floor)
    d = nonstationary_decay(spec, lam_list, N)
    rep = _report("nonstationary_decay", {"poly": list(poly), "lo": lo, "hi": hi, "N": N,
                                          "lam_list": list(lam_list), "gradient_floor": gradient_floor,
                                          "amplitude": amplitude},
                  d.lams, d.magnitudes, expected=-N, M=d.M, C=d.C)
    rep.seconds = time.time() - t0
    return rep


def khintchine_report(R: float = 64, lam: float = 64, delta: float = 0.1, seeds: int = 10,
                      points: int = 400, seed: int = 0) -> ExperimentReport:
    t0 = time.time()
    d = khintchine_check(R, lam, delta, seeds, points, seed)
    rep = ExperimentReport("khintchine", {"R": R, "lam": lam, "delta": delta, "seeds": seeds,
                                          "points": points, "seed": seed},
                           list(range(seeds)), d["ratios"],
                           extra={k: v for k, v in d.items() if k != "ratios"}, flags=["no-fit"])
    rep.seconds = time.time() - t0
    return rep


EXPERIMENTS = {
    "kakeya_compression": kakeya_compression,
    "mass_concentration": mass_concentration,
    "transverse_equidistribution": transverse_equidistribution,
    "hormander": hormander_sweep,
    "nonstationary_decay": decay_sweep,
    "khintchine": khintchine_report,
}


def run_named(name: str, config: dict) -> ExperimentReport:
    """Run an experiment by name; config keys are the keyword arguments of the runner."""
    import inspect
    if name == "scaling_sweep":
        return scaling_sweep(config)
    if name not in EXPERIMENTS:
        raise ExperimentError(f"unknown experiment {name!r}; choose from "
                              f"{sorted(EXPERIMENTS) + ['scaling_sweep']}")
    fn = EXPERIMENTS[name]
    allowed = set(inspect.signature(fn).parameters)
    bad = sorted(set(config) - allowed)
    if bad:
        raise ExperimentError(f"unknown config keys for {name}: {bad}")
    kw = dict(config)
    if "Z" in kw and isinstance(kw["Z"], dict):
        kw["Z"] = V.Variety.from_json(kw["Z"])
    return fn(**kw)
