"""Evaluation of T^lam f(x) = int e^{2 pi i phi^lam(x;w)} a^lam(x;w) f(w) dw.

The w-integral is replaced by a weighted sum over a rectangular lattice of
spacing h.  Poisson summation shows the sum equals the integral plus aliased
copies whose phase gradient is shifted by nonzero multiples of 1/h, so h is
chosen with max|d_w phase| <= (1 - margin)/h on the support (see
``required_spacing``).  Lattices that violate this raise ResolutionError.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from . import _kernel
from .phase import PhaseSpec, parse_poly, wsyms

DEFAULT_MARGIN = 1.0 / 3.0


class FieldError(ValueError):
    pass


class ResolutionError(FieldError):
    def __init__(self, msg, required_spacing=None, required_shape=None):
        super().__init__(msg)
        self.required_spacing = required_spacing
        self.required_shape = required_shape


class PreconditionError(FieldError):
    pass


# smooth profiles ----------------------------------------------------------------

def bump(t):
    """exp(1 - 1/(1 - t^2)) on |t| < 1, zero elsewhere; equals 1 at 0."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m] ** 2))
    return out


def smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def plateau(r, inner, outer):
    """1 for r <= inner, 0 for r >= outer, smooth in between."""
    return 1.0 - smoothstep((np.asarray(r, float) - inner) / (outer - inner))


# lattice -------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Points origin + k*h, k in prod range(shape); axis 0 is the fastest (inner) axis."""
    h: float
    origin: tuple
    shape: tuple

    @property
    def dim(self) -> int:
        return len(self.shape)

    @classmethod
    def covering(cls, center, radius, h) -> "Lattice":
        """Lattice of spacing h aligned to h*Z^d covering the box center +- radius."""
        center = np.atleast_1d(np.asarray(center, float))
        lo = np.floor((center - radius) / h).astype(np.int64)
        hi = np.ceil((center + radius) / h).astype(np.int64)
        return cls(float(h), tuple(float(v) for v in lo * h), tuple(int(v) for v in hi - lo + 1))

    def axes(self) -> list[np.ndarray]:
        return [self.origin[i] + self.h * np.arange(self.shape[i]) for i in range(self.dim)]

    def points(self) -> np.ndarray:
        """Array (*shape reversed, dim) so that the last array axis is lattice axis 0."""
        ax = self.axes()
        grids = np.meshgrid(*ax[::-1], indexing="ij")
        return np.stack(grids[::-1], axis=-1)

    @property
    def cell(self) -> float:
        return self.h ** self.dim


# amplitudes ----------------------------------------------------------------------

@dataclass(frozen=True)
class AmplitudeSpec:
    """Tensor amplitude a(x; w) = ax(|x|) * aw(|w|) with a^lam(x; w) = a(x/lam; w)."""
    kind: str = "constant-one-on-Omega"
    x_radius: float = 1.0
    omega_radius: float = 1.0
    smooth_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("constant-one-on-Omega", "indicator-smoothed", "tensor-bump"):
            raise FieldError(f"unknown amplitude kind {self.kind!r}")

    def _profile(self, r, R):
        if self.kind == "constant-one-on-Omega":
            return (r <= R * (1 + 1e-12)).astype(float)
        if self.kind == "indicator-smoothed":
            return plateau(r, R * (1 - self.smooth_fraction), R)
        return bump(r / R)

    def ax(self, x, lam):
        r = np.linalg.norm(np.atleast_2d(x), axis=-1) / lam
        return self._profile(r, self.x_radius)

    def aw(self, w):
        r = np.linalg.norm(np.asarray(w, float), axis=-1)
        return self._profile(r, self.omega_radius)


# input functions ------------------------------------------------------------------

@dataclass
class InputFunction:
    """f(w) = amp(w) * exp(2 pi i q(w)), q a polynomial (turns), or lattice samples.

    kind is "zero", "callable", "modulated-bump", "lattice" or "packets".
    """
    kind: str
    dim: int
    amp: Optional[Callable] = None
    q: sp.Expr = field(default_factory=lambda: sp.Integer(0))
    center: np.ndarray = None
    radius: float = 1.0
    lattice: Optional[Lattice] = None
    values: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    bandwidth: float = 0.0  # sup of |d_w arg amp| not captured by q, added to the resolution check

    def __post_init__(self):
        if self.center is None:
            self.center = np.zeros(self.dim)
        self.center = np.atleast_1d(np.asarray(self.center, float))

    # constructors
    @classmethod
    def zero(cls, dim):
        return cls("zero", dim, amp=lambda w: np.zeros(np.shape(w)[:-1]))

    @classmethod
    def from_callable(cls, dim, fn, center=None, radius=1.0, q=0, **meta):
        return cls("callable", dim, amp=fn, q=parse_poly(q, {str(s): s for s in wsyms(dim + 1)}),
                   center=center, radius=radius, meta=meta)

    @classmethod
    def smooth_bump(cls, dim, center=None, radius=1.0):
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        return cls.from_callable(dim, lambda w: bump(np.linalg.norm(w - c, axis=-1) / radius),
                                 center=c, radius=radius, recipe="bump")

    @classmethod
    def modulated_bump(cls, dim, q, center=None, radius=1.0):
        c = np.zeros(dim) if center is None else np.asarray(center, float)
        f = cls.from_callable(dim, lambda w: bump(np.linalg.norm(w - c, axis=-1) / radius),
                              center=c, radius=radius, q=q, recipe="modulated-bump")
        f.kind = "modulated-bump"
        return f

    @classmethod
    def on_lattice(cls, lattice: Lattice, values, **meta):
        values = np.asarray(values, complex)
        if values.shape != tuple(lattice.shape[::-1]):
            raise FieldError("values must have shape lattice.shape[::-1]")
        ax = lattice.axes()
        lo = np.array([a[0] for a in ax])
        hi = np.array([a[-1] for a in ax])
        return cls("lattice", lattice.dim, lattice=lattice, values=values,
                   center=(lo + hi) / 2, radius=float(np.max(hi - lo) / 2 + lattice.h), meta=meta)

    @classmethod
    def random_smooth(cls, dim, seed, radius=1.0, modes=24, max_freq=64.0):
        """Random trigonometric polynomial times a smooth window; frequencies up to max_freq."""
        rng = np.random.default_rng(seed)
        freqs = rng.uniform(-max_freq, max_freq, size=(modes, dim))
        coef = (rng.normal(size=modes) + 1j * rng.normal(size=modes)) / np.sqrt(2 * modes)

        def fn(w):
            w = np.asarray(w, float)
            s = np.exp(2j * np.pi * (w @ freqs.T)) @ coef
            return s * plateau(np.linalg.norm(w, axis=-1), 0.8 * radius, radius)

        f = cls.from_callable(dim, fn, radius=radius, recipe="random_smooth", seed=seed)
        f.bandwidth = float(max_freq) + 4.0 / (0.2 * radius)
        return f

    # sampling
    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "lattice" and not np.any(self.values))

    def sample(self, lattice: Lattice) -> np.ndarray:
        """Complex amplitude (without the q phase) on the lattice, shape lattice.shape[::-1]."""
        if self.kind == "lattice":
            return _embed(self.lattice, self.values, lattice)
        pts = lattice.points()
        return np.asarray(self.amp(pts), complex).reshape(pts.shape[:-1])

    def l2_norm(self, lattice: Optional[Lattice] = None) -> float:
        if self.kind == "lattice":
            return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.lattice.cell))
        if lattice is None:
            h = self.radius / 400.0 if self.dim == 1 else self.radius / 120.0
            lattice = Lattice.covering(self.center, self.radius, h)
        return float(np.sqrt(np.sum(np.abs(self.sample(lattice)) ** 2) * lattice.cell))


def _embed(src: Lattice, values, dst: Lattice):
    if not np.isclose(src.h, dst.h, rtol=1e-12, atol=0):
        raise ResolutionError("lattice-sampled input cannot be resampled to a different spacing")
    off = np.rint((np.array(src.origin) - np.array(dst.origin)) / dst.h).astype(int)
    out = np.zeros(dst.shape[::-1], complex)
    sl_dst, sl_src = [], []
    for ax in range(src.dim):
        o = off[ax]
        a0, a1 = max(0, o), min(dst.shape[ax], o + src.shape[ax])
        if a1 <= a0:
            return out
        sl_dst.append(slice(a0, a1))
        sl_src.append(slice(a0 - o, a1 - o))
    out[tuple(sl_dst[::-1])] = values[tuple(sl_src[::-1])]
    return out


# sampled fields ----------------------------------------------------------------------

@dataclass
class SampledField:
    points: np.ndarray
    values: np.ndarray
    lam: float
    region: dict
    scheme: str = "grid"
    seed: Optional[int] = None
    cell_volume: Optional[float] = None
    lattice: Optional[Lattice] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.values = np.asarray(self.values, complex).reshape(-1)
        if len(self.points) != len(self.values):
            raise FieldError("points and values differ in length")

    def header(self) -> dict:
        return {"lambda": self.lam, "seed": self.seed, "region": self.region, "scheme": self.scheme,
                "count": int(len(self.values)), "cell_volume": self.cell_volume}

    def to_csv(self, path):
        n = self.points.shape[1]
        cols = [f"x{i + 1}" for i in range(n)] + ["re", "im"]
        data = np.column_stack([self.points, self.values.real, self.values.imag])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

    def write(self, csv_path, json_path):
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.header(), fh, indent=2, default=float)


# regions ------------------------------------------------------------------------------

def region_volume(region: dict) -> float:
    kind = region["kind"]
    if kind == "ball":
        from math import gamma, pi
        n = region["dim"] if "dim" in region else len(region["center"])
        r = region["radius"]
        return pi ** (n / 2) / gamma(n / 2 + 1) * r ** n
    if "volume" in region:
        return float(region["volume"])
    raise FieldError(f"no volume for region {kind}")


def ball_grid(center, radius, spacing) -> np.ndarray:
    c = np.asarray(center, float)
    k = int(np.floor(radius / spacing))
    ax = np.arange(-k, k + 1) * spacing
    g = np.stack(np.meshgrid(*([ax] * len(c)), indexing="ij"), -1).reshape(-1, len(c))
    g = g[np.linalg.norm(g, axis=1) <= radius]
    return g + c


def ball_stratified(center, radius, count, seed) -> np.ndarray:
    """Jittered-grid samples in a ball: one uniform point per cube of a grid, kept if inside."""
    c = np.asarray(center, float)
    d = len(c)
    rng = np.random.default_rng(seed)
    frac = np.pi ** (d / 2) / _gamma(d / 2 + 1) / 2 ** d
    m = int(np.ceil((count / frac) ** (1.0 / d) * 1.05)) + 1
    while True:
        idx = np.stack(np.meshgrid(*([np.arange(m)] * d), indexing="ij"), -1).reshape(-1, d)
        pts = (idx + rng.random(idx.shape)) / m * 2 - 1
        pts = pts[np.linalg.norm(pts, axis=1) < 1]
        if len(pts) >= count:
            keep = np.sort(rng.choice(len(pts), size=count, replace=False))
            return c + radius * pts[keep]
        m += 1


def _gamma(x):
    from math import gamma
    return gamma(x)


# resolution ------------------------------------------------------------------------------

def _total_coefficients(phase: PhaseSpec, f: InputFunction, points, lam):
    """Monomial exponents and per-point coefficients (turns) of phi^lam(x;.) + q."""
    exps, coef = phase.w_coefficients(points, lam)
    q = sp.expand(f.q)
    if q == 0:
        return exps, coef
    w = wsyms(phase.n)
    qp = sp.Poly(q, *w)
    rows = {tuple(e): i for i, e in enumerate(map(tuple, exps))}
    extra_e, extra_c = [], []
    coef = coef.copy()
    for mon, c in qp.terms():
        if mon in rows:
            coef[:, rows[mon]] += float(c)
        else:
            extra_e.append(mon)
            extra_c.append(float(c))
    if extra_e:
        exps = np.vstack([exps, np.array(extra_e, dtype=np.int64)])
        coef = np.hstack([coef, np.tile(np.array(extra_c), (coef.shape[0], 1))])
    return exps, coef


def _poly_grad(exps, coef, w):
    """Gradient in w of sum_m coef[p, m] w^exps[m] at sample w (S, d) -> (P, S, d)."""
    d = exps.shape[1]
    S = w.shape[0]
    grads = np.zeros((coef.shape[0], S, d))
    for i in range(d):
        mons = np.ones((S, len(exps)))
        for m, e in enumerate(exps):
            if e[i] == 0:
                mons[:, m] = 0.0
                continue
            v = e[i] * w[:, i] ** (e[i] - 1)
            for j in range(d):
                if j != i:
                    v = v * w[:, j] ** e[j]
            mons[:, m] = v
        grads[:, :, i] = coef @ mons.T
    return grads


def _probe_points(points, cap=3000):
    points = np.atleast_2d(points)
    if len(points) <= cap:
        return points
    r = np.linalg.norm(points, axis=1)
    far = np.argsort(r)[-cap // 3:]
    rng = np.random.default_rng(12345)
    rest = rng.choice(len(points), size=cap - len(far), replace=False)
    # include coordinate-wise extremes so linear-in-x gradients are bounded exactly
    ext = np.concatenate([np.argmax(points, 0), np.argmin(points, 0)])
    return points[np.unique(np.concatenate([far, rest, ext]))]


def max_phase_gradient(phase: PhaseSpec, f: InputFunction, points, lam, center=None, radius=None) -> np.ndarray:
    """Componentwise sup of |d_w (phi^lam + q)| over points x support box of f."""
    center = f.center if center is None else center
    radius = f.radius if radius is None else radius
    d = phase.n - 1
    k = 9 if d == 1 else 7
    ax = np.linspace(-radius, radius, 2 * k + 1)
    ws = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d) + center
    pts = _probe_points(points)
    exps, coef = _total_coefficients(phase, f, pts, lam)
    g = np.abs(_poly_grad(exps, coef, ws))
    return g.max(axis=(0, 1)) + f.bandwidth


def required_spacing(phase, f, points, lam, margin=DEFAULT_MARGIN) -> float:
    g = float(np.max(max_phase_gradient(phase, f, points, lam)))
    h = (1.0 - margin) / max(g, 1e-300)
    return min(h, 1.0 / lam)


def default_lattice(phase, f, points, lam, margin=DEFAULT_MARGIN) -> Lattice:
    h = required_spacing(phase, f, points, lam, margin)
    return Lattice.covering(f.center, f.radius, h)


# evaluation -----------------------------------------------------------------------------

def _weights(f: InputFunction, amp: AmplitudeSpec, lat: Lattice):
    vals = f.sample(lat)
    vals = vals * amp.aw(lat.points())
    return vals * lat.cell


def direct_sum(phase, f, lat, wts, points, lam):
    pts = np.atleast_2d(np.asarray(points, float))
    exps, coef = _total_coefficients(phase, f, pts, lam)
    d = lat.dim
    e0 = exps[:, 0].astype(np.int64)
    deg = int(e0.max()) if len(e0) else 0
    w2 = wts.reshape(-1, lat.shape[0])
    axes = lat.axes()
    if d > 1:
        other = np.stack(np.meshgrid(*axes[1:][::-1], indexing="ij"), -1).reshape(-1, d - 1)[:, ::-1]
    else:
        other = np.zeros((1, 0))
    rowmono = np.ones((other.shape[0], len(exps)))
    for m, e in enumerate(exps):
        for j in range(1, d):
            if e[j]:
                rowmono[:, m] *= other[:, j - 1] ** e[j]
    nz = w2 != 0
    has = nz.any(axis=1)
    ks = np.where(has, nz.argmax(axis=1), 0).astype(np.int64)
    ke = np.where(has, w2.shape[1] - nz[:, ::-1].argmax(axis=1), 0).astype(np.int64)
    _kernel.set_threads()
    return _kernel.expsum(np.ascontiguousarray(coef), e0, rowmono, float(axes[0][0]), float(lat.h),
                          np.ascontiguousarray(w2.real), np.ascontiguousarray(w2.imag), ks, ke, deg)


def check_lattice(phase, f, points, lam, lat: Lattice, margin=DEFAULT_MARGIN):
    g = max_phase_gradient(phase, f, points, lam)
    limit = (1.0 - margin) / lat.h
    if np.any(g > limit * (1 + 1e-9)) or lat.h > 1.0 / lam * (1 + 1e-12):
        need = min((1.0 - margin) / float(np.max(g)), 1.0 / lam)
        shape = tuple(int(np.ceil(s * lat.h / need)) for s in lat.shape)
        raise ResolutionError(
            f"w-lattice spacing {lat.h:.3g} too coarse: phase gradient up to {np.max(g):.4g} needs "
            f"spacing <= {need:.4g} (lattice shape >= {shape})", need, shape)


def evaluate(phase: PhaseSpec, amp: AmplitudeSpec, lam: float, f: InputFunction, points,
             lattice: Optional[Lattice] = None, margin: float = DEFAULT_MARGIN,
             region: Optional[dict] = None, scheme: str = "grid", seed=None,
             cell_volume=None) -> SampledField:
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.shape[1] != phase.n:
        raise FieldError("points have the wrong dimension")
    region = region or {"kind": "points"}
    if f.is_zero or len(pts) == 0:
        return SampledField(pts, np.zeros(len(pts), complex), lam, region, scheme, seed, cell_volume)
    if lattice is None:
        lattice = f.lattice if f.kind == "lattice" else default_lattice(phase, f, pts, lam, margin)
    check_lattice(phase, f, pts, lam, lattice, margin)
    wts = _weights(f, amp, lattice)
    vals = direct_sum(phase, f, lattice, wts, pts, lam)
    vals = vals * amp.ax(pts, lam)
    return SampledField(pts, vals, lam, region, scheme, seed, cell_volume, lattice)


# fast path on uniform x'-grids -------------------------------------------------------------

def evaluate_grid(phase: PhaseSpec, amp: AmplitudeSpec, lam: float, f: InputFunction,
                  xaxes: Sequence[np.ndarray], xn_values, margin=DEFAULT_MARGIN,
                  audit: bool = False, audit_tol: float = 1e-8):
    """T^lam f on the grid xaxes[0] x ... x xaxes[n-2] x xn_values, for extension phases.

    Each x_n slice is a discrete Fourier transform in x'.  The lattice spacing is
    set to h = 1/(M*dx) so that x'-steps align with FFT bins.  Returns an array
    of shape (len(xn_values), len(xaxes[n-2]), ..., len(xaxes[0])) and, with
    audit=True, the max relative deviation from direct summation on 10 points.
    """
    if not phase.is_extension:
        raise FieldError("the fast transform needs an extension-form phase")
    d = phase.n - 1
    xaxes = [np.asarray(a, float) for a in xaxes]
    xn_values = np.asarray(xn_values, float)
    dx = xaxes[0][1] - xaxes[0][0] if len(xaxes[0]) > 1 else 1.0
    for a in xaxes:
        if len(a) > 1 and not np.allclose(np.diff(a), dx, rtol=1e-9, atol=1e-12):
            raise FieldError("fast transform needs equally spaced x' axes with a common step")
    corners = np.array(np.meshgrid(*[[a[0], a[-1]] for a in xaxes], [xn_values.min(), xn_values.max()],
                                   indexing="ij")).reshape(phase.n, -1).T
    hmax = required_spacing(phase, f, corners, lam, margin)
    if f.kind == "lattice":
        # the samples fix h, so the x'-step must divide 1/h
        lat = f.lattice
        h = lat.h
        Mf = 1.0 / (dx * h)
        M = int(round(Mf))
        if abs(Mf - M) > 1e-9 * Mf or M < max(len(a) for a in xaxes):
            raise FieldError(f"x'-step {dx} is incompatible with the input lattice spacing {h}")
        if h > hmax * (1 + 1e-12):
            raise ResolutionError(f"input lattice spacing {h:.3g} exceeds the required {hmax:.3g}", hmax)
    else:
        M = int(np.ceil(1.0 / (dx * hmax)))
        M = max(M, max(len(a) for a in xaxes))
        M = int(_next_fast(M))
        h = 1.0 / (M * dx)
        lat = Lattice.covering(f.center, f.radius, h)
    wts = _weights(f, amp, lat)
    wpts = lat.points()
    hval = phase.h_fn()(*np.moveaxis(wpts, -1, 0))
    qval = _qvalue(f, wpts)
    out = np.empty((len(xn_values),) + tuple(len(a) for a in xaxes[::-1]), complex)
    w_axes = lat.axes()
    base = wts * np.exp(2j * np.pi * (qval + sum(xaxes[i][0] * wpts[..., i] for i in range(d))))
    for s, xn in enumerate(xn_values):
        g = base * np.exp(2j * np.pi * xn * hval)
        folded = np.zeros((M,) * d, complex)
        # lattice index k maps to FFT bin (k + k0) mod M, k0 from the lattice origin
        idx = [np.mod(np.rint(w_axes[i] / h).astype(np.int64), M) for i in range(d)]
        np.add.at(folded, np.ix_(*idx[::-1]), g)
        F = np.fft.ifftn(folded) * M ** d
        sel = np.ix_(*[np.mod(np.arange(len(xaxes[i])), M) for i in range(d)][::-1])
        out[s] = F[sel]
    # lattice points are integer multiples of h, so exp(2 pi i x'_j w_k) splits exactly into
    # exp(2 pi i x'_0 w_k) (kept in base) times an FFT kernel exp(2 pi i j k / M)
    X = np.stack(np.meshgrid(xn_values, *xaxes[::-1], indexing="ij")[::-1], -1)
    out *= amp.ax(X.reshape(-1, phase.n), lam).reshape(out.shape)
    if not audit:
        return out, None
    rng = np.random.default_rng(7)
    flat = X.reshape(-1, phase.n)
    pick = rng.choice(len(flat), size=min(10, len(flat)), replace=False)
    ref = evaluate(phase, amp, lam, f, flat[pick], lattice=lat, margin=margin).values
    got = out.reshape(-1)[pick]
    err = float(np.max(np.abs(got - ref)) / max(np.max(np.abs(ref)), 1e-300))
    if err > audit_tol:
        raise FieldError(f"fast transform audit failed: relative deviation {err:.3g}")
    return out, err


def _qvalue(f: InputFunction, wpts):
    q = sp.expand(f.q)
    if q == 0:
        return np.zeros(wpts.shape[:-1])
    fn = sp.lambdify(list(wsyms(f.dim + 1)), q, "numpy")
    return np.broadcast_to(fn(*np.moveaxis(wpts, -1, 0)), wpts.shape[:-1])


def _next_fast(m):
    from scipy.fft import next_fast_len
    return next_fast_len(m)


# norms -------------------------------------------------------------------------------------

@dataclass
class NormEstimate:
    value: float
    stderr: float = 0.0

    def __float__(self):
        return self.value


def lp_norm(fld: SampledField, p: float) -> NormEstimate:
    if p < 1:
        raise FieldError("p must be >= 1")
    if len(fld.values) == 0:
        raise FieldError("empty field")
    a = np.abs(fld.values)
    if np.isinf(p) or not np.any(a):
        return NormEstimate(float(a.max()), 0.0)
    ap = a ** p
    if fld.scheme == "grid":
        vol = fld.cell_volume if fld.cell_volume is not None else region_volume(fld.region) / len(a)
        I = float(np.sum(ap) * vol)
        return NormEstimate(I ** (1.0 / p), 0.0)
    V = region_volume(fld.region)
    I = V * float(np.mean(ap))
    se_I = V * float(np.std(ap, ddof=1)) / np.sqrt(len(ap)) if len(ap) > 1 else 0.0
    val = I ** (1.0 / p)
    se = (val / (p * I)) * se_I if I > 0 else 0.0
    return NormEstimate(val, se)


def hormander_ratio(phase, amp, lam, f: InputFunction, R_list, spacing: float = 0.5,
                    fast: str = "auto") -> list[tuple[float, float]]:
    """||T^lam f||_{L^2(B_R)} / (R^{1/2} ||f||_2) on grids of the given spacing."""
    out = []
    fn = f.l2_norm()
    for R in R_list:
        if R > lam:
            raise FieldError(f"R={R} exceeds lambda={lam}")
        if R < 1:
            raise FieldError("R must be at least 1")
        if f.is_zero or fn == 0:
            out.append((R, 0.0))
            continue
        use_fast = fast == "on" or (fast == "auto" and phase.is_extension and f.kind != "lattice")
        if use_fast:
            k = int(np.floor(R / spacing))
            ax = np.arange(-k, k + 1) * spacing
            vals, _ = evaluate_grid(phase, amp, lam, f, [ax] * (phase.n - 1), ax)
            X = np.stack(np.meshgrid(*([ax] * phase.n), indexing="ij"), -1)
            inside = np.linalg.norm(X, axis=-1) <= R
            I = float(np.sum(np.abs(vals[inside]) ** 2) * spacing ** phase.n)
        else:
            pts = ball_grid(np.zeros(phase.n), R, spacing)
            fld = evaluate(phase, amp, lam, f, pts, cell_volume=spacing ** phase.n)
            I = float(np.sum(np.abs(fld.values) ** 2) * spacing ** phase.n)
        out.append((R, float(np.sqrt(I) / (np.sqrt(R) * fn))))
    return out


def slab_ratio(phase, amp, lam, f: InputFunction, xn_list, spacing: float = 0.5) -> list[tuple[float, float]]:
    """||T^lam f(., x_n)||_{L^2(R^{n-1})} / ||f||_2; x' ranges over the support of a^lam."""
    fn = f.l2_norm()
    out = []
    L = lam * amp.x_radius
    k = int(np.floor(L / spacing))
    ax = np.arange(-k, k + 1) * spacing
    for xn in xn_list:
        if f.is_zero or fn == 0:
            out.append((xn, 0.0))
            continue
        vals, _ = evaluate_grid(phase, amp, lam, f, [ax] * (phase.n - 1), [xn])
        I = float(np.sum(np.abs(vals) ** 2) * spacing ** (phase.n - 1))
        out.append((float(xn), float(np.sqrt(I) / fn)))
    return out


# non-stationary phase ------------------------------------------------------------------------

@dataclass
class ScalarOscillatory:
    """int e^{i lam p(z)} a(z) dz with a a bump supported on [lo, hi]."""
    poly: Sequence  # coefficients of p, lowest degree first
    lo: float = -1.0
    hi: float = 1.0
    amplitude: str = "bump"  # or "zero"
    gradient_floor: float = 1.0
    M: Optional[float] = None


def _amp_derivs(spec: ScalarOscillatory, N):
    s = sp.Symbol("s")
    c = sp.Rational(1, 1) * (spec.lo + spec.hi) / 2
    half = (spec.hi - spec.lo) / 2
    u = (s - c) / half
    expr = sp.exp(1 - 1 / (1 - u ** 2))
    fns = [sp.lambdify(s, sp.diff(expr, s, k), "mpmath") for k in range(N + 1)]
    return expr, s, fns


@dataclass
class DecayReport:
    lams: list
    magnitudes: list
    slope: float
    M: float
    N: int
    C: float


def nonstationary_decay(spec: ScalarOscillatory, lam_list, N: int, dps: int = 40) -> DecayReport:
    import mpmath as mp

    lam_list = [float(l) for l in lam_list]
    if len(lam_list) < 2:
        raise FieldError("need at least two lambda values")
    p = np.polynomial.Polynomial(spec.poly)
    dp = [p.deriv(k) for k in range(N + 1)]
    zs = np.linspace(spec.lo, spec.hi, 1001)[1:-1]
    d1 = np.abs(dp[1](zs))
    for lam in lam_list:
        if float(np.min(lam * d1)) < spec.gradient_floor * lam * (1 - 1e-12):
            raise PreconditionError(f"bound i) fails: min |phi'| = {np.min(lam * d1):.4g} < "
                                    f"{spec.gradient_floor} * lambda at lambda={lam}")
    # the lemma is applied to phi = lam*p; derivative ratios do not depend on lam
    ratio_M = max([float(np.max(np.abs(dp[k](zs)) / d1)) for k in range(2, N + 1)] + [0.0])
    if spec.amplitude == "zero":
        amp_M = 0.0
    else:
        _, _, afns = _amp_derivs(spec, N)
        amp_M = 0.0
        for k in range(1, N + 1):
            v = max(abs(float(afns[k](mp.mpf(float(z))))) for z in zs[::5])
            amp_M = max(amp_M, v ** (1.0 / k))
    M_need = max(1.0, ratio_M, amp_M)
    M = spec.M if spec.M is not None else M_need
    if ratio_M > M * (1 + 1e-12):
        raise PreconditionError(f"bound ii) fails: derivative ratio {ratio_M:.4g} exceeds M={M}")
    if amp_M > M * (1 + 1e-12):
        raise PreconditionError(f"bound iii) fails: amplitude derivative scale {amp_M:.4g} exceeds M={M}")
    mags = []
    with mp.workdps(dps):
        if spec.amplitude == "zero":
            mags = [0.0] * len(lam_list)
        else:
            _, _, afns = _amp_derivs(spec, 0)
            a0 = afns[0]
            coeffs = [mp.mpf(float(c)) for c in spec.poly]
            lo, hi = mp.mpf(spec.lo), mp.mpf(spec.hi)
            for lam in lam_list:
                L = mp.mpf(lam)

                def integrand(z):
                    ph = mp.mpf(0)
                    for c in reversed(coeffs):
                        ph = ph * z + c
                    return mp.expj(L * ph) * a0(z)

                nsub = int(lam * float(np.max(d1)) * (spec.hi - spec.lo) / np.pi) + 8
                pts = [lo + (hi - lo) * mp.mpf(i) / nsub for i in range(nsub + 1)]
                val = mp.quad(integrand, pts)
                mags.append(float(abs(val)))
    mags_a = np.array(mags, float)
    if np.all(mags_a == 0):
        slope = float("-inf")
        C = 0.0
    else:
        ll = np.log(np.array(lam_list))
        slope = float(np.polyfit(ll, np.log(np.maximum(mags_a, 1e-300)), 1)[0])
        C = float(np.max(mags_a * np.array(lam_list) ** N / M ** N))
    return DecayReport(lam_list, mags, slope, float(M), N, C)
