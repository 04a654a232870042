"""Algebraic varieties at desk scale: complete intersections, neighbourhoods,
polynomial partitioning, Taylor approximation of curves, tangency tests."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from numpy.polynomial import legendre as npleg
from scipy import ndimage
from scipy.optimize import least_squares

from .phase import parse_poly, xsyms

C_TANG_SMALL = 1.0   # angle tolerance factor
C_TANG_LARGE = 2.0   # interaction distance factor
C_BAR_ZONE = 2.0     # transverse-zone curvature precondition factor


class VarietyError(ValueError):
    pass


class NotTCIError(VarietyError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class PreconditionError(VarietyError):
    pass


# varieties -------------------------------------------------------------------------

@dataclass
class Variety:
    polys: list            # sympy expressions in x1..xn (parameters substituted)
    n: int
    source: list = field(default_factory=list)   # original strings
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.n - len(self.polys)

    @property
    def degree(self) -> int:
        return max((int(sp.Poly(p, *xsyms(self.n)).total_degree()) for p in self.polys), default=0)

    @property
    def degrees(self) -> list:
        return [int(sp.Poly(p, *xsyms(self.n)).total_degree()) for p in self.polys]

    @property
    def is_whole_space(self) -> bool:
        return not self.polys

    def __post_init__(self):
        x = xsyms(self.n)
        self._P = sp.lambdify(x, self.polys, "numpy") if self.polys else None
        jac = [[sp.diff(p, xi) for xi in x] for p in self.polys]
        self._J = sp.lambdify(x, jac, "numpy") if self.polys else None

    def values(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if not self.polys:
            return np.zeros((len(pts), 0))
        out = self._P(*pts.T)
        return np.column_stack([np.broadcast_to(np.asarray(o, float), (len(pts),)) for o in out])

    def jacobian(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        k = len(self.polys)
        J = np.empty((len(pts), k, self.n))
        rows = self._J(*pts.T)
        for i in range(k):
            for j in range(self.n):
                J[:, i, j] = np.broadcast_to(np.asarray(rows[i][j], float), (len(pts),))
        return J

    def to_json(self) -> dict:
        return {"n": self.n, "polys": self.source or [str(p) for p in self.polys],
                "params": {k: float(v) for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "Variety":
        return make_tci(d["polys"], d["n"], params=d.get("params"), check=False)

    # projections
    def project(self, pts, maxit: int = 50, tol: float = 1e-12):
        """Gauss-Newton (minimum-norm steps) onto Z; returns (z, converged)."""
        z = np.array(np.atleast_2d(pts), float)
        if not self.polys:
            return z, np.ones(len(z), bool)
        ok = np.zeros(len(z), bool)
        for _ in range(maxit):
            r = self.values(z)
            J = self.jacobian(z)
            scale = np.maximum(np.linalg.norm(J, axis=(1, 2)), 1e-300)
            ok = np.linalg.norm(r, axis=1) <= tol * scale * np.maximum(1, np.linalg.norm(z, axis=1))
            if np.all(ok):
                break
            JJ = J @ np.swapaxes(J, 1, 2)
            try:
                step = (np.swapaxes(J, 1, 2) @ np.linalg.solve(JJ, r[..., None]))[..., 0]
            except np.linalg.LinAlgError:
                step = np.einsum("pij,pj->pi", np.linalg.pinv(J), r)
            step[ok] = 0
            z = z - step
        return z, ok

    def foot(self, pts, steps: int = 50):
        """Approximate nearest point on Z by alternating tangent moves and projection."""
        x = np.atleast_2d(np.asarray(pts, float))
        z, ok = self.project(x, maxit=steps)
        if not self.polys:
            return z, ok
        for _ in range(steps // 5):
            N = self.jacobian(z)
            d = x - z
            # remove the normal component of x - z, then re-project
            coef = np.linalg.solve(N @ np.swapaxes(N, 1, 2), (N @ d[..., None]))
            tang = d - (np.swapaxes(N, 1, 2) @ coef)[..., 0]
            if np.max(np.linalg.norm(tang, axis=1)) < 1e-12 * max(1.0, np.max(np.linalg.norm(x, axis=1))):
                break
            z, ok = self.project(z + tang, maxit=10)
        return z, ok

    def distance(self, pts) -> np.ndarray:
        x = np.atleast_2d(np.asarray(pts, float))
        if not self.polys:
            return np.zeros(len(x))
        z, ok = self.foot(x)
        d = np.linalg.norm(x - z, axis=1)
        d[~ok] = np.inf
        return d

    def normal_angle(self, vecs, z) -> np.ndarray:
        """Angle between each vector and the tangent space T_zZ."""
        v = np.atleast_2d(np.asarray(vecs, float))
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        if not self.polys:
            return np.zeros(len(v))
        N = self.jacobian(z)
        Q = np.linalg.qr(np.swapaxes(N, 1, 2))[0]   # orthonormal basis of the normal space
        comp = np.linalg.norm(np.einsum("pij,pi->pj", Q, v), axis=1)
        return np.arcsin(np.clip(comp, 0, 1))


def make_tci(polys: Sequence, n: int, params: Optional[dict] = None, check: bool = True,
             samples: int = 200, box: float = 1.0, seed: int = 0) -> Variety:
    """Build Z(P_1..P_k) and certify the rank condition on sampled zeros."""
    params = dict(params or {})
    loc = {str(s): s for s in xsyms(n)}
    psyms = {k: sp.Symbol(k) for k in params}
    loc.update(psyms)
    exprs = []
    for p in polys:
        e = parse_poly(p, loc) if isinstance(p, str) else sp.sympify(p)
        e = e.subs({psyms[k]: sp.nsimplify(v, rational=True) for k, v in params.items()})
        if sp.simplify(e) == 0:
            raise VarietyError("zero polynomial; use an empty list for the whole space")
        exprs.append(sp.expand(e))
    if len(exprs) > n:
        raise VarietyError("more polynomials than ambient dimensions")
    Z = Variety(exprs, n, [str(p) for p in polys], params)
    if check and exprs:
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-box, box, (samples, n))
        z, ok = Z.project(x0)
        z = z[ok]
        if len(z) == 0:
            raise VarietyError("no zeros found in the sampling box")
        s = np.linalg.svd(Z.jacobian(z), compute_uv=False)
        bad = s[:, -1] < 1e-6 * s[:, 0]
        if np.any(bad):
            w = z[np.argmax(bad)]
            raise NotTCIError(f"gradients are dependent at {w}", w)
    return Z


# neighbourhoods ------------------------------------------------------------------------

def _ball_uniform(rng, n, R, N):
    g = rng.normal(size=(N, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * R * rng.uniform(size=(N, 1)) ** (1.0 / n)


def _greedy_net(pts, sep):
    """Greedy sep-net using a grid hash; every input point is within sep of a centre."""
    centres = []
    cells: dict = {}
    inv = 1.0 / sep
    for p in pts:
        key = tuple(np.floor(p * inv).astype(int))
        hit = False
        for off in itertools.product((-1, 0, 1), repeat=len(key)):
            for c in cells.get(tuple(k + o for k, o in zip(key, off)), ()):
                if np.sum((p - c) ** 2) <= sep * sep:
                    hit = True
                    break
            if hit:
                break
        if not hit:
            centres.append(p)
            cells.setdefault(key, []).append(p)
    return np.array(centres)


@dataclass
class CoverReport:
    count: int
    count_constant: float
    volume: float
    volume_stderr: float
    volume_constant: float
    empty: bool
    rho: float
    R: float


def neighborhood_cover(Z: Variety, rho: float, R: float, seed: int = 0, samples: Optional[int] = None,
                       volume_samples: int = 200_000) -> CoverReport:
    if not (0 < rho <= R):
        raise VarietyError("need 0 < rho <= R")
    rng = np.random.default_rng(seed)
    n, m = Z.n, Z.m
    volB = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * R ** n
    # Monte-Carlo volume of N_rho(Z) inside B_R
    x = _ball_uniform(rng, n, R, volume_samples)
    hit = Z.distance(x) <= rho
    frac = float(np.mean(hit))
    vol = frac * volB
    err = math.sqrt(max(frac * (1 - frac), 0.0) / volume_samples) * volB
    vconst = vol / (rho ** (n - m) * R ** m)
    if Z.is_whole_space:
        zs = _ball_uniform(rng, n, R, samples or 20000)
    else:
        N = samples or int(min(200_000, 40 * (R / rho) ** m + 1000))
        zs, ok = Z.project(_ball_uniform(rng, n, R, N))
        zs = zs[ok & (np.linalg.norm(zs, axis=1) <= R)]
    if len(zs) == 0:
        return CoverReport(0, 0.0, vol, err, vconst, True, rho, R)
    count = 1 if rho >= R else len(_greedy_net(zs, rho))
    return CoverReport(count, count / (R / rho) ** m, vol, err, vconst, False, rho, R)


# polynomial partitioning ------------------------------------------------------------------

def _exponents(n, d):
    return [e for e in itertools.product(range(d + 1), repeat=n) if 0 < sum(e) <= d]


def _legendre_features(U, d, exps, grad=False):
    V = [npleg.legvander(U[:, i], d) for i in range(U.shape[1])]
    F = np.empty((len(U), len(exps)))
    for j, e in enumerate(exps):
        c = np.ones(len(U))
        for i, k in enumerate(e):
            if k:
                c = c * V[i][:, k]
        F[:, j] = c
    if not grad:
        return F
    # derivative table: column k holds P_k' in the Legendre basis
    Dm = np.zeros((d + 1, d + 1))
    for k in range(1, d + 1):
        e = np.zeros(d + 1)
        e[k] = 1
        dk = npleg.legder(e)
        Dm[: len(dk), k] = dk
    dV = [v @ Dm for v in V]
    n = U.shape[1]
    dF = np.empty((n, len(U), len(exps)))
    for a in range(n):
        for j, e in enumerate(exps):
            c = np.ones(len(U))
            for i, k in enumerate(e):
                if i == a:
                    c = c * dV[i][:, k]
                elif k:
                    c = c * V[i][:, k]
            dF[a, :, j] = c
    return F, dF


@dataclass
class Factor:
    """Q(u) = c0 + sum_j c_j L_e(u)/s_j in box-normalised coordinates u in [-1,1]^n."""
    degree: int
    exps: list
    coef: np.ndarray
    scale: np.ndarray

    def __call__(self, U, chunk=200_000) -> np.ndarray:
        U = np.atleast_2d(U)
        out = np.empty(len(U))
        for a in range(0, len(U), chunk):
            F = _legendre_features(U[a:a + chunk], self.degree, self.exps) / self.scale
            out[a:a + chunk] = self.coef[0] + F @ self.coef[1:]
        return out

    def value_grad(self, U, chunk=100_000):
        U = np.atleast_2d(U)
        val = np.empty(len(U))
        g = np.empty_like(U, dtype=float)
        for a in range(0, len(U), chunk):
            F, dF = _legendre_features(U[a:a + chunk], self.degree, self.exps, grad=True)
            val[a:a + chunk] = self.coef[0] + (F / self.scale) @ self.coef[1:]
            g[a:a + chunk] = ((dF / self.scale) @ self.coef[1:]).T
        return val, g

    def grad(self, U) -> np.ndarray:
        return self.value_grad(U)[1]

    def wall_distance(self, U) -> np.ndarray:
        v, g = self.value_grad(U)
        return np.abs(v) / np.maximum(np.linalg.norm(g, axis=1), 1e-300)

    def expr(self, xs, lo, hi):
        u = [(2 * x - (l + h)) / (h - l) for x, l, h in zip(xs, lo, hi)]
        e = sp.Float(self.coef[0])
        for c, s, ex in zip(self.coef[1:], self.scale, self.exps):
            term = sp.Float(c / s)
            for k, ui in zip(ex, u):
                if k:
                    term *= sp.legendre(k, ui)
            e += term
        return sp.expand(e)


@dataclass
class Cell:
    sign: tuple
    weight: float
    count: int
    sample: np.ndarray
    components: int


@dataclass
class Partition:
    factors: list
    lo: np.ndarray
    hi: np.ndarray
    cells: list
    wall_weight: float
    total_weight: float
    wall: float                 # wall half-width in normalised units
    grid_labels: np.ndarray     # connected-component labels on the sampling grid (0 = wall)
    grid_axes: list
    grid_signs: np.ndarray
    steps: int
    imbalance: list

    @property
    def degree(self) -> int:
        return sum(f.degree for f in self.factors)

    @property
    def n(self) -> int:
        return len(self.lo)

    def normalise(self, X):
        return (2 * np.atleast_2d(X) - (self.lo + self.hi)) / (self.hi - self.lo)

    def signs(self, X) -> np.ndarray:
        U = self.normalise(X)
        code = np.zeros(len(U), np.int64)
        for f in self.factors:
            code = code * 2 + (f(U) > 0)
        return code

    def in_wall(self, X, width: Optional[float] = None) -> np.ndarray:
        U = self.normalise(X)
        w = self.wall if width is None else width
        out = np.zeros(len(U), bool)
        for f in self.factors:
            out |= f.wall_distance(U) < w
        return out

    def sign_and_wall(self, X, width: Optional[float] = None):
        U = self.normalise(X)
        w = self.wall if width is None else width
        code = np.zeros(len(U), np.int64)
        wall = np.zeros(len(U), bool)
        for f in self.factors:
            v, g = f.value_grad(U)
            code = code * 2 + (v > 0)
            wall |= np.abs(v) / np.maximum(np.linalg.norm(g, axis=1), 1e-300) < w
        return code, wall

    def component_labels(self, X, width: Optional[float] = None) -> np.ndarray:
        """Component label of each point (0 inside the wall or outside the box)."""
        X = np.atleast_2d(X)
        U = self.normalise(X)
        inside = np.all(np.abs(U) <= 1, axis=1)
        lab = np.zeros(len(X), np.int64)
        if not np.any(inside):
            return lab
        X, U = X[inside], U[inside]
        step = self.grid_axes[0][1] - self.grid_axes[0][0]
        idx = np.clip(np.rint((U + 1) / step).astype(int), 0, len(self.grid_axes[0]) - 1)
        sub = self.grid_labels[tuple(idx.T)]
        code, wall = self.sign_and_wall(X, width)
        sub = self._fix_labels(sub, idx, code, wall)
        lab[inside] = sub
        return lab

    def _fix_labels(self, lab, idx, code, wall):
        # nearest grid node can sit in the wall band; look at neighbours with the right sign
        miss = np.nonzero((lab == 0) & ~wall)[0]
        G = len(self.grid_axes[0])
        for i in miss:
            best = 0
            for off in itertools.product((-2, -1, 0, 1, 2), repeat=self.n):
                j = tuple(np.clip(idx[i] + np.array(off), 0, G - 1))
                if self.grid_labels[j] and self.grid_signs[j] == code[i]:
                    best = self.grid_labels[j]
                    break
            lab[i] = best
        lab[wall] = 0
        return lab

    def weight_ratio(self) -> float:
        w = [c.weight for c in self.cells if c.weight > 0]
        return max(w) / min(w)

    def polynomial(self):
        xs = xsyms(self.n)
        return sp.Mul(*[f.expr(xs, self.lo, self.hi) for f in self.factors])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sign"] + [f"x{i + 1}" for i in range(self.n)] + ["weight", "count", "components"])
            for c in self.cells:
                w.writerow([c.sign] + [f"{v:.17g}" for v in c.sample] + [f"{c.weight:.17g}", c.count, c.components])
            w.writerow(["wall"] + [""] * self.n + [f"{self.wall_weight:.17g}", "", ""])


def _bisecting_factor(U, wts, labels, K, rng, tries=12):
    n = U.shape[1]
    d = 1
    while math.comb(d + n, n) - 1 < K:
        d += 1
    exps = _exponents(n, d)
    F = _legendre_features(U, d, exps)
    scale = np.sqrt(np.average(F ** 2, axis=0, weights=wts)) + 1e-300
    A = np.column_stack([np.ones(len(U)), F / scale])
    groups = [np.nonzero(labels == k)[0] for k in range(K)]
    groups = [g for g in groups if len(g)]
    gw = [wts[g] / wts[g].sum() for g in groups]

    def imbalance(q):
        return max(abs(float(np.sum(w[q[g] > 0])) - 0.5) for g, w in zip(groups, gw))

    best = None
    for _ in range(tries):
        c0 = rng.normal(size=A.shape[1])
        c0 /= np.linalg.norm(c0)

        def res(c):
            q = A @ c
            out = []
            for g, w in zip(groups, gw):
                qg = q[g]
                tau = 0.05 * np.std(qg) + 1e-12
                out.append(float(np.sum(w * np.tanh(qg / tau))))
            out.append(float(np.linalg.norm(c)) - 1.0)
            return np.array(out)

        def jac(c):
            # tau is treated as frozen; good enough for the trust-region steps
            q = A @ c
            rows = []
            for g, w in zip(groups, gw):
                qg = q[g]
                tau = 0.05 * np.std(qg) + 1e-12
                rows.append((w / tau / np.cosh(qg / tau) ** 2) @ A[g])
            rows.append(c / max(np.linalg.norm(c), 1e-300))
            return np.array(rows)

        c = least_squares(res, c0, jac=jac, method="trf").x
        if K == 1:
            # a single part: move the level to the weighted median exactly
            q = A @ c
            o = np.argsort(q)
            cw = np.cumsum(wts[o])
            j = int(np.searchsorted(cw, cw[-1] / 2))
            j = min(j, len(o) - 2)
            c[0] -= 0.5 * (q[o[j]] + q[o[j + 1]])
        q = A @ c
        score = imbalance(q)
        if best is None or score < best[0]:
            best = (score, c)
        if all(abs(float(np.sum(w[q[g] > 0])) - 0.5) <= len(g) ** -0.5 for g, w in zip(groups, gw)):
            break
    return Factor(d, exps, best[1], scale), best[0]


def partition(points, D: int, weights=None, box=None, wall: Optional[float] = None,
              grid: Optional[int] = None, seed: int = 0) -> Partition:
    """Polynomial partition by iterated polynomial ham-sandwich bisection.

    ceil(n log2 D) bisection steps (at least one); step j uses one factor of the
    smallest degree whose monomial space can bisect all 2^j current parts.
    Cells are the nonempty sign classes off the wall; each records how many
    connected pieces it has on the sampling grid.
    """
    X = np.atleast_2d(np.asarray(points, float))
    N, n = X.shape
    if n not in (1, 2, 3):
        raise VarietyError("partition supports n <= 3 (grid flood fill)")
    if D < 1:
        raise VarietyError("D must be at least 1")
    w = np.ones(N) if weights is None else np.asarray(weights, float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise VarietyError("weights must be finite and nonnegative")
    steps = max(1, math.ceil(n * math.log2(D))) if D > 1 else 1
    if 2 ** steps > np.count_nonzero(w):
        raise VarietyError(f"D={D} gives {2 ** steps} cells for {np.count_nonzero(w)} weighted points")
    if box is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        pad = 1e-9 + 1e-6 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    rng = np.random.default_rng(seed)
    U = (2 * X - (lo + hi)) / (hi - lo)
    labels = np.zeros(N, np.int64)
    factors, imb = [], []
    for s in range(steps):
        f, sc = _bisecting_factor(U, w, labels, 2 ** s, rng)
        factors.append(f)
        imb.append(sc)
        labels = labels * 2 + (f(U) > 0)
    # grid labelling
    if grid is None:
        grid = {1: 4001, 2: 1001, 3: 161}[n]
    step = 2.0 / (grid - 1)
    wall = 4 * step if wall is None else wall
    if step > wall / 4 * (1 + 1e-9):
        raise VarietyError("sampling grid coarser than wall/4")
    axes = [np.linspace(-1, 1, grid)] * n
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    gsign = np.zeros(len(G), np.int64)
    gwall = np.zeros(len(G), bool)
    for f in factors:
        v = f(G)
        gsign = gsign * 2 + (v > 0)
        gr = np.stack(np.gradient(v.reshape((grid,) * n), step), -1).reshape(-1, n) if n > 1 \
            else np.gradient(v, step)[:, None]
        gwall |= np.abs(v) / np.maximum(np.linalg.norm(gr, axis=1), 1e-300) < wall
    gsign = gsign.reshape((grid,) * n)
    gwall = gwall.reshape((grid,) * n)
    glab = np.zeros((grid,) * n, np.int64)
    nl = 0
    for code in np.unique(gsign[~gwall]):
        mask = (gsign == code) & ~gwall
        lab, k = ndimage.label(mask)
        glab[mask] = lab[mask] + nl
        nl += k
    part = Partition(factors, lo, hi, [], 0.0, float(w.sum()), wall, glab, axes, gsign, steps, imb)
    code = labels
    pw = part.in_wall(X)
    part.wall_weight = float(w[pw].sum())
    comp = part.component_labels(X)
    for c in np.unique(code[~pw]):
        sel = (code == c) & ~pw
        ws = float(w[sel].sum())
        ncomp = len(np.unique(glab[gsign == c])) - (1 if np.any((gsign == c) & (glab == 0)) else 0)
        ncomp = max(int(len(np.unique(comp[sel & (comp > 0)]))), 1) if ncomp <= 0 else ncomp
        sign = tuple(int(b) for b in np.binary_repr(int(c), width=steps))
        part.cells.append(Cell(sign, ws, int(sel.sum()), X[np.argmax(sel)], ncomp))
    return part


def _curve_samples(curve, spacing, t_range=None):
    if isinstance(curve, PolyCurve):
        a, b = curve.interval
        fn = curve
    else:
        fn = curve
        a, b = t_range
    t = np.linspace(a, b, 257)
    pts = fn(t)
    L = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    m = max(257, int(np.ceil(L / spacing)) * 2 + 1)
    return fn(np.linspace(a, b, m))


def tube_cell_incidence(curve, part: Partition, shrink: Optional[float] = None, t_range=None) -> int:
    """Number of distinct shrunken cells (off-wall connected components) met by the curve."""
    return incidence_counts([curve], part, shrink, t_range)[0]


def incidence_counts(curves, part: Partition, shrink: Optional[float] = None, t_range=None) -> list:
    """tube_cell_incidence for many curves with one batched polynomial evaluation."""
    width = part.wall if shrink is None else shrink
    spacing = 0.25 * width * float(np.min(part.hi - part.lo)) / 2
    chunks, owner = [], []
    for i, c in enumerate(curves):
        p = _curve_samples(c, spacing, t_range)
        U = part.normalise(p)
        p = p[np.all(np.abs(U) <= 1, axis=1)]
        chunks.append(p)
        owner.append(np.full(len(p), i))
    pts = np.vstack(chunks) if chunks else np.zeros((0, part.n))
    own = np.concatenate(owner) if owner else np.zeros(0, int)
    lab = part.component_labels(pts, width) if len(pts) else np.zeros(0, int)
    out = []
    for i in range(len(curves)):
        li = lab[own == i]
        out.append(int(len(np.unique(li[li > 0]))))
    return out


# curves ------------------------------------------------------------------------------------

@dataclass
class PolyCurve:
    coef: np.ndarray          # (N+1, n): Gamma(t) = sum_k coef[k] t^k
    interval: tuple
    error: float              # measured sup |Gamma_source - poly| on the interval
    bound: float              # declared bound
    error_constant: float     # max |err(t)| / (lam^{-1/2} |t|)
    angle: float              # max tangent angle, radians
    angle_constant: float     # angle / lam^{-1/2}
    second_derivative: float  # sup |poly''| on the interval

    @property
    def degree(self) -> int:
        return self.coef.shape[0] - 1

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        return np.stack([np.polynomial.polynomial.polyval(t, self.coef[:, i]) for i in range(self.coef.shape[1])], -1)

    def derivative(self, t, order: int = 1) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        c = np.polynomial.polynomial.polyder(self.coef, order, axis=0) if self.degree >= order \
            else np.zeros((1, self.coef.shape[1]))
        return np.stack([np.polynomial.polynomial.polyval(t, c[:, i]) for i in range(c.shape[1])], -1)


def model_core_expr(A, w, v, lam):
    """Gamma^lam(t) = (v - lam A(t/lam) w, t) as sympy expressions in t, for a model matrix A(t)."""
    t = sp.Symbol("t")
    Am = sp.Matrix(A).subs(t, t / sp.nsimplify(lam))
    wv = sp.Matrix([sp.nsimplify(float(a), rational=True) for a in w])
    vv = sp.Matrix([sp.nsimplify(float(a), rational=True) for a in v])
    g = vv - sp.nsimplify(lam) * Am * wv
    return [sp.expand(e) for e in g] + [t]


def taylor_curve(core, eps: float, lam: float, n_check: int = 1000, C: float = 10.0) -> PolyCurve:
    """Degree ceil(1/(2 eps)) Taylor polynomial at 0 of a core curve.

    ``core`` is a list of sympy expressions in t, or a callable ``k -> array`` of
    k-th derivatives at 0 paired with an evaluator via ``(derivs, evaluate)``.
    """
    if not (0 < eps < 1):
        raise VarietyError("eps must lie in (0, 1)")
    N = math.ceil(1 / (2 * eps) - 1e-12)
    t = sp.Symbol("t")
    if isinstance(core, (list, tuple)) and core and isinstance(core[0], sp.Basic):
        exprs = [sp.sympify(e) for e in core]
        coef = np.array([[float(sp.diff(e, t, k).subs(t, 0)) / math.factorial(k) for e in exprs]
                         for k in range(N + 1)])
        f0 = sp.lambdify(t, exprs, "numpy")
        f1 = sp.lambdify(t, [sp.diff(e, t) for e in exprs], "numpy")

        def ev(tt, f=f0):
            return np.stack([np.broadcast_to(np.asarray(c, float), tt.shape) for c in f(tt)], -1)

        evaluate, devaluate = ev, (lambda tt: ev(tt, f1))
    else:
        derivs, evaluate, devaluate = core
        ds = [np.asarray(derivs(k), float) for k in range(N + 1)]
        if any(d is None for d in ds):
            raise VarietyError("not enough derivatives at 0")
        coef = np.array([d / math.factorial(k) for k, d in enumerate(ds)])
    T = lam ** (1 - eps)
    ts = np.linspace(-T, T, n_check)
    pc = PolyCurve(coef, (-T, T), 0.0, C * lam ** -0.5 * T, 0.0, 0.0, 0.0, 0.0)
    err = np.linalg.norm(evaluate(ts) - pc(ts), axis=1)
    pc.error = float(err.max())
    nz = np.abs(ts) > 0
    pc.error_constant = float(np.max(err[nz] / (lam ** -0.5 * np.abs(ts[nz])))) if np.any(nz) else 0.0
    ta = np.linspace(-T, T, 100)
    g1, p1 = devaluate(ta), pc.derivative(ta)
    nn = np.linalg.norm(g1, axis=1) * np.linalg.norm(p1, axis=1)
    cosang = np.where(nn > 0, np.sum(g1 * p1, axis=1) / np.where(nn > 0, nn, 1.0), 1.0)
    pc.angle = float(np.max(np.arccos(np.clip(cosang, -1, 1))))
    pc.angle_constant = pc.angle / lam ** -0.5
    pc.second_derivative = float(np.max(np.linalg.norm(pc.derivative(ts, 2), axis=1)))
    return pc


def _max_coverage_cover(pts, radius):
    """Greedy set cover of pts by radius-balls centred at sample points (max new coverage first)."""
    if len(pts) == 0:
        return np.zeros((0, pts.shape[1] if pts.ndim == 2 else 0))
    D = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1) <= radius
    left = np.ones(len(pts), bool)
    centres = []
    while left.any():
        gain = D[:, left].sum(axis=1)
        j = int(np.argmax(gain))
        centres.append(pts[j])
        left &= ~D[j]
    return np.array(centres)


@dataclass
class ZoneReport:
    balls: np.ndarray
    radius: float
    count: int
    constant: float
    samples: int


def transverse_zone(Z: Variety, curve: PolyCurve, alpha: float, r: float, lam: float,
                    seed: int = 0, per_point: int = 24, max_samples: int = 3000) -> ZoneReport:
    """Cover of {z in Z cap B(0,lam): |z - Gamma(t)| < r, angle(Gamma'(t), T_zZ) > alpha}."""
    if not (0 < r < lam):
        raise VarietyError("need 0 < r < lambda")
    kappa = curve.second_derivative
    if alpha < C_BAR_ZONE * kappa * r:
        raise PreconditionError(f"alpha={alpha:.3g} < {C_BAR_ZONE} * sup|Gamma''| * r = {C_BAR_ZONE * kappa * r:.3g}")
    rng = np.random.default_rng(seed)
    a, b = curve.interval
    pts = _curve_samples(curve, r / 4)
    tt = np.linspace(a, b, len(pts))
    tang = curve.derivative(tt)
    keep = np.linalg.norm(pts, axis=1) <= lam
    pts, tang = pts[keep], tang[keep]
    n = Z.n
    zs, zt = [], []
    if len(pts) and not Z.is_whole_space:
        # Z points within r of the curve: project jittered curve points
        for _ in range(per_point):
            off = rng.normal(size=pts.shape)
            off *= (r * rng.uniform(size=(len(pts), 1)) ** (1 / n)) / np.linalg.norm(off, axis=1, keepdims=True)
            z, ok = Z.project(pts + off, maxit=30)
            ok &= np.linalg.norm(z - pts, axis=1) < r
            ok &= np.linalg.norm(z, axis=1) <= lam
            zs.append(z[ok])
            zt.append(tang[ok])
        z = np.vstack(zs)
        tv = np.vstack(zt)
        ang = Z.normal_angle(tv, z)
        z = z[ang > alpha]
    else:
        z = np.zeros((0, n))
    if len(z) > max_samples:
        z = z[rng.choice(len(z), max_samples, replace=False)]
    balls = _max_coverage_cover(z, r / alpha)
    degG = curve.degree
    const = len(balls) / (max(Z.degree, 1) * max(degG, 1)) ** n
    return ZoneReport(balls, r / alpha, len(balls), const, len(z))


@dataclass
class TangencyReport:
    tangent: bool
    contained: bool
    aligned: bool
    witnesses: np.ndarray
    max_distance: float
    max_angle: float
    angle_tol: float
    dist_tol: float


def tangency_classify(tube, Z: Variety, R: float, delta_m: float, c_small: float = C_TANG_SMALL,
                      c_large: float = C_TANG_LARGE, ring: int = 8) -> TangencyReport:
    """R^{-1/2+delta_m}-tangency of a tube to Z (containment plus Gauss-direction alignment)."""
    from .phase import gauss_map
    dist_tol = R ** (0.5 + delta_m)
    angle_tol = c_small * R ** (-0.5 + delta_m)
    core = tube.core_points()
    if Z.is_whole_space or len(core) == 0:
        return TangencyReport(True, True, True, np.zeros((0, tube.phase.n)), 0.0, 0.0, angle_tol, dist_tol)
    n = Z.n
    # tube samples: core plus a ring of boundary points in the x' directions
    pts = [core]
    if n == 2:
        for s in (-1, 1):
            pts.append(core + s * tube.radius * np.array([1.0, 0.0]))
    else:
        for a in np.linspace(0, 2 * np.pi, ring, endpoint=False):
            u = np.zeros(n)
            u[0], u[1] = np.cos(a), np.sin(a)
            pts.append(core + tube.radius * u)
    X = np.vstack(pts)
    d = Z.distance(X)
    contained = bool(np.all(d <= dist_tol))
    # alignment on pairs (x, z) with |x - z| <= c_large R^{1/2 + delta_m}
    G = np.array([gauss_map(tube.phase, x, tube.center, tube.lam) for x in core])
    reach = c_large * dist_tol
    foot, ok = Z.foot(core)
    cand = [(foot, ok)]
    for s in (0.5, 1.0):
        for k in range(n):
            e = np.zeros(n)
            e[k] = s * reach
            for sg in (-1, 1):
                z, o = Z.project(core + sg * e, maxit=30)
                cand.append((z, o))
    worst = np.zeros(len(core))
    for z, o in cand:
        near = o & (np.linalg.norm(z - core, axis=1) <= reach)
        if np.any(near):
            ang = np.zeros(len(core))
            ang[near] = Z.normal_angle(G[near], z[near])
            worst = np.maximum(worst, ang)
    aligned = bool(np.all(worst <= angle_tol))
    bad = np.zeros(len(X), bool)
    bad[: len(core)] |= worst > angle_tol
    bad |= d > dist_tol
    return TangencyReport(contained and aligned, contained, aligned, X[bad], float(np.max(d)),
                          float(np.max(worst)), angle_tol, dist_tol)


# Bezout check -------------------------------------------------------------------------------

def real_intersections(p1, p2, box: float = 2.0, starts: int = 400, seed: int = 0, tol: float = 1e-10):
    """Numerically located real common zeros of two plane polynomials inside [-box, box]^2."""
    Z = make_tci([p1, p2], 2, check=False)
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-box, box, (starts, 2))
    z = x0.copy()
    for _ in range(60):
        r = Z.values(z)
        J = Z.jacobian(z)
        try:
            z = z - np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            z = z - np.einsum("pij,pj->pi", np.linalg.pinv(J), r)
        z[~np.isfinite(z)] = 1e6
    r = np.linalg.norm(Z.values(z), axis=1)
    good = (r < tol * (1 + np.linalg.norm(z, axis=1) ** 8)) & np.all(np.abs(z) <= box, axis=1)
    z = z[good]
    roots = []
    for p in z:
        if all(np.linalg.norm(p - q) > 1e-6 for q in roots):
            roots.append(p)
    return np.array(roots).reshape(-1, 2)


def random_poly(n: int, degree: int, rng) -> sp.Expr:
    xs = xsyms(n)
    e = 0
    for ex in itertools.product(range(degree + 1), repeat=n):
        if sum(ex) <= degree:
            e += sp.Rational(int(rng.integers(-20, 21)), 10) * sp.Mul(*[x ** k for x, k in zip(xs, ex)])
    return sp.expand(e)


def variety_to_json(Z: Variety, path):
    with open(path, "w") as fh:
        json.dump(Z.to_json(), fh, indent=2)


def variety_from_json(path) -> Variety:
    with open(path) as fh:
        return Variety.from_json(json.load(fh))
