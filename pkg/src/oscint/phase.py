"""Polynomial phase functions phi(x; w) with x in R^n and w in R^(n-1).

Phases are stored as sympy expressions and compiled to vectorised numpy
evaluators on first use.  The scaled phase is phi^lam(x; w) = lam * phi(x/lam; w).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (convert_xor, implicit_multiplication_application,
                                        parse_expr, standard_transformations)

_TRANSFORMS = standard_transformations + (convert_xor, implicit_multiplication_application)
T = sp.Symbol("t")


class PhaseError(ValueError):
    pass


class SingularityError(PhaseError):
    """The mixed Hessian drops rank, so no Gauss direction exists."""


def xsyms(n: int):
    return sp.symbols(f"x1:{n + 1}", real=True)


def wsyms(n: int):
    return sp.symbols(f"w1:{n}", real=True)


def parse_poly(s, local: dict | None = None) -> sp.Expr:
    if isinstance(s, sp.Expr):
        return s
    if isinstance(s, (int, float)):
        return sp.nsimplify(s, rational=True)
    names = {"t": T}
    if local:
        names.update(local)
    return sp.nsimplify(parse_expr(str(s), local_dict=names, transformations=_TRANSFORMS), rational=True)


def _lamb(args, exprs, shape):
    """Lambdify a list of expressions into f(*arrays) -> array of given trailing shape."""
    f = sp.lambdify(args, list(exprs), modules="numpy")

    def g(*vals):
        out = f(*vals)
        b = np.broadcast(*vals) if vals else None
        bshape = b.shape if b is not None else ()
        arr = np.empty(bshape + (len(exprs),))
        for i, o in enumerate(out):
            arr[..., i] = o
        return arr.reshape(bshape + shape)

    return g


@dataclass(frozen=True, eq=False)
class PhaseSpec:
    n: int
    kind: str
    expr: sp.Expr
    data: dict = field(default_factory=dict)
    x_radius: float = 1.0
    omega_radius: float = 1.0

    # symbols ---------------------------------------------------------------
    @property
    def x(self):
        return xsyms(self.n)

    @property
    def w(self):
        return wsyms(self.n)

    # compiled evaluators ---------------------------------------------------
    @cached_property
    def _grad_w(self):
        return [sp.diff(self.expr, wj) for wj in self.w]

    @cached_property
    def _grad_x(self):
        return [sp.diff(self.expr, xi) for xi in self.x]

    @cached_property
    def _fns(self):
        args = list(self.x) + list(self.w)
        n = self.n
        hxw = [sp.diff(gx, wj) for gx in self._grad_x for wj in self.w]
        hww = [sp.diff(gw, wk) for gw in self._grad_w for wk in self.w]
        # third derivatives d_xi d_wj d_wk, for curvature matrices
        t3 = [sp.diff(e, xi) for e in hww for xi in self.x]
        return {
            "phi": _lamb(args, [self.expr], ()),
            "gw": _lamb(args, self._grad_w, (n - 1,)),
            "gx": _lamb(args, self._grad_x, (n,)),
            "hxw": _lamb(args, hxw, (n, n - 1)),
            "hww": _lamb(args, hww, (n - 1, n - 1)),
            "t3": _lamb(args, t3, (n - 1, n - 1, n)),
        }

    def _call(self, name, x, w):
        x = np.asarray(x, float)
        w = np.asarray(w, float)
        if x.shape[-1] != self.n or w.shape[-1] != self.n - 1:
            raise PhaseError(f"expected x in R^{self.n} and w in R^{self.n - 1}")
        return self._fns[name](*np.moveaxis(x, -1, 0), *np.moveaxis(w, -1, 0))

    def phi(self, x, w):
        return self._call("phi", x, w)

    def grad_w(self, x, w):
        return self._call("gw", x, w)

    def grad_x(self, x, w):
        return self._call("gx", x, w)

    def hess_xw(self, x, w):
        """Mixed Hessian, shape (..., n, n-1)."""
        return self._call("hxw", x, w)

    def hess_ww(self, x, w):
        return self._call("hww", x, w)

    def third_xww(self, x, w):
        """d^2/dw^2 of grad_x phi, shape (..., n-1, n-1, n)."""
        return self._call("t3", x, w)

    # scaled versions ---------------------------------------------------------
    def phi_lam(self, x, w, lam):
        return lam * self.phi(np.asarray(x, float) / lam, w)

    def grad_w_lam(self, x, w, lam):
        return lam * self.grad_w(np.asarray(x, float) / lam, w)

    def grad_x_lam(self, x, w, lam):
        return self.grad_x(np.asarray(x, float) / lam, w)

    # polynomial structure in w ----------------------------------------------
    @cached_property
    def w_monomials(self):
        """(exponents (M, n-1), callables for coefficients of x) of phi as a polynomial in w."""
        poly = sp.Poly(sp.expand(self.expr), *self.w)
        exps, fns = [], []
        for mon, coeff in poly.terms():
            exps.append(mon)
            fns.append(sp.lambdify(list(self.x), coeff, modules="numpy"))
        return np.array(exps, dtype=np.int64).reshape(-1, self.n - 1), fns

    def w_coefficients(self, x, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (P, M) of w -> phi^lam(x; w) for each point x (P, n)."""
        x = np.atleast_2d(np.asarray(x, float)) / lam
        exps, fns = self.w_monomials
        out = np.empty((x.shape[0], len(fns)))
        for j, f in enumerate(fns):
            out[:, j] = lam * np.broadcast_to(f(*x.T), (x.shape[0],))
        return exps, out

    @cached_property
    def w_degree(self) -> int:
        return int(sp.Poly(self.expr, *self.w).total_degree())

    @cached_property
    def is_extension(self) -> bool:
        """True when phi = <x', w> + x_n h(w)."""
        xs = self.x
        rest = sp.expand(self.expr - sum(xs[i] * self.w[i] for i in range(self.n - 1)))
        h = sp.diff(rest, xs[-1])
        return sp.expand(rest - xs[-1] * h) == 0 and not (h.free_symbols & set(xs))

    @cached_property
    def h_expr(self):
        if not self.is_extension:
            raise PhaseError("phase is not of extension form")
        xs = self.x
        rest = sp.expand(self.expr - sum(xs[i] * self.w[i] for i in range(self.n - 1)))
        return sp.diff(rest, xs[-1])

    def h_fn(self):
        return sp.lambdify(list(self.w), self.h_expr, modules="numpy")

    def grad_h(self, w):
        gs = [sp.lambdify(list(self.w), sp.diff(self.h_expr, wj), modules="numpy") for wj in self.w]
        w = np.asarray(w, float)
        return np.stack([np.broadcast_to(g(*np.moveaxis(w, -1, 0)), w.shape[:-1]) for g in gs], -1)

    # serialisation ------------------------------------------------------------
    def to_json(self) -> dict:
        d = {"n": self.n, "kind": self.kind, "x_radius": self.x_radius, "omega_radius": self.omega_radius}
        if self.kind == "model":
            d["blocks"] = [[[str(e).replace("**", "^") for e in row] for row in b] for b in self.data["blocks"]]
        elif self.kind == "extension":
            d["h"] = str(self.data["h"]).replace("**", "^")
        else:
            d["phi"] = str(self.expr).replace("**", "^")
        return d

    def __repr__(self):
        return f"PhaseSpec(n={self.n}, kind={self.kind!r}, phi={self.expr})"


# construction -------------------------------------------------------------------

def phase_from_expr(n: int, expr, kind: str = "general", x_radius=1.0, omega_radius=1.0, data=None) -> PhaseSpec:
    local = {str(s): s for s in list(xsyms(n)) + list(wsyms(n))}
    e = parse_poly(expr, local)
    extra = e.free_symbols - set(xsyms(n)) - set(wsyms(n))
    if extra:
        raise PhaseError(f"unexpected symbols {sorted(map(str, extra))}")
    return PhaseSpec(n, kind, sp.expand(e), dict(data or {}), x_radius, omega_radius)


def build_extension_phase(n: int, h, x_radius=1.0, omega_radius=1.0) -> PhaseSpec:
    """phi = <x', w> + x_n h(w)."""
    x, w = xsyms(n), wsyms(n)
    hx = parse_poly(h, {str(s): s for s in w})
    if hx.free_symbols - set(w):
        raise PhaseError("h may only depend on w1..w_{n-1}")
    e = sum(x[i] * w[i] for i in range(n - 1)) + x[-1] * hx
    return PhaseSpec(n, "extension", sp.expand(e), {"h": hx}, x_radius, omega_radius)


def paraboloid_phase(n: int) -> PhaseSpec:
    w = wsyms(n)
    return build_extension_phase(n, sum(wi ** 2 for wi in w) / 2)


def hyperbolic_phase() -> PhaseSpec:
    w = wsyms(3)
    return build_extension_phase(3, w[0] * w[1])


def build_model_phase(blocks: Sequence, n: int, x_radius=1.0, omega_radius=1.0) -> PhaseSpec:
    """phi = <x', w> + 1/2 <A(x_n) w, w> with A block diagonal in t = x_n."""
    mats = []
    for b in blocks:
        m = sp.Matrix([[parse_poly(e) for e in row] for row in (b if isinstance(b[0], (list, tuple)) else [b])])
        if m.shape[0] != m.shape[1] or m.shape[0] not in (1, 2):
            raise PhaseError(f"blocks must be 1x1 or 2x2, got {m.shape}")
        if (m - m.T).applyfunc(sp.expand) != sp.zeros(*m.shape):
            raise PhaseError(f"block {b} is not symmetric")
        if m.subs(T, 0) != sp.zeros(*m.shape):
            raise PhaseError(f"block {b} does not vanish at t=0")
        if m.free_symbols - {T}:
            raise PhaseError("block entries must be polynomials in t")
        mats.append(m)
    A = sp.diag(*mats) if mats else sp.zeros(0, 0)
    if A.shape != (n - 1, n - 1):
        raise PhaseError(f"blocks give a {A.shape[0]}x{A.shape[0]} matrix, need {n - 1}x{n - 1}")
    x, w = xsyms(n), wsyms(n)
    wv = sp.Matrix(w)
    Ax = A.subs(T, x[-1])
    e = sum(x[i] * w[i] for i in range(n - 1)) + sp.Rational(1, 2) * (wv.T * Ax * wv)[0, 0]
    return PhaseSpec(n, "model", sp.expand(e), {"blocks": [m.tolist() for m in mats], "A": A},
                     x_radius, omega_radius)


def kakeya_blocks(n: int):
    """Blocks [[t, t^2], [t^2, t + t^3]] repeated, plus a (t) block when n is even."""
    b = [["t", "t^2"], ["t^2", "t+t^3"]]
    out = [b] * ((n - 1) // 2)
    if n % 2 == 0:
        out.append([["t"]])
    return out


def bourgain_blocks(n: int):
    b = [["0", "t"], ["t", "t^2"]]
    out = [b] * ((n - 1) // 2)
    if n % 2 == 0:
        out.append([["t"]])
    return out


def model_matrix(phase: PhaseSpec):
    """Callable t -> A(t) (numpy) for model phases."""
    A = phase.data["A"]
    f = sp.lambdify(T, A, modules="numpy")
    return lambda t: np.array(f(t), dtype=float)


def build_reduced_phase(n: int, h, E="0", x_radius=1.0, omega_radius=1.0) -> PhaseSpec:
    """phi = <x', w> + x_n h(w) + E(x; w)."""
    x, w = xsyms(n), wsyms(n)
    loc = {str(s): s for s in list(x) + list(w)}
    hx = parse_poly(h, loc)
    Ex = parse_poly(E, loc)
    e = sum(x[i] * w[i] for i in range(n - 1)) + x[-1] * hx + Ex
    return PhaseSpec(n, "reduced", sp.expand(e), {"h": hx, "E": Ex}, x_radius, omega_radius)


def phase_from_json(d) -> PhaseSpec:
    if isinstance(d, str):
        d = json.loads(d)
    n = int(d["n"])
    kw = {"x_radius": float(d.get("x_radius", 1.0)), "omega_radius": float(d.get("omega_radius", 1.0))}
    kind = d.get("kind", "model")
    if kind == "model":
        return build_model_phase(d["blocks"], n, **kw)
    if kind == "extension":
        return build_extension_phase(n, d["h"], **kw)
    if kind == "reduced":
        return build_reduced_phase(n, d["h"], d.get("E", "0"), **kw)
    if kind in ("paraboloid", "par"):
        p = paraboloid_phase(n)
        return PhaseSpec(n, p.kind, p.expr, p.data, **kw)
    return phase_from_expr(n, d["phi"], kind, **kw)


# Gauss map and curvature ---------------------------------------------------------------

def _wedge(M: np.ndarray) -> np.ndarray:
    """Generalised cross product of the n-1 columns of M (..., n, n-1)."""
    n = M.shape[-2]
    out = np.empty(M.shape[:-2] + (n,))
    for i in range(n):
        sub = np.delete(M, i, axis=-2)
        with np.errstate(all="ignore"):
            out[..., i] = (-1) ** (n + i + 1) * (np.linalg.det(sub) if n > 1 else 1.0)
    return out


def gauss_map(phase: PhaseSpec, x, w, lam: float | None = None, tol: float = 1e-12) -> np.ndarray:
    """Unit vector spanning the kernel of the transposed mixed Hessian.

    With ``lam`` given, returns G^lam(x; w) = G(x/lam; w).
    """
    x = np.asarray(x, float)
    if lam is not None:
        x = x / lam
    M = phase.hess_xw(x, w)
    G0 = _wedge(M)
    nrm = np.linalg.norm(G0, axis=-1)
    scale = np.max(np.abs(M), axis=(-2, -1)) ** (phase.n - 1)
    bad = nrm <= tol * np.maximum(scale, 1.0)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        xb = np.atleast_2d(x)[idx[0]] if x.ndim > 1 else x
        raise SingularityError(f"mixed Hessian is rank deficient at x={xb}, w={w}")
    return G0 / nrm[..., None]


@dataclass
class CurvatureReport:
    eigenvalues: np.ndarray
    classification: str
    gauss: np.ndarray
    matrix: np.ndarray


def curvature_matrix(phase: PhaseSpec, x, w0) -> np.ndarray:
    G = gauss_map(phase, x, w0)
    t3 = phase.third_xww(x, w0)
    return np.einsum("...jki,...i->...jk", t3, G)


def classify_curvature(phase: PhaseSpec, x, w0, tol: float = 1e-8) -> CurvatureReport:
    x = np.asarray(x, float)
    w0 = np.asarray(w0, float)
    G = gauss_map(phase, x, w0)
    H = curvature_matrix(phase, x, w0)
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    thr = tol * max(np.max(np.abs(ev)), 1e-300)
    if np.any(np.abs(ev) <= thr):
        cls = "degenerate"
    elif np.all(ev > 0) or np.all(ev < 0):
        # a sign-definite matrix; flipping G flips every eigenvalue
        cls = "positive-definite"
    else:
        cls = "indefinite"
    return CurvatureReport(ev, cls, G, H)


# transformations ----------------------------------------------------------------------

def parabolic_rescale(phase: PhaseSpec, wbar, rho: float) -> PhaseSpec:
    """Rescale h around wbar: rho^2 (h(wbar + w/rho) - h(wbar) - <dh(wbar), w>/rho).

    For reduced phases the error term gets the same second-order remainder
    treatment in w, evaluated at (x'/rho, x_n).
    """
    if phase.kind not in ("extension", "reduced"):
        raise PhaseError("parabolic rescaling needs an extension or reduced phase")
    n = phase.n
    w = phase.w
    x = phase.x
    rho = sp.nsimplify(rho, rational=True)
    wb = [sp.nsimplify(float(v), rational=True) for v in np.asarray(wbar, float).ravel()]
    if len(wb) != n - 1:
        raise PhaseError("wbar has the wrong dimension")
    h = phase.data["h"]
    shift = {w[j]: wb[j] + w[j] / rho for j in range(n - 1)}
    at0 = {w[j]: wb[j] for j in range(n - 1)}
    lin = sum(sp.diff(h, w[j]).subs(at0) * w[j] for j in range(n - 1))
    ht = sp.expand(rho ** 2 * (h.subs(shift, simultaneous=True) - h.subs(at0) - lin / rho))
    if phase.kind == "extension":
        return build_extension_phase(n, ht, phase.x_radius, phase.omega_radius)
    E = phase.data.get("E", sp.Integer(0))
    xs = {x[i]: x[i] / rho for i in range(n - 1)}
    Ex = E.subs(xs, simultaneous=True)
    lin_e = sum(sp.diff(Ex, w[j]).subs(at0) * w[j] for j in range(n - 1))
    Et = sp.expand(rho ** 2 * (Ex.subs(shift, simultaneous=True) - Ex.subs(at0) - lin_e / rho))
    return build_reduced_phase(n, ht, Et, phase.x_radius, phase.omega_radius)


def translate_phase(phase: PhaseSpec, y, lam: float) -> PhaseSpec:
    """phi~(x; w) = phi(x + y/lam; w) - phi(y/lam; w)."""
    y = np.asarray(y, float).ravel()
    n = phase.n
    if y.shape != (n,):
        raise PhaseError("y has the wrong dimension")
    if np.linalg.norm(y / lam) > phase.x_radius * (1 + 1e-12):
        raise PhaseError(f"y/lam = {y / lam} lies outside X")
    x = phase.x
    yr = [sp.nsimplify(float(v), rational=True) / sp.nsimplify(lam, rational=True) for v in y]
    e = phase.expr.subs({x[i]: x[i] + yr[i] for i in range(n)}, simultaneous=True) \
        - phase.expr.subs({x[i]: yr[i] for i in range(n)}, simultaneous=True)
    data = {"base": phase, "y": y, "lam": lam}
    return PhaseSpec(n, "translated", sp.expand(e), data, phase.x_radius, phase.omega_radius)


# reduced-form diagnostics --------------------------------------------------------

def _newton(F, J, u0, tol=1e-10, maxit=50):
    u = np.array(u0, float)
    for _ in range(maxit):
        r = F(u)
        if np.linalg.norm(r) <= tol:
            return u
        step = np.linalg.solve(J(u), r)
        t = 1.0
        while t > 1e-4 and np.linalg.norm(F(u - t * step)) > np.linalg.norm(r):
            t *= 0.5
        u = u - t * step
    if np.linalg.norm(F(u)) > tol:
        raise PhaseError("Newton iteration did not converge")
    return u


def graph_reparam(phase: PhaseSpec, x, u) -> tuple[np.ndarray, float]:
    """Solve grad_{x'} phi(x; Psi) = u and return (Psi, h_x(u) = d_{x_n} phi(x; Psi))."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    n = phase.n

    def F(w):
        return phase.grad_x(x, w)[: n - 1] - u

    def J(w):
        return phase.hess_xw(x, w)[: n - 1, :]

    psi = _newton(F, J, u)
    return psi, float(phase.grad_x(x, psi)[n - 1])


def hx_derivatives(phase: PhaseSpec, x, step: float = 1e-3) -> tuple[float, np.ndarray, np.ndarray]:
    """h_x(0), gradient and Hessian at u=0 by central differences of graph_reparam."""
    d = phase.n - 1
    f = lambda u: graph_reparam(phase, x, u)[1]
    h0 = f(np.zeros(d))
    g = np.zeros(d)
    H = np.zeros((d, d))
    E = np.eye(d) * step
    for i in range(d):
        g[i] = (f(E[i]) - f(-E[i])) / (2 * step)
        for j in range(d):
            H[i, j] = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])) / (4 * step * step)
    return h0, g, H


def reduction_report(phase: PhaseSpec, samples: int = 200, seed: int = 0) -> dict:
    """Measured sup-norms of the perturbation terms over sampled (x; w)."""
    rng = np.random.default_rng(seed)
    n = phase.n
    x = _ball(rng, samples, n, phase.x_radius)
    w = _ball(rng, samples, n - 1, phase.omega_radius)
    hxw = phase.hess_xw(x, w)
    ref = np.zeros((n, n - 1))
    ref[: n - 1, : n - 1] = np.eye(n - 1)
    out = {"samples": samples, "seed": seed}
    out["sup_mixed_minus_identity"] = float(np.max(np.abs(hxw[:, : n - 1, :] - np.eye(n - 1))))
    if phase.kind in ("reduced", "extension"):
        E = phase.data.get("E", sp.Integer(0))
        args = list(phase.x) + list(phase.w)
        gE = sp.lambdify(args, [sp.diff(E, wj, wk) for wj in phase.w for wk in phase.w], "numpy")
        vals = np.array([np.broadcast_to(v, (samples,)) for v in gE(*x.T, *w.T)], dtype=float)
        out["sup_E_ww"] = float(np.max(np.abs(vals))) if vals.size else 0.0
        h = phase.data["h"]
        hh = sp.lambdify(list(phase.w), [sp.diff(h, wj, wk) for wj in phase.w for wk in phase.w], "numpy")
        H = np.array([np.broadcast_to(v, (samples,)) for v in hh(*w.T)], dtype=float).T.reshape(samples, n - 1, n - 1)
        out["sup_h_ww_minus_identity"] = float(np.max(np.abs(H - np.eye(n - 1))))
    return out


def _ball(rng, m, d, r=1.0):
    v = rng.normal(size=(m, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r * rng.random((m, 1)) ** (1.0 / d)
