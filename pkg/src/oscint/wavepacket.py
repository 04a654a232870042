"""Scale-R wave packets, core curves and tubes.

Caps are the cells of a smooth partition of unity on the grid R^{-1/2} Z^d
(d = n-1).  For each cap the localised function psi_theta f is transformed to
the physical variable z on a periodic window, cut by a partition of unity
eta_v over v in R^{(1+delta)/2} Z^d, transformed back and multiplied by a
cutoff psi~_theta that is 1 near the cap.  Every step is exact on the lattice,
so the packets sum back to f up to rounding.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .field import (AmplitudeSpec, InputFunction, Lattice, _embed, bump, evaluate, plateau,
                    required_spacing)
from .phase import PhaseSpec

CAP_HALF = 0.75       # psi_theta lives on |w_i - c_i| < 0.75 R^{-1/2}
CUT_INNER = 1.0       # psi~_theta = 1 on |w_i - c_i| <= 1.0 R^{-1/2} (0.25 R^{-1/2} margin)
CUT_OUTER = 2.0       # psi~_theta = 0 beyond 2 R^{-1/2}
WINDOW_HALF = 4.0     # periodic transform window half-width, in units of R^{-1/2}


class PacketError(ValueError):
    pass


class RootFindingError(PacketError):
    pass


def pou(t):
    """Partition of unity on Z: sum_m pou(t - m) = 1, supported in |t| < CAP_HALF."""
    t = np.asarray(t, float)
    num = bump(t / CAP_HALF)
    den = np.zeros_like(t)
    for m in (-2, -1, 0, 1, 2):
        den += bump((t - m) / CAP_HALF)
    return np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0)


def cap_grid(spacing: float, dim: int, radius: float = 1.0) -> np.ndarray:
    """Cap centres spacing * Z^dim inside the closed ball of the given radius."""
    m = int(np.floor(radius / spacing + 1e-12))
    g = np.arange(-m, m + 1) * spacing
    pts = np.stack(np.meshgrid(*([g] * dim), indexing="ij"), -1).reshape(-1, dim)
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


@dataclass
class WavePacket:
    theta: tuple
    center: np.ndarray
    v: np.ndarray
    window: Lattice
    values: np.ndarray
    R: float
    delta: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.window.cell))

    def as_input(self) -> InputFunction:
        return InputFunction.on_lattice(self.window, self.values, theta=self.theta)

    def support_ok(self) -> bool:
        pts = self.window.points()
        s = self.R ** -0.5
        far = np.max(np.abs(pts - self.center), axis=-1) > CUT_OUTER * s
        return not np.any(self.values[far])


@dataclass
class Decomposition:
    R: float
    delta: float
    lam: float
    lattice: Lattice
    packets: list
    f_values: np.ndarray
    residual: float = 0.0
    defect: float = 0.0
    f_norm: float = 0.0
    pou_error: float = 0.0
    dropped: int = 0

    @property
    def cap_radius(self) -> float:
        return self.R ** -0.5

    @property
    def v_spacing(self) -> float:
        return self.R ** ((1 + self.delta) / 2)

    def assemble(self, indices=None, signs=None) -> np.ndarray:
        out = np.zeros(self.lattice.shape[::-1], complex)
        idx = range(len(self.packets)) if indices is None else indices
        for j, i in enumerate(idx):
            p = self.packets[i]
            s = 1.0 if signs is None else signs[j]
            out += s * _embed(p.window, p.values, self.lattice)
        return out

    def input_for(self, indices=None, signs=None) -> InputFunction:
        return InputFunction.on_lattice(self.lattice, self.assemble(indices, signs))

    def to_csv(self, path, phase: Optional[PhaseSpec] = None, tlim: Optional[float] = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.lattice.dim
            head = [f"theta{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)] + ["norm"]
            if phase is not None:
                head += ["t_start", "t_end"]
            w.writerow(head)
            for p in self.packets:
                row = list(p.theta) + [f"{x:.17g}" for x in p.v] + [f"{p.norm:.17g}"]
                if phase is not None:
                    lim = tlim if tlim is not None else self.R
                    ts = np.linspace(-lim, lim, 33)
                    cc = core_curve(phase, p.center, p.v, self.lam, ts)
                    row += [f"{cc.t_start:.17g}", f"{cc.t_end:.17g}"]
                w.writerow(row)


def default_spacing(R, lam, phase: Optional[PhaseSpec] = None, f: Optional[InputFunction] = None):
    """Lattice spacing for decompositions: fine enough for T^lam on B(0,R)."""
    h = min(1.0 / lam, 1.0 / (4.0 * R))
    if phase is not None and f is not None:
        probe = np.array(list(itertools.product(*([(-R, 0.0, R)] * phase.n))), float)
        probe = probe[np.linalg.norm(probe, axis=1) <= R * np.sqrt(phase.n)] / np.sqrt(phase.n)
        h = min(h, required_spacing(phase, f, probe, lam))
    return h


def decompose(f: InputFunction, R: float, delta: float, lam: float, h: Optional[float] = None,
              cap_filter: Optional[Callable] = None, v_filter: Optional[Callable] = None,
              tol: float = 1e-13) -> Decomposition:
    """Wave packet decomposition of f at scale R.

    ``cap_filter(center)`` and ``v_filter(center, v)`` restrict which packets are
    built (packets left out show up in the residual); packets with norm below
    tol*||f|| are dropped.
    """
    if not (0 < delta <= 0.25):
        raise PacketError("delta must lie in (0, 1/4]")
    if not (1 < R <= lam):
        raise PacketError("need 1 < R <= lambda")
    d = f.dim
    s = R ** -0.5
    rv = R ** ((1 + delta) / 2)
    if f.kind == "lattice":
        lat = f.lattice
        h = lat.h
        F = f.values
    else:
        h = h or default_spacing(R, lam)
        lat = Lattice.covering(f.center, f.radius + CUT_OUTER * s, h)
        F = f.sample(lat) if not f.is_zero else np.zeros(lat.shape[::-1], complex)
        if f.q != 0:
            from .field import _qvalue
            F = F * np.exp(2j * np.pi * _qvalue(f, lat.points()))
    if h > rv ** -1 / 4:
        raise PacketError(f"lattice spacing {h:.3g} does not resolve scale R^-(1+delta)/2")
    fnorm = float(np.sqrt(np.sum(np.abs(F) ** 2) * lat.cell))
    dec = Decomposition(R, delta, lam, lat, [], F, f_norm=fnorm)
    pts = lat.points()
    # the caps' partition of unity on the lattice, for the record
    total = np.ones(F.shape)
    for i in range(d):
        t = pts[..., i] / s
        acc = np.zeros(F.shape)
        for j in range(int(np.floor(t.min())) - 1, int(np.ceil(t.max())) + 2):
            acc += pou(t - j)
        total *= acc
    dec.pou_error = float(np.max(np.abs(total - 1)))
    if fnorm == 0:
        return dec
    nw = int(np.ceil(WINDOW_HALF * s / h))
    NW = 2 * nw
    zax = np.fft.fftfreq(NW, d=h)
    axes = lat.axes()
    cap_ranges = []
    for i in range(d):
        nz = np.nonzero(np.any(F != 0, axis=tuple(a for a in range(d) if a != d - 1 - i)))[0]
        lo, hi = axes[i][nz.min()], axes[i][nz.max()]
        cap_ranges.append(range(int(np.floor(lo / s - 1)), int(np.ceil(hi / s + 1)) + 1))
    vmax = 0.5 / h
    vrange = np.arange(-int(np.ceil(vmax / rv)) - 1, int(np.ceil(vmax / rv)) + 2)
    eta_tab = {m: pou((zax - m * rv) / rv) for m in vrange}
    eta_keys = [m for m in vrange if np.any(eta_tab[m])]
    thr = (tol * fnorm) ** 2
    for theta in itertools.product(*cap_ranges):
        c = np.array(theta, float) * s
        if cap_filter is not None and not cap_filter(c):
            continue
        k0 = np.rint(c / h).astype(np.int64) - nw
        win = Lattice(h, tuple(float(v) for v in k0 * h), (NW,) * d)
        wpts = win.points()
        g = _embed(lat, F, win)
        psi = np.ones(g.shape)
        cut = np.ones(g.shape)
        for i in range(d):
            u = (wpts[..., i] - c[i]) / s
            psi *= pou(u)
            cut *= plateau(np.abs(u), CUT_INNER, CUT_OUTER)
        g = g * psi
        if not np.any(g):
            continue
        # stored packets are cropped to the support of psi~
        nzc = np.nonzero(cut)
        crop = tuple(slice(int(a.min()), int(a.max()) + 1) for a in nzc)
        lo_idx = [crop[d - 1 - i].start for i in range(d)]
        cwin = Lattice(h, tuple(float(v) for v in (k0 + np.array(lo_idx)) * h),
                       tuple(crop[d - 1 - i].stop - crop[d - 1 - i].start for i in range(d)))
        G = np.fft.ifftn(g) * g.size
        for m in itertools.product(eta_keys, repeat=d):
            v = np.array(m, float) * rv
            if v_filter is not None and not v_filter(c, v):
                continue
            eta = np.ones(())
            for i in range(d):
                # array axis d-1-i carries lattice axis i
                shape = [1] * d
                shape[d - 1 - i] = NW
                eta = eta * eta_tab[m[i]].reshape(shape)
            H = eta * G
            e2 = float(np.sum(np.abs(H) ** 2)) * h ** d / g.size
            if e2 <= thr:
                dec.dropped += 1
                continue
            vals = (np.fft.fftn(H) / g.size * cut)[crop]
            dec.packets.append(WavePacket(tuple(int(t) for t in theta), c, v, cwin, vals, R, delta))
    rec = dec.assemble()
    dec.residual = float(np.max(np.abs(F - rec)))
    dec.defect = float(sum(p.norm ** 2 for p in dec.packets) / fnorm ** 2)
    return dec


# core curves ---------------------------------------------------------------------

@dataclass
class CoreCurve:
    t: np.ndarray
    gamma: np.ndarray
    valid: np.ndarray
    residual: np.ndarray
    t_start: float
    t_end: float

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.gamma, self.t])


def _solve_gamma(phase: PhaseSpec, w, v, lam, t, g0, tol, maxit=50):
    """Newton for d_w phi^lam((g, t); w) = v, vectorised over t."""
    t = np.asarray(t, float)
    g = np.array(g0, float)
    n = phase.n
    w = np.broadcast_to(np.asarray(w, float), (len(t), n - 1))
    ok = np.zeros(len(t), bool)
    res = np.full(len(t), np.inf)
    for _ in range(maxit):
        x = np.column_stack([g, t])
        r = phase.grad_w_lam(x, w, lam) - v
        res = np.linalg.norm(r, axis=1)
        ok = res <= tol
        if np.all(ok):
            break
        J = phase.hess_xw(x / lam, w)[:, : n - 1, :]  # d/dx' of grad_w phi^lam
        J = np.swapaxes(J, 1, 2)
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step[ok] = 0
        g = g - step
        if not np.all(np.isfinite(g)):
            break
    return g, ok, res


def core_curve(phase: PhaseSpec, w_theta, v, lam, t_grid, tol_rel: float = 1e-8) -> CoreCurve:
    """Solve d_w phi^lam(gamma(t), t; w_theta) = v on t_grid.

    Points are valid when Newton converges and (gamma(t), t) stays in the
    support ball of radius lam * x_radius.  Endpoints of the valid interval
    are refined by bisection.
    """
    t = np.asarray(t_grid, float)
    v = np.asarray(v, float)
    tol = tol_rel * lam
    g, ok, res = _solve_gamma(phase, w_theta, v, lam, t, np.tile(v, (len(t), 1)), tol)
    if not np.any(ok) and len(t):
        raise RootFindingError(f"core curve solver failed for w={w_theta}, v={v}; residuals {res.min():.3g}")
    inside = np.linalg.norm(np.column_stack([g, t]), axis=1) <= lam * phase.x_radius
    valid = ok & inside

    def good(tt):
        gg, o, _ = _solve_gamma(phase, w_theta, v, lam, np.array([tt]), v[None, :], tol)
        return bool(o[0]) and np.linalg.norm(np.append(gg[0], tt)) <= lam * phase.x_radius

    ts, te = np.nan, np.nan
    if np.any(valid):
        i0 = int(np.argmax(valid))
        i1 = len(valid) - 1 - int(np.argmax(valid[::-1]))
        ts, te = t[i0], t[i1]
        if i0 > 0:
            ts = _bisect(good, t[i0 - 1], t[i0])
        if i1 < len(t) - 1:
            te = _bisect(good, t[i1 + 1], t[i1])
    return CoreCurve(t, g, valid, res, float(ts), float(te))


def _bisect(good, bad_t, good_t, it=40):
    for _ in range(it):
        mid = 0.5 * (bad_t + good_t)
        if good(mid):
            good_t = mid
        else:
            bad_t = mid
    return good_t


@dataclass
class Tube:
    theta: tuple
    center: np.ndarray
    v: np.ndarray
    curve: CoreCurve
    radius: float
    lam: float
    R: float
    phase: PhaseSpec = field(repr=False, default=None)

    def core_at(self, tn) -> np.ndarray:
        tn = np.atleast_1d(np.asarray(tn, float))
        g, ok, _ = _solve_gamma(self.phase, self.center, self.v, self.lam, tn,
                                np.tile(self.v, (len(tn), 1)), 1e-8 * self.lam)
        g[~ok] = np.nan
        return g

    def distance(self, x) -> np.ndarray:
        """|x' - gamma(x_n)|, the quantity bounded by the tube radius."""
        x = np.atleast_2d(np.asarray(x, float))
        return np.linalg.norm(x[:, :-1] - self.core_at(x[:, -1]), axis=1)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return (self.distance(x) <= self.radius) & (np.linalg.norm(x, axis=1) <= self.R)

    def core_points(self) -> np.ndarray:
        p = self.curve.points[self.curve.valid]
        return p[np.linalg.norm(p, axis=1) <= self.R]


def make_tube(phase: PhaseSpec, packet: WavePacket, lam: float, samples: int = 65) -> Tube:
    R = packet.R
    t = np.linspace(-R, R, samples)
    cc = core_curve(phase, packet.center, packet.v, lam, t)
    return Tube(packet.theta, packet.center, packet.v, cc, R ** (0.5 + packet.delta), lam, R, phase)


def concentration_profile(phase: PhaseSpec, amp: AmplitudeSpec, lam: float, packet: WavePacket,
                          exterior_points, tube: Optional[Tube] = None) -> float:
    """max |T f_{theta,v}| over exterior points divided by its max over core samples."""
    ext = np.atleast_2d(np.asarray(exterior_points, float))
    if ext.size == 0:
        raise PacketError("no exterior points given")
    tube = tube or make_tube(phase, packet, lam)
    f = packet.as_input()
    core = tube.core_points()
    top = np.max(np.abs(evaluate(phase, amp, lam, f, core).values))
    out = np.max(np.abs(evaluate(phase, amp, lam, f, ext).values))
    return float(out / top)


def exterior_shell(tube: Tube, dist: float, per_side: int = 64) -> np.ndarray:
    """Points at |x' - gamma(x_n)| = dist inside B(0, R) (n = 2: both sides; n >= 3: a ring)."""
    R = tube.R
    n = tube.phase.n
    tn = np.linspace(-R, R, per_side)
    g = tube.core_at(tn)
    out = []
    if n == 2:
        for sgn in (-1, 1):
            out.append(np.column_stack([g[:, 0] + sgn * dist, tn]))
    else:
        for a in np.linspace(0, 2 * np.pi, 12, endpoint=False):
            u = np.zeros(n - 1)
            u[0], u[1] = np.cos(a), np.sin(a)
            out.append(np.column_stack([g + dist * u, tn]))
    pts = np.vstack(out)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    return pts[np.linalg.norm(pts, axis=1) <= R]


# re-decomposition at a smaller scale -----------------------------------------------------

@dataclass
class Regrouping:
    rho: float
    y: np.ndarray
    windows: dict      # packet index -> (caps within C rho^{-1/2}, v~ window centre, radius)
    families: dict     # (theta~, w) -> list of packet indices
    hausdorff: dict    # (theta~, w) -> max Hausdorff distance of member cores to family union
    hausdorff_limit: float


def vbar(phase: PhaseSpec, y, w, lam):
    return phase.grad_w_lam(np.asarray(y, float), np.asarray(w, float), lam)


def regroup_at_scale(dec: Decomposition, y, rho: float, phase: PhaseSpec, window_c: float = 2.0,
                     check_hausdorff: bool = True) -> Regrouping:
    R, delta, lam = dec.R, dec.delta, dec.lam
    if not (R ** 0.5 <= rho <= R ** (1 - delta) * (1 + 1e-12)):
        raise PacketError(f"rho={rho} outside [R^(1/2), R^(1-delta)]")
    y = np.asarray(y, float)
    s_small = rho ** -0.5
    rv_R = R ** ((1 + delta) / 2)
    rv_rho = rho ** ((1 + delta) / 2)
    windows, families = {}, {}
    for i, p in enumerate(dec.packets):
        vb = vbar(phase, y, p.center, lam)
        shift = p.v - vb
        # scale-rho window: nearby small caps and v~ within C R^{(1+delta)/2} of v - vbar
        ct = np.rint(p.center / s_small).astype(int)
        caps = [tuple(ct + np.array(o)) for o in itertools.product((-1, 0, 1), repeat=len(ct))
                if np.linalg.norm((ct + np.array(o)) * s_small - p.center) <= window_c * s_small]
        windows[i] = {"caps": caps, "v_center": shift, "v_radius": window_c * rv_R,
                      "v_spacing": rv_rho}
        key = (tuple(int(a) for a in ct), tuple(int(a) for a in np.rint(shift / rv_R)))
        families.setdefault(key, []).append(i)
    haus = {}
    if check_hausdorff:
        ts = np.linspace(y[-1] - rho, y[-1] + rho, 41)
        cores = {}
        for i, p in enumerate(dec.packets):
            cc = core_curve(phase, p.center, p.v, lam, ts)
            pts = cc.points[cc.valid]
            cores[i] = pts[np.linalg.norm(pts - y, axis=1) <= rho]
        for key, members in families.items():
            union = [cores[i] for i in members if len(cores[i])]
            if not union:
                continue
            U = np.vstack(union)
            worst = 0.0
            for i in members:
                c = cores[i]
                if not len(c):
                    continue
                D = np.linalg.norm(c[:, None, :] - U[None, :, :], axis=-1)
                worst = max(worst, float(D.min(axis=1).max()), float(D.min(axis=0).max()))
            haus[key] = worst
    return Regrouping(rho, y, windows, families, haus, 10 * R ** (0.5 + delta))
