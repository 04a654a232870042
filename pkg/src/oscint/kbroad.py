"""k-broad norms of cap-decomposed fields.

Each ball B_{K^2} carries, per K^{-1}-cap tau, samples of T f_tau and the
cap's Gauss direction.  mu(B) hides caps whose direction lies within 1/K of
one of A chosen (k-1)-planes and keeps the largest remaining L^p mass.
"""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .field import AmplitudeSpec, InputFunction, Lattice, evaluate
from .phase import PhaseSpec, gauss_map, paraboloid_phase

EXHAUSTIVE_LIMIT = 10 ** 6
RANDOM_TUPLES = 1000


class KBroadError(ValueError):
    pass


@dataclass
class KBroadConfig:
    k: int
    A: int
    p: float
    K: float
    n: int = 3
    frames: int = 2000
    seed: int = 0
    mode: str = "auto"      # "auto", "exhaustive" or "greedy"

    def __post_init__(self):
        if not (2 <= self.k <= self.n):
            raise KBroadError("need 2 <= k <= n")
        if self.A < 0 or self.K < 1:
            raise KBroadError("need A >= 0 and K >= 1")
        if self.mode not in ("auto", "exhaustive", "greedy"):
            raise KBroadError(f"unknown search mode {self.mode!r}")

    def with_(self, **kw) -> "KBroadConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return KBroadConfig(**d)


@dataclass
class CapField:
    n: int
    K: float
    caps: np.ndarray           # (T, n-1) cap centres
    balls: np.ndarray          # (B, n) ball centres
    directions: np.ndarray     # (B, T, n) unit Gauss directions at ball centres
    values: np.ndarray         # (B, T, S) samples of T f_tau in each ball
    ball_volume: float

    @property
    def radius(self) -> float:
        return self.K ** 2

    def masses(self, p: float) -> np.ndarray:
        """(B, T) array of ||T f_tau||_{L^p(B)}^p (sample mean times ball volume)."""
        if self.values.shape[2] == 0:
            warnings.warn("empty ball sample; contributions set to 0")
            return np.zeros(self.values.shape[:2])
        return self.ball_volume * np.mean(np.abs(self.values) ** p, axis=2)

    def same_geometry(self, other: "CapField") -> bool:
        return (self.n == other.n and self.K == other.K and self.caps.shape == other.caps.shape
                and np.allclose(self.caps, other.caps) and np.allclose(self.balls, other.balls)
                and np.allclose(self.directions, other.directions)
                and self.values.shape == other.values.shape)

    def __add__(self, other: "CapField") -> "CapField":
        if not self.same_geometry(other):
            raise KBroadError("cap fields have different geometry")
        return CapField(self.n, self.K, self.caps, self.balls, self.directions,
                        self.values + other.values, self.ball_volume)

    def drop_caps(self, keep) -> "CapField":
        keep = np.asarray(keep)
        if keep.dtype != bool:
            keep = keep.astype(np.int64)
        return CapField(self.n, self.K, self.caps[keep], self.balls, self.directions[:, keep],
                        self.values[:, keep], self.ball_volume)


# frames --------------------------------------------------------------------------------------

def _orth(M):
    q, _ = np.linalg.qr(M)
    return q


def build_frames(n: int, k: int, count: int, seed: int, directions: Optional[np.ndarray] = None,
                 max_subsets: int = 5000) -> list:
    """Random (k-1)-frames plus frames spanned by subsets of the given directions."""
    rng = np.random.default_rng(seed)
    d = k - 1
    out = list(np.linalg.qr(rng.normal(size=(count, n, d)))[0]) if count else []
    if directions is not None and len(directions):
        dirs = np.asarray(directions, float).reshape(-1, n)
        # unique directions up to sign
        uniq = []
        for v in dirs:
            v = v / np.linalg.norm(v)
            if all(abs(abs(v @ u) - 1) > 1e-12 for u in uniq):
                uniq.append(v)
        made = 0
        for r in range(1, d + 1):
            for S in itertools.combinations(range(len(uniq)), r):
                M = np.column_stack([uniq[i] for i in S])
                if np.linalg.matrix_rank(M, tol=1e-10) < r:
                    continue
                if r < d:
                    M = np.column_stack([M, rng.normal(size=(n, d - r))])
                out.append(_orth(M))
                made += 1
                if made >= max_subsets:
                    break
            if made >= max_subsets:
                break
    return out


def frames_orthonormal(frames, tol: float = 1e-10) -> bool:
    return all(np.allclose(F.T @ F, np.eye(F.shape[1]), atol=tol) for F in frames)


def angle_to_plane(vecs, frame) -> np.ndarray:
    v = np.atleast_2d(vecs)
    c = np.linalg.norm(v @ frame, axis=1) / np.linalg.norm(v, axis=1)
    return np.arccos(np.clip(c, 0.0, 1.0))


def hidden_masks(dirs, frames, K: float) -> np.ndarray:
    """Unique, non-dominated boolean masks of caps hidden by single frames."""
    T = len(dirs)
    if T == 0:
        return np.zeros((0, 0), bool)
    F = np.stack(frames)                              # (M, n, d)
    c = np.linalg.norm(np.einsum("tn,mnd->mtd", dirs, F), axis=2)
    ang = np.arccos(np.clip(c, 0.0, 1.0))
    masks = np.unique(ang <= 1.0 / K, axis=0)
    masks = masks[masks.any(axis=1)]
    if len(masks) == 0:
        return masks
    # drop masks strictly contained in another one: they never lower the minimum
    mi = masks.astype(np.int64)
    inside = (mi @ (1 - mi).T) == 0          # inside[i, j]: mask i is a subset of mask j
    np.fill_diagonal(inside, False)
    return masks[~inside.any(axis=1)]


# mu and BL --------------------------------------------------------------------------------------

@dataclass
class MuResult:
    value: float
    mode: str
    tuple_: tuple
    gap: float = 0.0


def _mu_from_masks(mass, masks, A, rng, mode: str = "auto") -> MuResult:
    T = len(mass)
    if T == 0:
        return MuResult(0.0, "empty", ())
    if A == 0 or len(masks) == 0:
        return MuResult(float(mass.max()), "none", ())

    def val(idx):
        hid = np.zeros(T, bool)
        for i in idx:
            hid |= masks[i]
        return float(mass[~hid].max()) if np.any(~hid) else 0.0

    M = len(masks)
    a = min(A, M)
    if mode == "exhaustive" or (mode == "auto" and M ** a <= EXHAUSTIVE_LIMIT):
        best, arg = math.inf, ()
        for idx in itertools.combinations(range(M), a):
            v = val(idx)
            if v < best:
                best, arg = v, idx
                if v == 0.0:
                    break
        return MuResult(best, "exhaustive", arg)
    # greedy: each new plane is chosen to minimise the remaining maximum
    chosen, hid = [], np.zeros(T, bool)
    for _ in range(a):
        scores = [float(mass[~(hid | m)].max()) if np.any(~(hid | m)) else 0.0 for m in masks]
        j = int(np.argmin(scores))
        chosen.append(j)
        hid |= masks[j]
    g = val(chosen)
    picks = np.argsort(rng.random((RANDOM_TUPLES, M)), axis=1)[:, :a]
    hidr = masks[picks].any(axis=1)
    rnd = float(np.min(np.where(hidr, -np.inf, mass[None, :]).max(axis=1).clip(min=0.0)))
    gap = (g - rnd) / rnd if rnd > 0 else (0.0 if g == 0 else math.inf)
    return MuResult(g, "greedy", tuple(chosen), gap)


def mu_ball(cf: CapField, ball: int, cfg: KBroadConfig, frames: Optional[list] = None,
            masses: Optional[np.ndarray] = None) -> MuResult:
    frames = frames if frames is not None else build_frames(cf.n, cfg.k, cfg.frames, cfg.seed,
                                                            cf.directions.reshape(-1, cf.n))
    mass = (masses if masses is not None else cf.masses(cfg.p))[ball]
    masks = hidden_masks(cf.directions[ball], frames, cfg.K)
    return _mu_from_masks(mass, masks, cfg.A, np.random.default_rng(cfg.seed + 1000003 * ball), cfg.mode)


def balls_in_region(cf: CapField, region) -> np.ndarray:
    """Indices of balls B_{K^2} meeting a region: {"kind": "ball"|"union"|"all"} or index list."""
    if region is None:
        return np.arange(len(cf.balls))
    if isinstance(region, (list, tuple, np.ndarray)) and not isinstance(region, dict):
        return np.unique(np.asarray(region, int))
    kind = region.get("kind", "ball")
    if kind == "all":
        return np.arange(len(cf.balls))
    if kind == "ball":
        c = np.asarray(region["center"], float)
        d = np.linalg.norm(cf.balls - c, axis=1)
        return np.nonzero(d <= float(region["radius"]) + cf.radius)[0]
    if kind == "union":
        parts = [balls_in_region(cf, r) for r in region["parts"]]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, int)
    raise KBroadError(f"unknown region kind {kind!r}")


@dataclass
class BLResult:
    value: float
    mus: np.ndarray
    balls: np.ndarray
    modes: list
    max_gap: float


def bl_norm(cf: CapField, region, cfg: KBroadConfig, frames: Optional[list] = None) -> BLResult:
    frames = frames if frames is not None else build_frames(cf.n, cfg.k, cfg.frames, cfg.seed,
                                                            cf.directions.reshape(-1, cf.n))
    idx = balls_in_region(cf, region)
    masses = cf.masses(cfg.p)
    res = [mu_ball(cf, int(b), cfg, frames, masses) for b in idx]
    mus = np.array([r.value for r in res])
    return BLResult(float(np.sum(mus)) ** (1.0 / cfg.p), mus, idx, [r.mode for r in res],
                    max((r.gap for r in res), default=0.0))


def cap_sum_bound(cf: CapField, region, p: float) -> float:
    """(sum over balls and caps of ||T f_tau||_p^p)^{1/p} on balls meeting the region."""
    idx = balls_in_region(cf, region)
    return float(np.sum(cf.masses(p)[idx])) ** (1.0 / p)


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    constant: float
    passed: bool
    limit: float
    modes: list = field(default_factory=list)


def check_triangle(cf1: CapField, cf2: CapField, cfg: KBroadConfig, A1: int, A2: int,
                   region=None, limit: float = 8.0) -> InequalityReport:
    if not cf1.same_geometry(cf2):
        raise KBroadError("cap fields have different geometry")
    frames = build_frames(cf1.n, cfg.k, cfg.frames, cfg.seed, cf1.directions.reshape(-1, cf1.n))
    lhs = bl_norm(cf1 + cf2, region, cfg.with_(A=A1 + A2), frames)
    r1 = bl_norm(cf1, region, cfg.with_(A=A1), frames)
    r2 = bl_norm(cf2, region, cfg.with_(A=A2), frames)
    rhs = r1.value + r2.value
    C = lhs.value / rhs if rhs > 0 else (0.0 if lhs.value == 0 else math.inf)
    return InequalityReport(lhs.value, rhs, C, C <= limit, limit, lhs.modes + r1.modes + r2.modes)


def check_logconvexity(cf: CapField, cfg: KBroadConfig, p: float, p1: float, p2: float,
                       a1: float, a2: float, A1: int, A2: int, region=None,
                       limit: float = 8.0) -> InequalityReport:
    if abs(a1 + a2 - 1) > 1e-12 or min(a1, a2) < 0:
        raise KBroadError("need a1, a2 >= 0 with a1 + a2 = 1")
    if abs(1 / p - (a1 / p1 + a2 / p2)) > 1e-12:
        raise KBroadError("exponent identity 1/p = a1/p1 + a2/p2 fails")
    frames = build_frames(cf.n, cfg.k, cfg.frames, cfg.seed, cf.directions.reshape(-1, cf.n))
    lhs = bl_norm(cf, region, cfg.with_(A=A1 + A2, p=p), frames).value
    b1 = bl_norm(cf, region, cfg.with_(A=A1, p=p1), frames).value
    b2 = bl_norm(cf, region, cfg.with_(A=A2, p=p2), frames).value
    rhs = b1 ** a1 * b2 ** a2
    C = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return InequalityReport(lhs, rhs, C, C <= limit, limit)


# constructing cap fields ------------------------------------------------------------------------

def cap_centres(K: float, dim: int, radius: float = 1.0) -> np.ndarray:
    """K^{-1}-separated grid of cap centres inside the ball of given radius."""
    s = 1.0 / K
    m = int(np.floor(radius / s))
    g = np.arange(-m, m + 1) * s
    pts = np.stack(np.meshgrid(*([g] * dim), indexing="ij"), -1).reshape(-1, dim)
    return pts[np.linalg.norm(pts, axis=1) <= radius]


def _directions(phase: PhaseSpec, balls, caps, lam):
    out = np.empty((len(balls), len(caps), phase.n))
    for b, x in enumerate(balls):
        for t, w in enumerate(caps):
            out[b, t] = gauss_map(phase, x, w, lam)
    return out


def random_capfield(n: int, K: float, ncaps: int, nballs: int, samples: int, seed: int,
                    phase: Optional[PhaseSpec] = None, lam: float = 256.0,
                    caps: Optional[np.ndarray] = None) -> CapField:
    """Synthetic field: true cap geometry and Gauss directions, random complex values."""
    rng = np.random.default_rng(seed)
    phase = phase or paraboloid_phase(n)
    if caps is None:
        pool = cap_centres(K, n - 1, 0.9)
        caps = pool[rng.choice(len(pool), min(ncaps, len(pool)), replace=False)]
    balls = rng.uniform(-lam / 4, lam / 4, (nballs, n))
    dirs = _directions(phase, balls, caps, lam)
    scale = rng.lognormal(0.0, 1.0, (nballs, len(caps), 1))
    vals = scale * (rng.normal(size=(nballs, len(caps), samples))
                    + 1j * rng.normal(size=(nballs, len(caps), samples))) / np.sqrt(2)
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * K ** (2 * n)
    return CapField(n, float(K), np.asarray(caps, float), balls, dirs, vals, vol)


def capfield_from_operator(phase: PhaseSpec, amp: AmplitudeSpec, lam: float, f: InputFunction,
                           K: float, balls, samples: int, seed: int,
                           h: Optional[float] = None) -> CapField:
    """Split f into K^{-1}-caps with a smooth partition of unity and sample T f_tau in each ball."""
    from .field import default_lattice
    from .wavepacket import pou
    rng = np.random.default_rng(seed)
    balls = np.atleast_2d(np.asarray(balls, float))
    n = phase.n
    r = K ** 2
    pts = []
    for c in balls:
        g = rng.normal(size=(samples, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pts.append(c + g * r * rng.uniform(size=(samples, 1)) ** (1 / n))
    allpts = np.vstack(pts)
    lat = f.lattice if f.kind == "lattice" else default_lattice(phase, f, allpts, lam)
    if h is not None and f.kind != "lattice":
        lat = Lattice.covering(f.center, f.radius, h)
    F = f.sample(lat)
    if f.kind != "lattice" and f.q != 0:
        from .field import _qvalue
        F = F * np.exp(2j * np.pi * _qvalue(f, lat.points()))
    W = lat.points()
    caps = cap_centres(K, n - 1, f.radius + 1.0 / K)
    vals, kept = [], []
    for c in caps:
        psi = np.prod(pou((W - c) * K), axis=-1)
        ft = F * psi
        if not np.any(ft):
            continue
        ftau = InputFunction.on_lattice(lat, ft)
        v = evaluate(phase, amp, lam, ftau, allpts, lattice=lat).values
        vals.append(v.reshape(len(balls), samples))
        kept.append(c)
    caps = np.array(kept).reshape(-1, n - 1)
    values = np.stack(vals, axis=1) if vals else np.zeros((len(balls), 0, samples), complex)
    dirs = _directions(phase, balls, caps, lam)
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r ** n
    return CapField(n, float(K), caps, balls, dirs, values, vol)


def write_mu_csv(path, res: BLResult, cf: CapField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ball"] + [f"c{i + 1}" for i in range(cf.n)] + ["mu", "mode"])
        for b, mu, mode in zip(res.balls, res.mus, res.modes):
            w.writerow([int(b)] + [f"{v:.17g}" for v in cf.balls[b]] + [f"{mu:.17g}", mode])
