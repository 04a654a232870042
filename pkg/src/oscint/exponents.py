"""Exact rational bookkeeping for L^p exponents.

Everything here is computed with ``fractions.Fraction``; floats never enter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Union

Number = Union[int, Fraction]


class ExponentError(ValueError):
    """Raised for parameters outside the range where a formula is defined."""


@dataclass(frozen=True)
class RationalExponent:
    value: Fraction
    source: str = ""
    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))

    @property
    def numerator(self) -> int:
        return self.value.numerator

    @property
    def denominator(self) -> int:
        return self.value.denominator

    def __eq__(self, other):
        if isinstance(other, RationalExponent):
            return self.value == other.value
        return self.value == other

    def __hash__(self):
        return hash(self.value)

    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __str__(self):
        return str(self.value)


def _val(x) -> Fraction:
    if isinstance(x, RationalExponent):
        return x.value
    if isinstance(x, float):
        raise TypeError("floating point values are not accepted here")
    return Fraction(x)


def _int(n, name="n") -> int:
    if isinstance(n, bool) or not isinstance(n, int):
        raise ExponentError(f"{name} must be an integer, got {n!r}")
    return n


def theorem_endpoint(n: int, hypothesis: str) -> RationalExponent:
    """Sharp endpoint p for operators with the rank condition plus curvature
    (``"H2"``) or positive-definite curvature (``"H2plus"``)."""
    n = _int(n)
    if n < 2:
        raise ExponentError("n must be at least 2")
    h = hypothesis.lower().replace("⁺", "plus").replace("+", "plus")
    if h == "h2":
        v = Fraction(2 * (n + 1), n - 1) if n % 2 else Fraction(2 * (n + 2), n)
    elif h == "h2plus":
        v = Fraction(2 * (3 * n + 1), 3 * n - 3) if n % 2 else Fraction(2 * (3 * n + 2), 3 * n - 2)
    else:
        raise ExponentError(f"unknown hypothesis {hypothesis!r}")
    return RationalExponent(v, "theorem_endpoint", (n, "H2plus" if h == "h2plus" else "H2"))


def pbar(k: int, n: int) -> RationalExponent:
    """Conjectured k-broad exponent 2(n+k)/(n+k-2)."""
    k, n = _int(k, "k"), _int(n)
    if not 1 <= k <= n:
        raise ExponentError(f"need 1 <= k <= n, got k={k}, n={n}")
    return RationalExponent(Fraction(2 * (n + k), n + k - 2), "pbar", (k, n))


def pbar0(k: int, m: int) -> RationalExponent:
    """pbar(m, m) carrying an unspecified ``+delta`` offset; the offset is never a number."""
    k, m = _int(k, "k"), _int(m, "m")
    if not 1 <= k <= m:
        raise ExponentError(f"need 1 <= k <= m, got k={k}, m={m}")
    return RationalExponent(pbar(m, m).value, "pbar0", (k, m, "+delta"))


def necessary_exponent(m: int, sigma: Number, n: int) -> RationalExponent:
    """Lower bound on p forced by compressing tubes into a sigma-neighbourhood
    of an m-dimensional variety."""
    m, n = _int(m, "m"), _int(n)
    s = _val(sigma)
    if not (0 <= s <= 1):
        raise ExponentError("sigma must lie in [0, 1]")
    if not 1 <= m <= n:
        raise ExponentError("need 1 <= m <= n")
    a = s * (n - m) + m
    if a - 1 <= 0:
        raise ExponentError("denominator sigma(n-m)+m-1 must be positive")
    return RationalExponent(2 * a / (a - 1), "necessary_exponent", (m, s, n))


def optimal_m_sigma(n: int, hypothesis: str) -> tuple[int, Fraction]:
    """(m, sigma) pair realising the sharp necessary condition."""
    n = _int(n)
    if n < 2:
        raise ExponentError("n must be at least 2")
    h = theorem_endpoint(n, hypothesis).params[1]
    m = (n + 1) // 2 if n % 2 else n // 2 + 1
    sigma = Fraction(1, 2) if h == "H2plus" else Fraction(0)
    return m, sigma


def e_kn(k: int, n: int, p: Number) -> RationalExponent:
    """e_{k,n}(p) = (1/2)(1/2 - 1/p)(n+k)."""
    pv = _val(p)
    if pv <= 0:
        raise ExponentError("p must be positive")
    return RationalExponent(Fraction(1, 2) * (Fraction(1, 2) - 1 / pv) * (n + k), "e_kn", (k, n, pv))


INF = None  # marker for an unbounded upper window end


@dataclass
class Window:
    k: int
    broad: Fraction
    lower: Fraction
    upper: Optional[Fraction]  # None means +infinity

    @property
    def low(self) -> Fraction:
        return max(self.broad, self.lower)

    @property
    def nonempty(self) -> bool:
        return self.upper is None or self.low <= self.upper

    @property
    def eligible(self) -> bool:
        # the broad exponent itself has to sit inside the admissible range
        return self.lower <= self.broad and (self.upper is None or self.broad <= self.upper)


@dataclass
class Conversion:
    n: int
    mode: str
    k_star: Optional[int]
    p_linear: Optional[Fraction]
    windows: list

    @property
    def has_range(self) -> bool:
        return self.k_star is not None

    def to_dict(self) -> dict:
        def q(x):
            return None if x is None else str(x)
        return {"n": self.n, "mode": self.mode, "k_star": self.k_star, "p_linear": q(self.p_linear),
                "result": "ok" if self.has_range else "no linear range",
                "windows": [{"k": w.k, "broad": q(w.broad), "lower": q(w.lower),
                             "upper": q(w.upper) if w.upper is not None else "inf",
                             "eligible": w.eligible} for w in self.windows]}


def _window_bounds(n: int, k: int, mode: str) -> tuple[Fraction, Optional[Fraction]]:
    if mode == "positive-definite":
        lower = Fraction(2 * (2 * n - k + 2), 2 * n - k)
        upper = None if k == 2 else Fraction(2 * (k - 1), k - 2)
    else:
        lower = Fraction(2 * (n - k + 2), n - k + 1)
        upper = None
    return lower, upper


def broad_to_linear(n: int, broad_exponent: Callable[[int], Number], mode: str = "positive-definite") -> Conversion:
    """Turn a family of k-broad estimates into a linear estimate.

    k_* is the largest k whose broad exponent lies in that k's admissible
    linear window; ties (equal p) are broken towards smaller p, then larger k.
    """
    n = _int(n)
    if n < 2:
        raise ExponentError("n must be at least 2")
    mode = {"pd": "positive-definite", "general": "general"}.get(mode, mode)
    if mode not in ("positive-definite", "general"):
        raise ExponentError(f"unknown mode {mode!r}")
    windows = []
    for k in range(2, n + 1):
        b = _val(broad_exponent(k))
        lo, up = _window_bounds(n, k, mode)
        windows.append(Window(k, b, lo, up))
    good = [w for w in windows if w.eligible]
    if not good:
        return Conversion(n, mode, None, None, windows)
    best = max(good, key=lambda w: (w.k, -w.broad))
    return Conversion(n, mode, best.k, best.broad, windows)


def bct_exponent(k: int) -> Fraction:
    """Multilinear (k-transversal) exponent 2k/(k-1)."""
    return Fraction(2 * k, k - 1)


def figure1_rows(n_max: int) -> list[dict]:
    rows = []
    for n in range(2, n_max + 1):
        rows.append({"n": n, "H2": theorem_endpoint(n, "H2").value, "H2plus": theorem_endpoint(n, "H2plus").value})
    return rows


def figure2_rows(n_max: int) -> list[dict]:
    rows = []
    for n in range(2, n_max + 1):
        for hyp in ("H2", "H2plus"):
            m, s = optimal_m_sigma(n, hyp)
            rows.append({"n": n, "hypothesis": hyp, "m": m, "sigma": s,
                         "p": necessary_exponent(m, s, n).value})
    return rows


def format_table(n_max: int, fmt: str = "markdown") -> str:
    f1 = figure1_rows(n_max)
    f2 = figure2_rows(n_max)
    out = []
    if fmt == "csv":
        out.append("table,n,hypothesis,m,sigma,p")
        for r in f1:
            out.append(f"endpoint,{r['n']},H2,,,{r['H2']}")
            out.append(f"endpoint,{r['n']},H2plus,,,{r['H2plus']}")
        for r in f2:
            out.append(f"m_sigma,{r['n']},{r['hypothesis']},{r['m']},{r['sigma']},{r['p']}")
        return "\n".join(out) + "\n"
    out.append("| n | H2 endpoint | H2plus endpoint |")
    out.append("|---|---|---|")
    for r in f1:
        out.append(f"| {r['n']} | {r['H2']} | {r['H2plus']} |")
    out.append("")
    out.append("| n | hypothesis | m | sigma | p |")
    out.append("|---|---|---|---|---|")
    for r in f2:
        out.append(f"| {r['n']} | {r['hypothesis']} | {r['m']} | {r['sigma']} | {r['p']} |")
    return "\n".join(out) + "\n"
