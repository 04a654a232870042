from fractions import Fraction

import pytest
import sympy as sp
from hypothesis import given, strategies as st

from oscint import exponents as E

NS = range(2, 51)


def test_rational_lowest_terms():
    r = E.RationalExponent(Fraction(6, 4))
    assert (r.numerator, r.denominator) == (3, 2)
    assert r.denominator > 0


def test_floats_rejected():
    with pytest.raises(TypeError):
        E.e_kn(2, 3, 4.0)


@pytest.mark.parametrize("n,h,expected", [(3, "H2plus", Fraction(10, 3)), (4, "H2plus", Fraction(14, 5)),
                                          (3, "H2", Fraction(4))])
def test_endpoint_examples(n, h, expected):
    assert E.theorem_endpoint(n, h) == expected


def test_endpoint_errors():
    with pytest.raises(E.ExponentError):
        E.theorem_endpoint(1, "H2")
    with pytest.raises(E.ExponentError):
        E.theorem_endpoint(3, "H3")


def test_pbar_examples():
    assert E.pbar(2, 3) == Fraction(10, 3)
    for n in NS:
        assert E.pbar(n, n) == Fraction(2 * n, n - 1)
        assert E.pbar(1, n) == Fraction(2 * (n + 1), n - 1)
    with pytest.raises(E.ExponentError):
        E.pbar(0, 3)
    with pytest.raises(E.ExponentError):
        E.pbar(4, 3)


@given(st.integers(2, 50).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n - 1))))
def test_pbar_decreasing(nk):
    n, k = nk
    assert E.pbar(k + 1, n) < E.pbar(k, n)


def test_pbar0_tagged():
    r = E.pbar0(2, 3)
    assert r == E.pbar(3, 3) and r.params[-1] == "+delta"


def test_necessary_examples():
    for n in NS:
        if n % 2:
            assert E.necessary_exponent((n + 1) // 2, Fraction(1, 2), n) == Fraction(2 * (3 * n + 1), 3 * n - 3)
        else:
            assert E.necessary_exponent(n // 2 + 1, 0, n) == Fraction(2 * (n + 2), n)
        for s in (0, Fraction(1, 3), 1):
            assert E.necessary_exponent(n, s, n) == Fraction(2 * n, n - 1)


def test_necessary_errors():
    with pytest.raises(E.ExponentError):
        E.necessary_exponent(1, 0, 3)
    with pytest.raises(E.ExponentError):
        E.necessary_exponent(2, Fraction(3, 2), 3)
    with pytest.raises(E.ExponentError):
        E.necessary_exponent(0, 0, 3)


@pytest.mark.parametrize("h", ["H2", "H2plus"])
def test_figure_entries_agree(h):
    for n in NS:
        m, s = E.optimal_m_sigma(n, h)
        assert E.necessary_exponent(m, s, n) == E.theorem_endpoint(n, h)


def test_e_kn_examples():
    for n in range(2, 12):
        for k in range(1, n + 1):
            assert E.e_kn(k, n, E.pbar(k, n)) == Fraction(1, 2)
            assert E.e_kn(k, n, 2) == 0
    assert E.e_kn(2, 3, 4) == Fraction(5, 8)
    with pytest.raises(E.ExponentError):
        E.e_kn(2, 3, 0)


def test_e_kn_sign_symbolic():
    p, n, k = sp.symbols("p n k", positive=True)
    e = sp.Rational(1, 2) * (sp.Rational(1, 2) - 1 / p) * (n + k)
    pb = 2 * (n + k) / (n + k - 2)
    # at p = pbar the expression -e + 1/2 vanishes, and it is decreasing in p
    assert sp.simplify((-e + sp.Rational(1, 2)).subs(p, pb)) == 0
    assert sp.simplify(sp.diff(-e, p) + (n + k) / (2 * p ** 2)) == 0


@given(st.integers(2, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))),
       st.fractions(min_value=Fraction(1, 10), max_value=20))
def test_e_kn_sign_iff(nk, p):
    n, k = nk
    assert (Fraction(1, 2) - E.e_kn(k, n, p).value <= 0) == (p >= E.pbar(k, n).value)


def test_conversion_examples():
    c = E.broad_to_linear(4, lambda k: E.pbar(k, 4), "positive-definite")
    assert c.k_star == 3 and c.p_linear == Fraction(14, 5) == E.theorem_endpoint(4, "H2plus").value
    c = E.broad_to_linear(5, lambda k: E.pbar(k, 5))
    assert c.k_star == 3 and c.p_linear == Fraction(8, 3)
    c = E.broad_to_linear(3, E.bct_exponent, "general")
    assert c.k_star == 2 and c.p_linear == 4 == E.theorem_endpoint(3, "H2").value


def test_conversion_matches_endpoints():
    for n in NS:
        pd = E.broad_to_linear(n, lambda k, n=n: E.pbar(k, n), "pd")
        assert pd.p_linear == E.theorem_endpoint(n, "H2plus").value
        assert pd.k_star == (n // 2 + 1 if n % 2 == 0 else (n + 1) // 2)
        gen = E.broad_to_linear(n, E.bct_exponent, "general")
        assert gen.p_linear == E.theorem_endpoint(n, "H2").value


def test_conversion_no_range():
    c = E.broad_to_linear(4, lambda k: 2)
    assert not c.has_range and c.to_dict()["result"] == "no linear range"


def test_conversion_dict():
    d = E.broad_to_linear(7, lambda k: E.pbar(k, 7), "pd").to_dict()
    assert d["k_star"] == 4 and d["p_linear"] == "22/9"
    assert [w["k"] for w in d["windows"]] == list(range(2, 8))
    assert d["windows"][0]["upper"] == "inf"


def test_table_formats():
    md = E.format_table(5)
    assert "| 3 | 4 | 10/3 |" in md
    csv = E.format_table(5, "csv").splitlines()
    assert csv[0] == "table,n,hypothesis,m,sigma,p"
    assert "endpoint,4,H2plus,,,14/5" in csv
