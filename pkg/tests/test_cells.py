import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from liebm.cells import (CellSet, CoverageError, CoverageWarning, dilate, from_box, intersect, measure,
                         product_set, product_set_inner, refine, union)
from liebm.groups import parse_group
from oracles import aff_box_measures, heis_square_measure

R1, R2, H3, AFF = (parse_group(n) for n in ("r:1", "r:2", "heis3", "aff"))


def test_unit_interval_cells():
    S = from_box(R1, [0], [1], 4)
    assert len(S) == 16 and S.role == "exact"
    assert measure(S)[0] == pytest.approx(1.0, abs=1e-12)


def test_unit_square_measure():
    S = from_box(R2, [0, 0], [1, 1], 5)
    assert measure(S, "left")[0] == pytest.approx(1.0, abs=1e-12)


def test_affine_box_measures():
    S = from_box(AFF, [1, 0], [2, 1], 6)
    mu_ref, nu_ref = aff_box_measures(1, 2, 0, 1)
    mu, emu = measure(S, "left")
    nu, enu = measure(S, "right")
    assert mu == pytest.approx(mu_ref, rel=1e-5)
    assert nu == pytest.approx(nu_ref, rel=1e-5)
    assert nu_ref == pytest.approx(math.log(2))
    assert abs(mu - mu_ref) <= max(emu, 1e-12) * 10


def test_measure_error_shrinks_with_level():
    errs = [measure(from_box(AFF, [1, 0], [2, 1], L))[1] for L in (3, 4, 5)]
    assert errs[0] > errs[1] > errs[2]


def test_misaligned_box_is_outer_cover():
    S = from_box(R2, [0.01, 0], [0.93, 1], 4)
    assert S.role == "outer"
    assert measure(S)[0] >= 0.92


def test_empty_measure():
    E = CellSet(R2, 3, np.zeros(0, dtype=np.int64))
    assert measure(E) == (0.0, 0.0)


def test_box_outside_domain():
    with pytest.raises(ValueError):
        from_box(AFF, [-1, 0], [1, 1], 3)
    with pytest.raises(ValueError):
        from_box(R2, [1, 0], [0, 1], 3)


def test_interval_sum_contains_and_converges():
    X = from_box(R1, [0], [1], 3)
    prev = math.inf
    for L in (3, 5, 7):
        P = product_set(X, X, L)
        assert P.role == "outer"
        assert P.contains_points(np.linspace(0, 2, 101)[:, None]).all()
        m = measure(P)[0]
        assert 2.0 <= m <= prev
        prev = m
    assert prev == pytest.approx(2.0, rel=0.02)


def test_square_sum_measure():
    X = from_box(R2, [0, 0], [1, 1], 6)
    assert measure(product_set(X, X))[0] == pytest.approx(4.0, rel=0.03)


@pytest.mark.parametrize("L", [4, 5])
def test_heisenberg_square_against_fibre_oracle(L):
    X = from_box(H3, [0, 0, 0], [1, 1, 1], L)
    P = product_set(X, X)
    ref = heis_square_measure()
    assert ref == pytest.approx(10.0, rel=1e-9)
    m = measure(P)[0]
    assert ref <= m <= ref * 1.15


def test_product_contains_sampled_products():
    rng = np.random.default_rng(0)
    for G, lo, hi in [(H3, [0, 0, 0], [1, 1, 1]), (AFF, [1, 0], [2, 1]),
                      (parse_group("sl2r"), [0, -0.2, -0.2], [0.5, 0.2, 0.2])]:
        X = from_box(G, lo, hi, 4)
        P = product_set(X, X)
        a = rng.uniform(lo, hi, size=(20000, len(lo)))
        b = rng.uniform(lo, hi, size=(20000, len(lo)))
        assert P.contains_points(G.multiply(a, b)).all()


@pytest.mark.parametrize("enclosure", ["corner", "jacobian", "sliced"])
def test_enclosure_modes_are_covers(enclosure):
    G = parse_group("sl2r")
    X = from_box(G, [0, -0.2, -0.2], [0.6, 0.2, 0.2], 4)
    P = product_set(X, X, enclosure=enclosure)
    rng = np.random.default_rng(1)
    a = rng.uniform([0, -0.2, -0.2], [0.6, 0.2, 0.2], size=(20000, 3))
    b = rng.uniform([0, -0.2, -0.2], [0.6, 0.2, 0.2], size=(20000, 3))
    assert P.contains_points(G.multiply(a, b)).all()


def test_boundary_method_matches_pairs():
    X = from_box(H3, [0, 0, 0], [1, 1, 1], 4)
    A = product_set(X, X, method="pairs")
    B = product_set(X, X, method="boundary")
    assert A.issubset(B)
    assert measure(B)[0] <= measure(A)[0] * 1.02


def test_inner_inside_outer_and_converges():
    X = from_box(R1, [0], [1], 6)
    P = product_set(X, X)
    Q = product_set_inner(X, X, samples=200_000, seed=0)
    assert Q.role == "inner"
    assert Q.issubset(P)
    assert measure(Q)[0] == pytest.approx(2.0, rel=0.02)


def test_inner_grows_with_samples_affine():
    X = from_box(AFF, [1, 0], [2, 1], 5)
    Y = from_box(AFF, [1, 0], [1.5, 2], 5)
    P = product_set(X, Y)
    sets = [product_set_inner(X, Y, samples=s, seed=3) for s in (20_000, 200_000, 1_000_000)]
    vals = [measure(Q)[0] for Q in sets]
    # fibre of XY over a is [0, 2 min(a, 2) + 1]
    true = integrate.quad(lambda a: (2 * min(a, 2.0) + 1) / a ** 2, 1, 3, points=[2])[0]
    assert vals[0] <= vals[1] <= vals[2] <= true * 1.001 <= measure(P)[0]
    # the corroboration rule trims the boundary; one dilation step restores it
    assert measure(dilate(sets[2]))[0] >= true


def test_determinism():
    X = from_box(AFF, [1, 0], [2, 1], 4)
    assert np.array_equal(product_set(X, X).keys, product_set(X, X).keys)
    a = product_set_inner(X, X, samples=5000, seed=7)
    b = product_set_inner(X, X, samples=5000, seed=7)
    assert np.array_equal(a.keys, b.keys)


def test_trivial_lower_bounds_affine():
    X = from_box(AFF, [1, 0], [1.5, 0.5], 5)
    Y = from_box(AFF, [2, -1], [3, 0], 5)
    P = product_set(X, Y)
    assert measure(P, "left")[0] >= measure(Y, "left")[0] * (1 - 1e-3)
    assert measure(P, "right")[0] >= measure(X, "right")[0] * (1 - 1e-3)


def test_union_refine_laws():
    S = from_box(R2, [0, 0], [0.5, 1], 3)
    T = from_box(R2, [0.25, 0], [1, 0.5], 3)
    E = CellSet(R2, 3, np.zeros(0, dtype=np.int64))
    assert np.array_equal(union(S, E).keys, S.keys)
    assert np.array_equal(union(S, S).keys, S.keys)
    assert measure(refine(S, 5))[0] == pytest.approx(measure(S)[0], abs=1e-12)
    U = union(S, refine(T, 4))
    assert U.level == 4
    assert measure(U)[0] == pytest.approx(0.5 + 0.375 - 0.125)
    assert measure(intersect(S, T))[0] == pytest.approx(0.125)
    with pytest.raises(ValueError):
        refine(S, 2)


def test_union_role_mixing():
    S = from_box(R1, [0], [1], 3)
    P = product_set(S, S)
    Q = product_set_inner(S, S, samples=2000, seed=0)
    assert union(S, P).role == "outer"
    with pytest.raises(ValueError):
        union(P, Q)


def test_monotone_in_first_factor():
    X = from_box(AFF, [1, 0], [1.5, 0.5], 4)
    X2 = union(X, from_box(AFF, [1.5, 0], [2, 0.25], 4))
    Y = from_box(AFF, [1, 0], [2, 1], 4)
    assert measure(X)[0] <= measure(X2)[0]
    assert product_set(X, Y).issubset(product_set(X2, Y))


def test_serialization_round_trip():
    S = from_box(H3, [0, 0, 0], [1, 0.5, 0.25], 3)
    blob = S.to_bytes()
    assert blob[:4] == b"CSET"
    T = CellSet.from_bytes(blob)
    assert T.chart is S.chart and np.array_equal(T.keys, S.keys) and T.level == 3
    U = CellSet.from_json(S.to_json())
    assert np.array_equal(U.keys, S.keys) and np.allclose(U.base, S.base)
    with pytest.raises(ValueError):
        CellSet.from_bytes(b"XXXX" + blob[4:])


def test_periodic_axis_wraps():
    T = parse_group("t:1")
    X = from_box(T, [0.0], [0.75], 4)
    P = product_set(X, X)
    assert measure(P)[0] == pytest.approx(1.0)


def test_dilate_full_neighbourhood():
    S = CellSet.from_indices(R2, 3, np.array([[4, 4]]))
    assert len(dilate(S)) == 9
    assert len(dilate(S, 2)) == 25


def test_clipping_warning_and_strict():
    X = from_box(AFF, [0.05, 0], [0.1, 1], 6, base=np.array([1.0, 1.0]))
    Y = from_box(AFF, [0.05, -1], [0.1, 0], 6, base=np.array([1.0, 1.0]))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        P = product_set(X, Y)
    if P.notes:
        assert any(issubclass(x.category, CoverageWarning) for x in w)
        with pytest.raises(CoverageError):
            product_set(X, Y, strict=True)
    else:
        assert product_set(X, Y, strict=True) is not None
