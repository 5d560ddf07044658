import csv
import io
import json
import math

import pytest

from liebm.bm import (CSV_COLUMNS, bm_lhs, check_bm, holder_norm, kemperman_lhs, mccrudden_lhs,
                      reports_to_csv)
from liebm.cells import from_box
from liebm.constructions import TubeSpec, tube
from liebm.groups import parse_group


def test_holder_norm_examples():
    assert holder_norm(1, 1, 1) == 2
    assert holder_norm(1, 1, 2) == pytest.approx(4)
    assert holder_norm(3, 7, 0) == 7


def test_holder_norm_homogeneous_and_symmetric():
    for n in (0, 1, 2, 3):
        assert holder_norm(2 * 0.3, 2 * 1.7, n) == pytest.approx(2 * holder_norm(0.3, 1.7, n))
        assert holder_norm(0.3, 1.7, n) == pytest.approx(holder_norm(1.7, 0.3, n))


def test_holder_norm_errors():
    with pytest.raises(ValueError):
        holder_norm(-1, 1, 1)
    with pytest.raises(ValueError):
        holder_norm(1, 1, -1)


def test_bm_lhs_examples():
    assert bm_lhs(1, 2, 1, 2, 1) == pytest.approx(1.0)
    assert bm_lhs(1, 4, 1, 4, 2) == pytest.approx(1.0)
    assert bm_lhs(1, 4, 3, 4, 0) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        bm_lhs(1, 0, 1, 2, 1)
    with pytest.raises(ValueError):
        bm_lhs(1, 2, 1, 2, -1)


def test_mccrudden_and_kemperman():
    assert mccrudden_lhs(1, 1, 4, 2) == pytest.approx(1.0)
    assert mccrudden_lhs(1, 1, 10, 3) == pytest.approx(2 * 0.1 ** (1 / 3))
    assert mccrudden_lhs(1, 1, 10, 3) < 1
    assert kemperman_lhs(1, 2, 1, 2) == pytest.approx(1.0)


def test_interval_equality_case():
    R1 = parse_group("r:1")
    X = from_box(R1, [0], [1], 7)
    rep = check_bm(R1, X, X, seed=0)
    assert rep.exponent_used == 1
    assert abs(rep.deficit) <= 0.02
    assert rep.passed


def test_report_invariants_and_serialization():
    A = parse_group("aff")
    X = from_box(A, [1, 0], [2, 1], 4)
    Y = from_box(A, [1, -1], [1.5, 0.5], 4)
    rep = check_bm(A, X, Y, seed=1)
    assert rep.lhs_optimistic <= rep.lhs_conservative
    assert rep.mu_XY_inner <= rep.mu_XY_outer and rep.nu_XY_inner <= rep.nu_XY_outer
    assert min(rep.nu_X, rep.mu_Y, rep.mu_XY_inner, rep.nu_XY_inner) >= 0
    row = next(csv.DictReader(io.StringIO(rep.to_csv())))
    assert list(row) == list(CSV_COLUMNS)
    assert float(row["lhs_conservative"]) == rep.lhs_conservative
    assert row["verdict"] == rep.verdict
    blob = json.loads(rep.to_json())
    assert blob["deficit"] == pytest.approx(1 - rep.lhs_conservative)
    assert reports_to_csv([rep, rep]).count("\n") == 3


def test_check_bm_deterministic():
    A = parse_group("aff")
    X = from_box(A, [1, 0], [2, 1], 4)
    assert check_bm(A, X, X, seed=5).to_csv() == check_bm(A, X, X, seed=5).to_csv()


def test_sl2r_tube_near_sharp():
    X = tube(TubeSpec("sl2r", 0.2, 5, "midpoint"))
    rep = check_bm("sl2r", X, X, 2, seed=0)
    assert rep.lhs_conservative == pytest.approx(1.0, abs=0.06)
    assert rep.passed


def test_heisenberg_mccrudden_from_measurement():
    H = parse_group("heis3")
    X = from_box(H, [0, 0, 0], [1, 1, 1], 5)
    rep = check_bm(H, X, X, 3, inner=False)
    assert rep.lhs_optimistic < 1
    assert rep.lhs_optimistic == pytest.approx(2 * (1 / 10) ** (1 / 3), rel=0.05)


def test_zero_measure_rejected():
    R1 = parse_group("r:1")
    X = from_box(R1, [0], [1], 3)
    empty = from_box(R1, [0], [1], 3)
    empty = type(empty)(R1, 3, empty.keys[:0])
    with pytest.raises(ValueError):
        check_bm(R1, X, empty)


def test_infinite_lhs_when_inner_empty():
    R1 = parse_group("r:1")
    X = from_box(R1, [0], [0.125], 3)
    rep = check_bm(R1, X, X, samples=1, seed=0)
    assert math.isinf(rep.lhs_conservative) and not rep.passed
