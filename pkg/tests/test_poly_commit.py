import hashlib
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from common import poly_commit
from common.errors import DegreeError
from common.field import FieldElement, Polynomial, SubgroupDomain
from conftest import F17

K = SubgroupDomain.of_order(F17, 4)
X = Polynomial.from_ints([0, 1], F17)
FIVE = Polynomial.from_ints([5], F17)


def test_single_leaf_root_is_the_leaf_digest():
    com = poly_commit.commit(FIVE, SubgroupDomain.of_order(F17, 1))
    assert com.root == hashlib.sha256(b'\x00' + (5).to_bytes(8, 'big')).digest()
    assert com.domain_order == 1


def test_root_depends_only_on_evaluations():
    padded = Polynomial.from_ints([5, 0, 0], F17)
    unreduced = Polynomial.from_ints([22], F17)
    assert poly_commit.commit(padded, K).root == poly_commit.commit(unreduced, K).root


def test_domain_order_changes_root():
    assert poly_commit.commit(FIVE, K).root != poly_commit.commit(FIVE, SubgroupDomain.of_order(F17, 8)).root


def test_degree_must_fit_domain():
    with pytest.raises(DegreeError):
        poly_commit.commit(Polynomial.from_ints([0, 0, 0, 0, 1], F17), K)


def test_open_constant():
    opening = poly_commit.open(FIVE, K, 2)
    assert opening.value == 5
    assert poly_commit.verify_opening(poly_commit.commit(FIVE, K), opening)


def test_open_identity():
    assert poly_commit.open(X, K, 3).value == 13


def test_open_out_of_range():
    with pytest.raises(IndexError):
        poly_commit.open(X, K, 5)
    with pytest.raises(IndexError):
        poly_commit.open(X, K, 0)


def test_tampered_openings_fail():
    com = poly_commit.commit(FIVE, K)
    opening = poly_commit.open(FIVE, K, 2)
    assert not poly_commit.verify_opening(com, replace(opening, value=FieldElement(6, F17)))

    com = poly_commit.commit(X, K)
    opening = poly_commit.open(X, K, 3)
    assert not poly_commit.verify_opening(com, replace(opening, index=1))
    assert not poly_commit.verify_opening(com, replace(opening, index=9))
    assert not poly_commit.verify_opening(com, replace(opening, path=opening.path[:-1]))


def test_open_many_matches_single_openings():
    H = SubgroupDomain.of_order(F17, 8)
    poly = Polynomial.from_ints([3, 1, 4, 1, 5], F17)
    assert poly_commit.open_many(poly, H, [1, 6]) == [poly_commit.open(poly, H, 1), poly_commit.open(poly, H, 6)]


@given(st.lists(st.integers(min_value=0, max_value=F17 - 1), max_size=8), st.integers(min_value=1, max_value=8))
def test_honest_openings_verify(coefficients, j):
    H = SubgroupDomain.of_order(F17, 8)
    poly = Polynomial.from_ints(coefficients, F17)
    opening = poly_commit.open(poly, H, j)
    assert opening.value == poly(H.element(j))
    assert len(opening.path) == poly_commit.path_length(8)
    assert poly_commit.verify_opening(poly_commit.commit(poly, H), opening)
