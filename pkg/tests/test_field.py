import pytest
from hypothesis import given
from hypothesis import strategies as st

from common.config import DEFAULT_MODULUS
from common.errors import ArityError, DomainUnavailable, EncodingError, NotInSubgroup
from common.field import (FieldElement, Polynomial, SubgroupDomain, dlog_in_subgroup, elements, evaluate,
                          evaluate_domain, field_class, has_order, interpolate, next_power_of_two, subgroup_generator)
from conftest import F17


@pytest.mark.parametrize("order, expected", [(4, 4), (8, 2), (1, 1), (16, 3)])
def test_subgroup_generator_is_smallest_of_exact_order(order, expected):
    g = subgroup_generator(F17, order)
    assert g == expected
    assert has_order(g, order)


def test_subgroup_generator_rejects_order_not_dividing_p_minus_1():
    with pytest.raises(DomainUnavailable):
        subgroup_generator(F17, 3)


def test_domain_elements_start_at_g():
    K = SubgroupDomain.of_order(F17, 4)
    assert [e.value for e in K.elements] == [4, 16, 13, 1]
    assert K.element(4) == 1


def test_runtime_modulus_has_large_power_of_two_subgroups():
    g = subgroup_generator(DEFAULT_MODULUS, 2**10)
    assert has_order(g, 2**10)


def test_field_class_rejects_composite():
    with pytest.raises(DomainUnavailable):
        field_class(15)


def test_interpolate_constant():
    K = SubgroupDomain.of_order(F17, 4)
    assert interpolate(K, [5, 5, 5, 5]) == Polynomial.from_ints([5], F17)


def test_interpolate_order_one_domain():
    D = SubgroupDomain.of_order(F17, 1)
    assert D.generator == 1
    assert interpolate(D, [8]) == Polynomial.from_ints([8], F17)


def test_interpolate_identity_on_domain():
    K = SubgroupDomain.of_order(F17, 4)
    q = interpolate(K, [4, 16, 13, 1])
    assert q == Polynomial.from_ints([0, 1], F17)
    assert all(q(x) == x for x in K.elements)


def test_interpolate_length_mismatch():
    K = SubgroupDomain.of_order(F17, 4)
    with pytest.raises(ArityError):
        interpolate(K, [1, 2, 3])


@given(st.lists(st.integers(min_value=0, max_value=F17 - 1), min_size=8, max_size=8))
def test_interpolation_hits_every_point(values):
    H = SubgroupDomain.of_order(F17, 8)
    q = interpolate(H, values)
    assert q.degree < 8
    assert [q(H.element(j)).value for j in range(1, 9)] == values


def test_evaluate():
    assert evaluate(Polynomial.from_ints([1, 0, 1], F17), 4) == 0
    assert evaluate(Polynomial.from_ints([], F17), 11) == 0
    assert evaluate(Polynomial.from_ints([5], F17), 13) == 5


def test_evaluate_domain_matches_pointwise():
    H = SubgroupDomain.of_order(F17, 8)
    poly = Polynomial.from_ints([3, 1, 4, 1, 5], F17)
    assert evaluate_domain(poly, H) == [evaluate(poly, x) for x in H.elements]
    assert evaluate_domain(Polynomial.from_ints([], F17), H) == [0] * 8


def test_polynomial_trims_trailing_zeros():
    p = Polynomial.from_ints([3, 0, 0], F17)
    assert p.coefficients == elements([3], F17)
    assert Polynomial.from_ints([0, 0], F17).is_zero()


def test_dlog_in_subgroup():
    two = FieldElement(2, F17)
    assert dlog_in_subgroup(two, 8, 8) == 3
    assert dlog_in_subgroup(two, 1, 8) == 8
    with pytest.raises(NotInSubgroup):
        dlog_in_subgroup(two, 3, 8)


@given(st.integers(), st.integers())
def test_field_division_inverts_multiplication(a, b):
    x, y = FieldElement(a, F17), FieldElement(b, F17)
    if y:
        assert (x * y) / y == x
    assert x - y + y == x


@given(st.integers(min_value=0, max_value=DEFAULT_MODULUS - 1))
def test_canonical_encoding(value):
    x = FieldElement(value)
    assert len(x.to_bytes()) == 8
    assert FieldElement.from_bytes(x.to_bytes()) == x


@given(st.integers(min_value=0, max_value=DEFAULT_MODULUS - 1), st.integers(min_value=1, max_value=DEFAULT_MODULUS - 1))
def test_arithmetic_agrees_with_galois(a, b):
    GF = field_class(DEFAULT_MODULUS)
    x, y = FieldElement(a), FieldElement(b)
    assert (x * y).value == int(GF(a) * GF(b))
    assert (x - y).value == int(GF(a) - GF(b))
    assert y.inverse().value == int(GF(b) ** -1)
    assert (x ** 5).gf == GF(a) ** 5


def test_non_canonical_bytes_rejected():
    with pytest.raises(EncodingError):
        FieldElement.from_bytes((17).to_bytes(8, 'big'), F17)
    with pytest.raises(EncodingError):
        FieldElement.from_bytes(b'\x01', F17)


def test_mixed_moduli_refused():
    with pytest.raises(ValueError):
        FieldElement(1, F17) + FieldElement(1, 13)


def test_zero_has_no_inverse():
    with pytest.raises(ZeroDivisionError):
        FieldElement(0, F17).inverse()


def test_next_power_of_two():
    assert [next_power_of_two(n) for n in (1, 2, 3, 5, 8, 9)] == [1, 2, 4, 8, 8, 16]
