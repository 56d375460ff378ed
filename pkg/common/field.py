# Prime-field arithmetic, multiplicative-subgroup domains and polynomials.
# The galois library supplies the GF(p) arithmetic, primitive elements, integer
# factorisation, polynomial evaluation and Lagrange interpolation. Values
# crossing module boundaries are immutable FieldElement / Polynomial wrappers
# around its scalars and polynomials.

import functools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import galois
import numpy as np

from common import config
from common.errors import ArityError, DomainUnavailable, EncodingError, NotInSubgroup, TooLarge

logger = logging.getLogger(__name__)

DEFAULT_MODULUS = config.DEFAULT_MODULUS
ELEMENT_BYTES = config.FIELD_ELEMENT_BYTES


@functools.lru_cache(maxsize=None)
def field_class(modulus: int):
    """Returns the (cached) galois GF(p) class for a prime modulus."""
    if modulus < 2 or modulus >= 2**(8 * ELEMENT_BYTES) or not galois.is_prime(modulus):
        raise DomainUnavailable(f"Modulus {modulus} is not a supported prime")
    logger.debug(f"Building GF({modulus})")
    return galois.GF(modulus)


@dataclass(frozen=True, eq=False, slots=True)
class FieldElement:
    """
    An element of GF(p). The value is always reduced into [0, p); arithmetic
    runs on the galois GF(p) scalar returned by `gf`.
    """
    value: int
    modulus: int = DEFAULT_MODULUS

    def __post_init__(self):
        object.__setattr__(self, 'value', int(self.value) % self.modulus)

    @property
    def gf(self):
        return field_class(self.modulus)(self.value)

    def _lift(self, result) -> 'FieldElement':
        return FieldElement(int(result), self.modulus)

    def _coerce(self, other) -> 'FieldElement | None':
        if isinstance(other, FieldElement):
            if other.modulus != self.modulus:
                raise ValueError(f"Mixed moduli {self.modulus} and {other.modulus}")
            return other
        if isinstance(other, int):
            return FieldElement(other, self.modulus)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self._lift(self.gf + o.gf)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self._lift(self.gf - o.gf)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self._lift(o.gf - self.gf)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self._lift(self.gf * o.gf)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self * o.inverse()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o * self.inverse()

    def __neg__(self):
        return self._lift(-self.gf)

    def __pow__(self, exponent: int):
        if exponent < 0:
            return self.inverse() ** (-exponent)
        return self._lift(self.gf ** exponent)

    def inverse(self) -> 'FieldElement':
        if self.value == 0:
            raise ZeroDivisionError("Zero has no multiplicative inverse")
        return self._lift(np.reciprocal(self.gf))

    def __eq__(self, other):
        if isinstance(other, FieldElement):
            return self.value == other.value and self.modulus == other.modulus
        if isinstance(other, int):
            return self.value == other % self.modulus
        return NotImplemented

    def __hash__(self):
        return hash((self.value, self.modulus))

    def __int__(self):
        return self.value

    def __bool__(self):
        return self.value != 0

    def __repr__(self):
        return f"FieldElement({self.value}, p={self.modulus})"

    def to_bytes(self) -> bytes:
        """Canonical 8-byte big-endian encoding."""
        return self.value.to_bytes(ELEMENT_BYTES, 'big')

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int = DEFAULT_MODULUS) -> 'FieldElement':
        if len(data) != ELEMENT_BYTES:
            raise EncodingError(f"Field element needs {ELEMENT_BYTES} bytes, got {len(data)}")
        value = int.from_bytes(data, 'big')
        if value >= modulus:
            raise EncodingError(f"Non-canonical field element {value} >= {modulus}")
        return cls(value, modulus)


def elements(values: Iterable[int], modulus: int = DEFAULT_MODULUS) -> tuple[FieldElement, ...]:
    """Shorthand for a tuple of field elements."""
    return tuple(FieldElement(v, modulus) for v in values)


@dataclass(frozen=True)
class Polynomial:
    """Coefficients low-degree first; trailing zeros are trimmed (zero polynomial = ())."""
    coefficients: tuple[FieldElement, ...]
    modulus: int = DEFAULT_MODULUS

    def __post_init__(self):
        coeffs = list(self.coefficients)
        while coeffs and coeffs[-1].value == 0:
            coeffs.pop()
        object.__setattr__(self, 'coefficients', tuple(coeffs))

    @classmethod
    def from_ints(cls, coefficients: Iterable[int], modulus: int = DEFAULT_MODULUS) -> 'Polynomial':
        return cls(elements(coefficients, modulus), modulus)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def is_zero(self) -> bool:
        return not self.coefficients

    @functools.cached_property
    def galois_poly(self) -> galois.Poly:
        coeffs = [c.value for c in self.coefficients] or [0]
        return galois.Poly(coeffs, field=field_class(self.modulus), order="asc")

    def __call__(self, x) -> FieldElement:
        return evaluate(self, x)

    def to_bytes(self) -> bytes:
        """4-byte big-endian length prefix, then canonical coefficients."""
        return len(self.coefficients).to_bytes(4, 'big') + b''.join(c.to_bytes() for c in self.coefficients)


@dataclass(frozen=True)
class SubgroupDomain:
    """The multiplicative subgroup {g^1, g^2, ..., g^order}; indexing starts at 1."""
    generator: FieldElement
    order: int
    elements: tuple[FieldElement, ...]

    @property
    def modulus(self) -> int:
        return self.generator.modulus

    def element(self, j: int) -> FieldElement:
        """Returns g^j for 1 <= j <= order."""
        return self.elements[j - 1]

    @classmethod
    def of_order(cls, modulus: int, order: int) -> 'SubgroupDomain':
        return _domain(modulus, order)


def next_power_of_two(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def has_order(g: FieldElement, order: int) -> bool:
    """True iff g has multiplicative order exactly 'order'."""
    if g ** order != 1:
        return False
    if order == 1:
        return True
    primes, _ = galois.factors(order)
    return all(g ** (order // q) != 1 for q in primes)


@functools.lru_cache(maxsize=None)
def subgroup_generator(p: int, order: int) -> FieldElement:
    """
    Returns the smallest g (by integer value) of multiplicative order exactly 'order'.

    Every generator of the order-n subgroup is h^k with gcd(k, n) = 1, where h is
    the primitive element raised to (p-1)/n, so only the subgroup is scanned.
    """
    if order < 1 or (p - 1) % order != 0:
        raise DomainUnavailable(f"No subgroup of order {order} in GF({p})")
    if order == 1:
        return FieldElement(1, p)
    if order > config.MAX_DLOG_ORDER:
        raise TooLarge(f"Subgroup order {order} exceeds {config.MAX_DLOG_ORDER}")

    GF = field_class(p)
    h = pow(int(GF.primitive_element), (p - 1) // order, p)

    best = None
    power = 1
    for k in range(1, order + 1):
        power = power * h % p
        if math.gcd(k, order) == 1 and (best is None or power < best):
            best = power
    return FieldElement(best, p)


@functools.lru_cache(maxsize=None)
def _domain(modulus: int, order: int) -> SubgroupDomain:
    g = subgroup_generator(modulus, order)
    powers = []
    current = FieldElement(1, modulus)
    for _ in range(order):
        current = current * g
        powers.append(current)
    return SubgroupDomain(generator=g, order=order, elements=tuple(powers))


def interpolate(domain: SubgroupDomain, values: Sequence) -> Polynomial:
    """
    Returns q with q(domain.element(j)) = values[j-1] for every j, deg q < order.
    Values may be FieldElements or ints.
    """
    if len(values) != domain.order:
        raise ArityError(f"Expected {domain.order} values, got {len(values)}")

    p = domain.modulus
    ints = [int(v) % p for v in values]

    # Constant case needs no interpolation
    if all(v == ints[0] for v in ints):
        return Polynomial.from_ints([ints[0]], p)

    GF = field_class(p)
    xs = GF([e.value for e in domain.elements])
    ys = GF(ints)
    poly = galois.lagrange_poly(xs, ys)
    # galois lists coefficients highest degree first
    return Polynomial.from_ints([int(c) for c in reversed(poly.coeffs)], p)


def evaluate(poly: Polynomial, x) -> FieldElement:
    p = poly.modulus
    return FieldElement(int(poly.galois_poly(field_class(p)(int(x) % p))), p)


def evaluate_domain(poly: Polynomial, domain: SubgroupDomain) -> list[FieldElement]:
    """Evaluations at g^1 .. g^order in one vectorised galois call."""
    p = poly.modulus
    values = poly.galois_poly(field_class(p)([e.value for e in domain.elements]))
    return [FieldElement(int(v), p) for v in values]


@functools.lru_cache(maxsize=64)
def _power_table(modulus: int, base: int, order: int) -> dict[int, int]:
    table = {}
    power = 1
    for k in range(1, order + 1):
        power = power * base % modulus
        table.setdefault(power, k)
    return table


def dlog_in_subgroup(base: FieldElement, elem, order: int) -> int:
    """Returns k in [1, order] with base^k = elem, from a cached power table."""
    if order > config.MAX_DLOG_ORDER:
        raise TooLarge(f"Power table for order {order} exceeds {config.MAX_DLOG_ORDER}")
    table = _power_table(base.modulus, base.value, order)
    k = table.get(int(elem) % base.modulus)
    if k is None:
        raise NotInSubgroup(f"{int(elem)} is not in the subgroup generated by {base.value}")
    return k
