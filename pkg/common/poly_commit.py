# Transparent polynomial commitment
# Commits to a polynomial's evaluations over a subgroup domain with a binary
# SHA-256 Merkle tree; individual points open with authentication paths.
#
# Leaf  = H(0x00 || 8-byte value)
# Pad   = 32 zero bytes (leaf count rounded up to a power of two)
# Node  = H(0x01 || left || right)

import hashlib
import logging
import struct
from dataclasses import dataclass

from common.errors import DegreeError, EncodingError, OpeningIndexError
from common.field import FieldElement, Polynomial, SubgroupDomain, evaluate_domain, next_power_of_two
from common.protocol import ByteReader

logger = logging.getLogger(__name__)

DIGEST_SIZE = 32
LEAF_PREFIX = b'\x00'
NODE_PREFIX = b'\x01'
EMPTY_LEAF = bytes(DIGEST_SIZE)


@dataclass(frozen=True)
class Commitment:
    root: bytes
    domain_order: int

    def to_bytes(self) -> bytes:
        return self.root + struct.pack('!I', self.domain_order)

    @classmethod
    def read(cls, reader: ByteReader) -> 'Commitment':
        root = reader.read(DIGEST_SIZE)
        order = reader.u32()
        return cls(root, order)


@dataclass(frozen=True)
class Opening:
    index: int
    value: FieldElement
    path: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        if len(self.path) > 255:
            raise EncodingError("Authentication path too long")
        return (struct.pack('!I', self.index) + self.value.to_bytes()
                + bytes([len(self.path)]) + b''.join(self.path))

    @classmethod
    def read(cls, reader: ByteReader, modulus: int) -> 'Opening':
        index = reader.u32()
        value = FieldElement.from_bytes(reader.read(8), modulus)
        length = reader.u8()
        path = tuple(reader.read(DIGEST_SIZE) for _ in range(length))
        return cls(index, value, path)


def leaf_digest(value: FieldElement) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + value.to_bytes()).digest()


def node_digest(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _evaluations(poly: Polynomial, domain: SubgroupDomain) -> list[FieldElement]:
    if poly.degree >= domain.order:
        raise DegreeError(f"Degree {poly.degree} does not fit a domain of order {domain.order}")
    return evaluate_domain(poly, domain)


def _tree_levels(values: list[FieldElement]) -> list[list[bytes]]:
    """All tree levels, leaves first, root level last."""
    leaves = [leaf_digest(v) for v in values]
    leaves += [EMPTY_LEAF] * (next_power_of_two(len(leaves)) - len(leaves))
    levels = [leaves]
    while len(levels[-1]) > 1:
        below = levels[-1]
        levels.append([node_digest(below[i], below[i + 1]) for i in range(0, len(below), 2)])
    return levels


def commit(poly: Polynomial, domain: SubgroupDomain) -> Commitment:
    levels = _tree_levels(_evaluations(poly, domain))
    return Commitment(root=levels[-1][0], domain_order=domain.order)


def open(poly: Polynomial, domain: SubgroupDomain, j: int) -> Opening:  # noqa: A001
    """Opens the commitment at g^j, 1 <= j <= order."""
    return open_many(poly, domain, [j])[0]


def open_many(poly: Polynomial, domain: SubgroupDomain, indices) -> list[Opening]:
    """Opens several points while building the tree only once."""
    for j in indices:
        if not 1 <= j <= domain.order:
            raise OpeningIndexError(f"Index {j} outside [1, {domain.order}]")
    values = _evaluations(poly, domain)
    levels = _tree_levels(values)

    openings = []
    for j in indices:
        path = []
        position = j - 1
        for level in levels[:-1]:
            path.append(level[position ^ 1])
            position //= 2
        openings.append(Opening(index=j, value=values[j - 1], path=tuple(path)))
    return openings


def path_length(domain_order: int) -> int:
    return (next_power_of_two(domain_order) - 1).bit_length()


def verify_opening(com: Commitment, opening: Opening) -> bool:
    """True iff the path recomputes the root from (index, value). Never raises."""
    if not 1 <= opening.index <= com.domain_order:
        return False
    if len(opening.path) != path_length(com.domain_order):
        return False

    digest = leaf_digest(opening.value)
    position = opening.index - 1
    for sibling in opening.path:
        if position % 2 == 0:
            digest = node_digest(digest, sibling)
        else:
            digest = node_digest(sibling, digest)
        position //= 2
    return digest == com.root
