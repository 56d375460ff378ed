# Functional-commitment scheme over sparse R1CS
# Setup -> (pp, pk, vk); Commit encodes A, B, C as Row/Col/Val polynomials over
# domain K and commits to them; structure proofs open those commitments so the
# verifier can check SLT (A, B) and DIAG (C) shape; execution proofs open a
# commitment to z over domain H at every position the constraint rows touch.
#
# Row_M(gamma^j) = omega^{r_j}, Col_M(gamma^j) = omega^{c_j}, Val_M(gamma^j) = v_j.
# Entry lists are padded to |K| with the sentinel (n_hat, 1, 0).

import hashlib
import logging
import struct
from dataclasses import dataclass

from common import config, poly_commit
from common.errors import ArityError, EncodingError, NotInSubgroup, RefuseToProve, TooLarge
from common.field import (FieldElement, Polynomial, SubgroupDomain, dlog_in_subgroup,
                          interpolate, next_power_of_two)
from common.poly_commit import Commitment, Opening
from common.protocol import ByteReader, pack_frames, unpack_frames
from common.r1cs import Assignment, R1CSInstance, SparseMatrix, is_satisfied
from common.verdict import ACCEPT, Verdict, reject

logger = logging.getLogger(__name__)

MATRIX_NAMES = ("A", "B", "C")
SLT = "SLT"
DIAG = "DIAG"
CLAIMS = {"A": SLT, "B": SLT, "C": DIAG}

# Wire-format kind tags
KIND_SLT = 0x01
KIND_DIAG = 0x02
KIND_EXEC = 0x03
_CLAIM_TAGS = {SLT: KIND_SLT, DIAG: KIND_DIAG}
_TAG_CLAIMS = {v: k for k, v in _CLAIM_TAGS.items()}


# === Keys ===

@dataclass(frozen=True)
class PublicParams:
    modulus: int
    H: SubgroupDomain
    K: SubgroupDomain
    security: int = config.DEFAULT_SECURITY

    @property
    def omega(self) -> FieldElement:
        return self.H.generator

    @property
    def gamma(self) -> FieldElement:
        return self.K.generator

    @property
    def n_hat(self) -> int:
        return self.H.order

    @property
    def m_hat(self) -> int:
        return self.K.order

    @classmethod
    def create(cls, modulus: int, n_hat: int, m_hat: int,
               security: int = config.DEFAULT_SECURITY) -> 'PublicParams':
        return cls(modulus,
                   SubgroupDomain.of_order(modulus, n_hat),
                   SubgroupDomain.of_order(modulus, m_hat),
                   security)

    def to_bytes(self) -> bytes:
        return struct.pack('!QIII', self.modulus, self.n_hat, self.m_hat, self.security)

    @classmethod
    def from_bytes(cls, data: bytes) -> 'PublicParams':
        reader = ByteReader(data)
        modulus, n_hat, m_hat, security = reader.u64(), reader.u32(), reader.u32(), reader.u32()
        reader.finish()
        if n_hat != next_power_of_two(n_hat) or m_hat != next_power_of_two(m_hat) or n_hat < 2:
            raise EncodingError("Domain orders must be powers of two")
        return cls.create(modulus, n_hat, m_hat, security)


@dataclass(frozen=True)
class MatrixEncoding:
    row: Polynomial
    col: Polynomial
    val: Polynomial

    def polynomials(self) -> tuple[Polynomial, Polynomial, Polynomial]:
        return (self.row, self.col, self.val)


@dataclass(frozen=True)
class ProvingKey:
    pp: PublicParams
    instance: R1CSInstance
    encodings: dict[str, MatrixEncoding]

    def to_bytes(self) -> bytes:
        return pack_frames([self.pp.to_bytes(), self.instance.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> 'ProvingKey':
        pp_bytes, inst_bytes = unpack_frames(data, expected=2)
        pp = PublicParams.from_bytes(pp_bytes)
        reader = ByteReader(inst_bytes)
        inst = R1CSInstance.read(reader)
        reader.finish()
        if inst.modulus != pp.modulus:
            raise EncodingError("Instance and parameters use different moduli")
        return _build_proving_key(pp, inst)


@dataclass(frozen=True)
class VerificationKey:
    """
    Matrix commitments plus the public layout of the instance.
    The digest binds parameters, layout and all nine commitments.
    """
    pp: PublicParams
    n: int
    num_inputs: int
    output_row: int
    commitments: dict[str, tuple[Commitment, Commitment, Commitment]]
    digest: bytes

    @property
    def num_public(self) -> int:
        return self.num_inputs + 1

    @property
    def public_positions(self) -> tuple[int, ...]:
        return tuple(range(2, self.num_inputs + 2)) + (self.output_row,)

    def _layout_bytes(self) -> bytes:
        return struct.pack('!III', self.n, self.num_inputs, self.output_row)

    def _commitment_bytes(self) -> bytes:
        return b''.join(c.to_bytes() for name in MATRIX_NAMES for c in self.commitments[name])

    def to_bytes(self) -> bytes:
        return pack_frames([self.pp.to_bytes(), self._layout_bytes(), self._commitment_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> 'VerificationKey':
        pp_bytes, layout, com_bytes = unpack_frames(data, expected=3)
        pp = PublicParams.from_bytes(pp_bytes)
        reader = ByteReader(layout)
        n, num_inputs, output_row = reader.u32(), reader.u32(), reader.u32()
        reader.finish()
        reader = ByteReader(com_bytes)
        commitments = {name: tuple(Commitment.read(reader) for _ in range(3)) for name in MATRIX_NAMES}
        reader.finish()
        return _make_vk(pp, n, num_inputs, output_row, commitments)


def _vk_digest(pp: PublicParams, layout: bytes, com_bytes: bytes) -> bytes:
    return hashlib.sha256(pp.to_bytes() + layout + com_bytes).digest()


def _make_vk(pp, n, num_inputs, output_row, commitments) -> VerificationKey:
    layout = struct.pack('!III', n, num_inputs, output_row)
    com_bytes = b''.join(c.to_bytes() for name in MATRIX_NAMES for c in commitments[name])
    return VerificationKey(pp, n, num_inputs, output_row, commitments,
                           _vk_digest(pp, layout, com_bytes))


# === Setup / Commit ===

def padded_entries(M: SparseMatrix, pp: PublicParams) -> list[tuple[int, int, FieldElement]]:
    entries = list(M.entries)
    if len(entries) > pp.m_hat:
        raise TooLarge(f"{len(entries)} entries exceed |K| = {pp.m_hat}")
    sentinel = (pp.n_hat, 1, FieldElement(0, pp.modulus))
    return entries + [sentinel] * (pp.m_hat - len(entries))


def encode_matrix(M: SparseMatrix, pp: PublicParams) -> MatrixEncoding:
    """Row/Col/Val polynomials over K for the padded entry list."""
    omega = pp.omega
    entries = padded_entries(M, pp)
    rows = [omega ** r for r, _, _ in entries]
    cols = [omega ** c for _, c, _ in entries]
    vals = [v for _, _, v in entries]
    return MatrixEncoding(interpolate(pp.K, rows), interpolate(pp.K, cols), interpolate(pp.K, vals))


def _build_proving_key(pp: PublicParams, inst: R1CSInstance) -> ProvingKey:
    encodings = {name: encode_matrix(M, pp) for name, M in inst.matrices().items()}
    return ProvingKey(pp, inst, encodings)


def commit_matrices(pk: ProvingKey) -> VerificationKey:
    commitments = {
        name: tuple(poly_commit.commit(poly, pk.pp.K) for poly in pk.encodings[name].polynomials())
        for name in MATRIX_NAMES
    }
    inst = pk.instance
    return _make_vk(pk.pp, inst.n, inst.num_inputs, inst.output_row, commitments)


def setup(security: int, inst: R1CSInstance,
          pp: PublicParams | None = None) -> tuple[PublicParams, ProvingKey, VerificationKey]:
    """
    Produces (pp, pk, vk). Passing 'pp' fixes the domains instead of deriving
    the smallest ones; they must still cover the instance.
    """
    if inst.n > config.MAX_CONSTRAINTS:
        raise TooLarge(f"n = {inst.n} exceeds the cap of {config.MAX_CONSTRAINTS}")

    if pp is None:
        n_hat = next_power_of_two(max(inst.n, 2))
        m_hat = next_power_of_two(max(inst.nnz_max, 1))
        pp = PublicParams.create(inst.modulus, n_hat, m_hat, security)
    elif pp.n_hat < inst.n or pp.m_hat < inst.nnz_max or pp.modulus != inst.modulus:
        raise TooLarge(f"Parameters (n_hat={pp.n_hat}, m_hat={pp.m_hat}) do not cover the instance")

    pk = _build_proving_key(pp, inst)
    vk = commit_matrices(pk)
    logger.debug(f"Setup: n={inst.n}, n_hat={pp.n_hat}, m_hat={pp.m_hat}, vk={vk.digest.hex()[:16]}")
    return pp, pk, vk


# === Structure proofs ===

@dataclass(frozen=True)
class StructureProof:
    """Row/Col/Val openings at every j in [1, |K|] for one matrix."""
    claim: str
    vk_digest: bytes
    openings: tuple[tuple[Opening, Opening, Opening], ...]

    def to_bytes(self) -> bytes:
        out = [bytes([_CLAIM_TAGS[self.claim]]), self.vk_digest, struct.pack('!I', len(self.openings))]
        for triple in self.openings:
            out.extend(o.to_bytes() for o in triple)
        return b''.join(out)

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int) -> 'StructureProof':
        reader = ByteReader(data)
        tag = reader.u8()
        if tag not in _TAG_CLAIMS:
            raise EncodingError(f"Unknown structure-proof tag {tag:#x}")
        digest = reader.read(32)
        count = reader.u32()
        if count > config.MAX_CONSTRAINTS * 4:
            raise EncodingError(f"Implausible opening count {count}")
        openings = tuple(tuple(Opening.read(reader, modulus) for _ in range(3)) for _ in range(count))
        reader.finish()
        return cls(_TAG_CLAIMS[tag], digest, openings)


def _open_entries(pk: ProvingKey, name: str) -> tuple[tuple[Opening, Opening, Opening], ...]:
    indices = list(range(1, pk.pp.m_hat + 1))
    per_poly = [poly_commit.open_many(poly, pk.pp.K, indices) for poly in pk.encodings[name].polynomials()]
    return tuple(zip(*per_poly))


def prove_structure(pk: ProvingKey, vk_digest: bytes | None = None) -> tuple[StructureProof, ...]:
    """Returns (pi_A, pi_B, pi_C)."""
    if vk_digest is None:
        vk_digest = commit_matrices(pk).digest
    return tuple(StructureProof(CLAIMS[name], vk_digest, _open_entries(pk, name)) for name in MATRIX_NAMES)


def _check_entry_openings(vk: VerificationKey, name: str, openings) -> tuple[Verdict, list]:
    """
    Authenticates the (Row, Col, Val) openings of one matrix and decodes them
    into (j, row, col, value) tuples.
    """
    pp = vk.pp
    if len(openings) != pp.m_hat:
        return reject("opening-count", name), []

    decoded = []
    for j, triple in enumerate(openings, start=1):
        for opening, com in zip(triple, vk.commitments[name]):
            if opening.index != j or com.domain_order != pp.m_hat:
                return reject("opening-index", name, j), []
            if not poly_commit.verify_opening(com, opening):
                return reject("opening", name, j), []
        row_open, col_open, val_open = triple
        try:
            r = dlog_in_subgroup(pp.omega, row_open.value, pp.n_hat)
            c = dlog_in_subgroup(pp.omega, col_open.value, pp.n_hat)
        except NotInSubgroup:
            return reject("not-in-H", name, j), []
        decoded.append((j, r, c, val_open.value))
    return ACCEPT, decoded


def verify_structure(vk: VerificationKey, pi_A: StructureProof, pi_B: StructureProof,
                     pi_C: StructureProof) -> Verdict:
    """
    Accepts iff every opening authenticates and A, B are strictly lower
    triangular while C is diagonal. Zero-valued (padding) entries are exempt.
    """
    for name, proof in zip(MATRIX_NAMES, (pi_A, pi_B, pi_C)):
        if proof.vk_digest != vk.digest:
            return reject("key-mismatch", name)
        if proof.claim != CLAIMS[name]:
            return reject("claim-kind", name)

        verdict, entries = _check_entry_openings(vk, name, proof.openings)
        if not verdict:
            return verdict

        for j, r, c, v in entries:
            if v.value == 0:
                continue
            if proof.claim == SLT and not r > c:
                return reject(SLT, name, j)
            if proof.claim == DIAG and r != c:
                return reject(DIAG, name, j)
    return ACCEPT


# === Execution proofs ===

@dataclass(frozen=True)
class ExecutionProof:
    """
    Commitment to z over H, openings at every index the rows touch plus the
    public positions, the authenticated matrix entries, and the claimed publics.
    """
    vk_digest: bytes
    z_commitment: Commitment
    z_openings: tuple[Opening, ...]
    entry_openings: dict[str, tuple[tuple[Opening, Opening, Opening], ...]]
    public: tuple[FieldElement, ...]

    @property
    def opened_indices(self) -> tuple[int, ...]:
        return tuple(o.index for o in self.z_openings)

    def to_bytes(self) -> bytes:
        out = [bytes([KIND_EXEC]), self.vk_digest, self.z_commitment.to_bytes(),
               struct.pack('!I', len(self.z_openings))]
        out.extend(o.to_bytes() for o in self.z_openings)
        for name in MATRIX_NAMES:
            triples = self.entry_openings[name]
            out.append(struct.pack('!I', len(triples)))
            for triple in triples:
                out.extend(o.to_bytes() for o in triple)
        out.append(struct.pack('!I', len(self.public)))
        out.extend(v.to_bytes() for v in self.public)
        return b''.join(out)

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int) -> 'ExecutionProof':
        reader = ByteReader(data)
        if reader.u8() != KIND_EXEC:
            raise EncodingError("Not an execution proof")
        digest = reader.read(32)
        z_com = Commitment.read(reader)

        def count():
            value = reader.u32()
            if value > config.MAX_CONSTRAINTS * 4:
                raise EncodingError(f"Implausible count {value}")
            return value

        z_openings = tuple(Opening.read(reader, modulus) for _ in range(count()))
        entries = {}
        for name in MATRIX_NAMES:
            entries[name] = tuple(tuple(Opening.read(reader, modulus) for _ in range(3))
                                  for _ in range(count()))
        public = tuple(FieldElement.from_bytes(reader.read(8), modulus) for _ in range(count()))
        reader.finish()
        return cls(digest, z_com, z_openings, entries, public)


def required_indices(inst: R1CSInstance) -> list[int]:
    """Every column any matrix row references, plus the public positions."""
    needed = {c for M in inst.matrices().values() for _, c, _ in M.entries}
    needed.update(inst.public_positions)
    return sorted(needed)


def prove_execution(pk: ProvingKey, z: Assignment, vk_digest: bytes | None = None) -> ExecutionProof:
    inst = pk.instance
    if not is_satisfied(inst, z):
        raise RefuseToProve("Assignment does not satisfy the instance")
    if z.at(1) != 1:
        raise RefuseToProve("Constant wire z[1] must be 1")
    if vk_digest is None:
        vk_digest = commit_matrices(pk).digest

    pp = pk.pp
    padded = list(z.z) + [FieldElement(0, pp.modulus)] * (pp.n_hat - inst.n)
    z_poly = interpolate(pp.H, padded)
    indices = required_indices(inst)

    return ExecutionProof(
        vk_digest=vk_digest,
        z_commitment=poly_commit.commit(z_poly, pp.H),
        z_openings=tuple(poly_commit.open_many(z_poly, pp.H, indices)),
        entry_openings={name: _open_entries(pk, name) for name in MATRIX_NAMES},
        public=z.public_values(inst),
    )


def verify_execution(vk: VerificationKey, inst_digest: bytes, eproof: ExecutionProof,
                     public) -> Verdict:
    """
    Accepts iff the proof is bound to this key, every opening authenticates,
    the claimed publics match both 'public' and the opened positions, and every
    constraint row holds on the opened values.
    """
    pp = vk.pp
    if inst_digest != vk.digest or eproof.vk_digest != vk.digest:
        return reject("key-mismatch")
    if eproof.z_commitment.domain_order != pp.n_hat:
        return reject("z-domain")

    # 1. Rebuild the constraint rows from authenticated entries
    rows: dict[int, dict[str, list[tuple[int, int]]]] = {}
    for name in MATRIX_NAMES:
        verdict, entries = _check_entry_openings(vk, name, eproof.entry_openings.get(name, ()))
        if not verdict:
            return verdict
        for j, r, c, v in entries:
            if v.value == 0:
                continue
            if not (1 <= r <= vk.n and 1 <= c <= vk.n):
                return reject("entry-range", name, j)
            rows.setdefault(r, {}).setdefault(name, []).append((c, v.value))

    # 2. Authenticate the z openings
    z_values: dict[int, int] = {}
    previous = 0
    for opening in eproof.z_openings:
        if opening.index <= previous or opening.index > vk.n:
            return reject("opening-order", index=opening.index)
        if not poly_commit.verify_opening(eproof.z_commitment, opening):
            return reject("opening", index=opening.index)
        z_values[opening.index] = opening.value.value
        previous = opening.index

    needed = {c for per_row in rows.values() for cols in per_row.values() for c, _ in cols}
    needed.update(vk.public_positions)
    missing = sorted(needed - z_values.keys())
    if missing:
        return reject("missing-opening", index=missing[0])
    if 1 in z_values and z_values[1] != 1:
        return reject("constant-wire", index=1)

    # 3. Public values
    public = tuple(public)
    if len(public) != vk.num_public or len(eproof.public) != vk.num_public:
        return reject("public-arity")
    for position, claimed, given in zip(vk.public_positions, eproof.public, public):
        if claimed != given or z_values[position] != claimed.value:
            return reject("public-mismatch", index=position)

    # 4. Row equations
    p = pp.modulus
    for r in sorted(rows):
        per_row = rows[r]
        a, b, c = (sum(v * z_values[col] for col, v in per_row.get(name, ())) % p
                   for name in MATRIX_NAMES)
        if a * b % p != c:
            return reject("row-equation", index=r)
    return ACCEPT


# === Bundles ===

@dataclass(frozen=True)
class ProofBundle:
    pi_A: StructureProof
    pi_B: StructureProof
    pi_C: StructureProof
    execution: ExecutionProof

    @property
    def structure(self) -> tuple[StructureProof, StructureProof, StructureProof]:
        return (self.pi_A, self.pi_B, self.pi_C)

    def to_bytes(self) -> bytes:
        return pack_frames([self.pi_A.to_bytes(), self.pi_B.to_bytes(), self.pi_C.to_bytes(),
                            self.execution.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int = config.DEFAULT_MODULUS) -> 'ProofBundle':
        a, b, c, e = unpack_frames(data, expected=4)
        return cls(StructureProof.from_bytes(a, modulus), StructureProof.from_bytes(b, modulus),
                   StructureProof.from_bytes(c, modulus), ExecutionProof.from_bytes(e, modulus))


def prove(pk: ProvingKey, z: Assignment, vk: VerificationKey | None = None) -> ProofBundle:
    digest = (vk or commit_matrices(pk)).digest
    pi_A, pi_B, pi_C = prove_structure(pk, digest)
    return ProofBundle(pi_A, pi_B, pi_C, prove_execution(pk, z, digest))


def verify(vk: VerificationKey, bundle: ProofBundle, public) -> Verdict:
    """Structure first, then execution."""
    verdict = verify_structure(vk, *bundle.structure)
    if not verdict:
        return verdict
    return verify_execution(vk, vk.digest, bundle.execution, public)


def verify_bytes(vk: VerificationKey, data: bytes, public) -> Verdict:
    """Decodes and verifies; undecodable bytes reject with reason 'encoding'."""
    try:
        bundle = ProofBundle.from_bytes(data, vk.pp.modulus)
    except (EncodingError, ArityError) as e:
        logger.debug(f"Proof bundle rejected at decode: {e}")
        return reject("encoding")
    return verify(vk, bundle, public)
