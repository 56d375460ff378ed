import itertools
import random
from dataclasses import replace

import pytest

from common import fc_scheme
from common.errors import RefuseToProve, TooLarge
from common.fc_scheme import ProofBundle, PublicParams, VerificationKey
from common.field import FieldElement, Polynomial, elements
from common.r1cs import (Assignment, GateProgram, R1CSInstance, SparseMatrix, build_program, execute_program,
                         is_diagonal, is_strictly_lower_triangular)
from conftest import F17, program_corpus

# omega = 2 needs |H| = 8 in F17; |K| = 1 keeps every encoding constant
PP_8_1 = PublicParams.create(F17, 8, 1)


def _instance(n, A=(), B=(), C=(), num_inputs=1, output_row=None):
    return R1CSInstance(n, num_inputs, output_row or n,
                        SparseMatrix.from_entries(n, A, F17),
                        SparseMatrix.from_entries(n, B, F17),
                        SparseMatrix.from_entries(n, C, F17), F17)


def _const(value):
    return Polynomial.from_ints([value], F17)


class TestSetup:
    def test_square_padding(self, square_keys):
        pp, pk, vk = square_keys
        assert (pp.n_hat, pp.m_hat) == (4, 1)
        assert pp.K.generator == 1
        assert pp.H.order == 4

    def test_m_hat_is_next_power_of_two(self):
        inst = _instance(4, A=[(2, 1, 1), (3, 1, 1), (4, 1, 1)])
        pp, _, _ = fc_scheme.setup(128, inst)
        assert pp.m_hat == 4

    def test_parameters_must_cover_instance(self, square_inst):
        with pytest.raises(TooLarge):
            fc_scheme.setup(128, square_inst, pp=PublicParams.create(F17, 2, 1))

    def test_key_bytes_decode_to_same_digest(self, square_keys):
        _, pk, vk = square_keys
        assert VerificationKey.from_bytes(vk.to_bytes()).digest == vk.digest
        assert fc_scheme.ProvingKey.from_bytes(pk.to_bytes()).instance == pk.instance


class TestEncodeMatrix:
    def test_single_entry(self, square_inst):
        assert PP_8_1.omega == 2
        enc = fc_scheme.encode_matrix(square_inst.A, PP_8_1)
        assert (enc.row, enc.col, enc.val) == (_const(8), _const(4), _const(1))

    def test_empty_matrix_is_sentinel(self):
        enc = fc_scheme.encode_matrix(SparseMatrix(3), PP_8_1)
        assert (enc.row, enc.col) == (_const(1), _const(2))
        assert enc.val.is_zero()

    def test_diagonal_encodes_equal_row_and_col(self, square_inst):
        enc = fc_scheme.encode_matrix(square_inst.C, PP_8_1)
        assert enc.row == enc.col == _const(8)


class TestCommit:
    def test_square_has_nine_order_one_commitments(self, square_keys):
        _, _, vk = square_keys
        coms = [c for name in fc_scheme.MATRIX_NAMES for c in vk.commitments[name]]
        assert len(coms) == 9
        assert all(c.domain_order == 1 for c in coms)

    def test_one_value_changes_digest(self, square_keys):
        _, _, vk = square_keys
        other = _instance(3, A=[(3, 2, 2)], B=[(3, 2, 1)], C=[(3, 3, 1)], output_row=3)
        assert fc_scheme.setup(128, other)[2].digest != vk.digest

    def test_recommit_is_deterministic(self, square_keys):
        _, pk, vk = square_keys
        assert fc_scheme.commit_matrices(pk).digest == vk.digest


class TestStructure:
    def test_square_opening_values(self, square_inst):
        _, pk, vk = fc_scheme.setup(128, square_inst, pp=PP_8_1)
        pi_A, _, _ = fc_scheme.prove_structure(pk, vk.digest)
        assert len(pi_A.openings) == 1
        row, col, _ = pi_A.openings[0]
        assert (row.value, col.value) == (8, 4)

    def test_empty_matrix_opens_sentinel(self):
        _, pk, vk = fc_scheme.setup(128, build_program(GateProgram(num_inputs=1), F17), pp=PP_8_1)
        pi_A, _, _ = fc_scheme.prove_structure(pk, vk.digest)
        row, col, val = pi_A.openings[0]
        assert (row.value, col.value, val.value) == (1, 2, 0)

    def test_honest_accept(self, square_keys):
        _, pk, vk = square_keys
        assert fc_scheme.verify_structure(vk, *fc_scheme.prove_structure(pk, vk.digest))

    def test_upper_entry_in_A_rejected(self):
        inst = _instance(3, A=[(2, 3, 1)], B=[(3, 2, 1)], C=[(3, 3, 1)])
        _, pk, vk = fc_scheme.setup(128, inst)
        verdict = fc_scheme.verify_structure(vk, *fc_scheme.prove_structure(pk, vk.digest))
        assert not verdict
        assert (verdict.matrix, verdict.index, verdict.reason) == ("A", 1, "SLT")

    def test_off_diagonal_C_rejected(self):
        inst = _instance(3, A=[(3, 2, 1)], B=[(3, 2, 1)], C=[(3, 2, 1)])
        _, pk, vk = fc_scheme.setup(128, inst)
        verdict = fc_scheme.verify_structure(vk, *fc_scheme.prove_structure(pk, vk.digest))
        assert (verdict.accepted, verdict.matrix, verdict.index, verdict.reason) == (False, "C", 1, "DIAG")
        assert verdict.describe() == "reject(C, j=1, DIAG)"

    def test_proofs_for_another_key_rejected(self, square_keys, product_prog):
        _, pk, _ = square_keys
        _, _, other_vk = fc_scheme.setup(128, build_program(product_prog, F17))
        verdict = fc_scheme.verify_structure(other_vk, *fc_scheme.prove_structure(pk))
        assert verdict.reason == "key-mismatch"

    def test_every_single_entry_4x4_matrix(self):
        pp = PublicParams.create(F17, 4, 1)
        cells = list(itertools.product(range(1, 5), range(1, 5), range(1, F17)))
        for name in fc_scheme.MATRIX_NAMES:
            for r, c, v in cells:
                inst = _instance(4, **{name: [(r, c, v)]})
                _, pk, vk = fc_scheme.setup(128, inst, pp=pp)
                verdict = fc_scheme.verify_structure(vk, *fc_scheme.prove_structure(pk, vk.digest))
                oracle = (is_strictly_lower_triangular(inst.A) and is_strictly_lower_triangular(inst.B)
                          and is_diagonal(inst.C))
                assert bool(verdict) == oracle, f"{name}[{r},{c}] = {v}: {verdict.describe()}"


class TestExecution:
    def test_opened_positions(self, square_keys):
        _, pk, vk = square_keys
        eproof = fc_scheme.prove_execution(pk, Assignment(elements([1, 3, 9], F17)), vk.digest)
        assert eproof.opened_indices == (2, 3)

    def test_empty_instance_opens_publics_only(self):
        _, pk, vk = fc_scheme.setup(128, build_program(GateProgram(num_inputs=1), F17))
        eproof = fc_scheme.prove_execution(pk, Assignment(elements([1, 4], F17)), vk.digest)
        assert eproof.opened_indices == (2,)
        assert fc_scheme.verify_execution(vk, vk.digest, eproof, elements([4, 4], F17))

    def test_refuses_unsatisfied(self, square_keys):
        _, pk, _ = square_keys
        with pytest.raises(RefuseToProve):
            fc_scheme.prove_execution(pk, Assignment(elements([1, 3, 10], F17)))

    def test_verify_examples(self, square_keys):
        _, pk, vk = square_keys
        eproof = fc_scheme.prove_execution(pk, Assignment(elements([1, 3, 9], F17)), vk.digest)
        assert fc_scheme.verify_execution(vk, vk.digest, eproof, elements([3, 9], F17))

        verdict = fc_scheme.verify_execution(vk, vk.digest, eproof, elements([3, 10], F17))
        assert verdict.reason == "public-mismatch"

        opened = eproof.z_openings[0]
        forged = replace(eproof, z_openings=(replace(opened, value=opened.value + 1),) + eproof.z_openings[1:])
        assert fc_scheme.verify_execution(vk, vk.digest, forged, elements([3, 9], F17)).reason == "opening"

    def test_wrong_instance_digest(self, square_keys):
        _, pk, vk = square_keys
        eproof = fc_scheme.prove_execution(pk, Assignment(elements([1, 3, 9], F17)), vk.digest)
        assert fc_scheme.verify_execution(vk, bytes(32), eproof, elements([3, 9], F17)).reason == "key-mismatch"


@pytest.mark.parametrize("name, prog", program_corpus(), ids=[name for name, _ in program_corpus()])
def test_completeness(name, prog):
    _, pk, vk = fc_scheme.setup(128, build_program(prog, F17))
    all_inputs = list(itertools.product(range(F17), repeat=prog.num_inputs))
    for inputs in random.Random(name).sample(all_inputs, min(25, len(all_inputs))):
        z = execute_program(prog, inputs, F17)
        bundle = fc_scheme.prove(pk, z, vk)
        public = z.public_values(pk.instance)
        assert fc_scheme.verify(vk, bundle, public), f"{name} on {inputs}"
        assert fc_scheme.verify_bytes(vk, bundle.to_bytes(), public)


def test_runtime_modulus_round(product_prog):
    inst = build_program(product_prog)
    _, pk, vk = fc_scheme.setup(128, inst)
    z = execute_program(product_prog, [123456789, 987654321])
    data = fc_scheme.prove(pk, z, vk).to_bytes()
    public = z.public_values(inst)
    assert fc_scheme.verify_bytes(vk, data, public)
    assert ProofBundle.from_bytes(data).to_bytes() == data


def test_single_byte_flips_are_rejected(product_prog):
    inst = build_program(product_prog, F17)
    _, pk, vk = fc_scheme.setup(128, inst)
    z = execute_program(product_prog, [2, 5], F17)
    data = fc_scheme.prove(pk, z, vk).to_bytes()
    public = z.public_values(inst)
    assert fc_scheme.verify_bytes(vk, data, public)

    positions = random.Random(0).sample(range(len(data)), 200)
    for position in positions:
        mutated = bytearray(data)
        mutated[position] ^= 0x01
        verdict = fc_scheme.verify_bytes(vk, bytes(mutated), public)
        assert not verdict, f"flip at byte {position} accepted"


def test_public_values_must_match(square_keys):
    _, pk, vk = square_keys
    bundle = fc_scheme.prove(pk, Assignment(elements([1, 4, 16], F17)), vk)
    assert fc_scheme.verify(vk, bundle, (FieldElement(4, F17), FieldElement(16, F17)))
    assert not fc_scheme.verify(vk, bundle, (FieldElement(4, F17),))
