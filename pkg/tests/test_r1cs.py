import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from common.errors import ArityError, NonCausalGate
from common.field import elements
from common.r1cs import (OP_MUL, Assignment, Gate, GateProgram, R1CSInstance, SparseMatrix, build_program,
                         execute_program, format_program, is_diagonal, is_satisfied,
                         is_strictly_lower_triangular, nonzero_entries, parse_program, program_output)
from conftest import F17, program_corpus


def test_square_program_matrices(square_prog):
    inst = build_program(square_prog, F17)
    assert inst.n == 3
    assert nonzero_entries(inst.A) == [(3, 2, 1)]
    assert nonzero_entries(inst.B) == [(3, 2, 1)]
    assert nonzero_entries(inst.C) == [(3, 3, 1)]
    assert inst.public_positions == (2, 3)


def test_empty_program():
    inst = build_program(GateProgram(num_inputs=1), F17)
    assert inst.n == 2
    assert inst.A.entries == inst.B.entries == inst.C.entries == ()


def test_product_program_matrices(product_prog):
    inst = build_program(product_prog, F17)
    assert inst.n == 4
    assert nonzero_entries(inst.A) == [(4, 2, 1)]
    assert nonzero_entries(inst.B) == [(4, 3, 1)]
    assert nonzero_entries(inst.C) == [(4, 4, 1)]


def test_linear_output_is_bound_on_its_own_row():
    prog = parse_program("inputs 2\nw3 = cmul 2 w1\nw4 = add w3 w2\noutput w4\n")
    inst = build_program(prog, F17)
    assert nonzero_entries(inst.A) == [(5, 2, 2), (5, 3, 1)]
    assert nonzero_entries(inst.B) == [(5, 1, 1)]
    assert nonzero_entries(inst.C) == [(5, 5, 1)]


def test_forward_reference_is_non_causal():
    prog = GateProgram(num_inputs=1, gates=(Gate(OP_MUL, 1, 2),), output=2)
    with pytest.raises(NonCausalGate):
        build_program(prog, F17)
    with pytest.raises(NonCausalGate):
        build_program(GateProgram(num_inputs=1, output=5), F17)


def test_is_satisfied_examples(square_inst):
    assert is_satisfied(square_inst, Assignment(elements([1, 3, 9], F17)))
    assert not is_satisfied(square_inst, Assignment(elements([1, 3, 10], F17)))
    with pytest.raises(ArityError):
        is_satisfied(square_inst, Assignment(elements([1, 3], F17)))


def test_empty_matrices_accept_anything():
    empty = SparseMatrix(3)
    inst = R1CSInstance(3, 1, 3, empty, empty, empty, F17)
    assert is_satisfied(inst, Assignment(elements([5, 6, 7], F17)))


def test_shape_oracles():
    assert is_strictly_lower_triangular(SparseMatrix.from_entries(3, [(3, 2, 1)], F17))
    assert not is_strictly_lower_triangular(SparseMatrix.from_entries(3, [(2, 2, 1)], F17))
    assert is_strictly_lower_triangular(SparseMatrix(3))
    assert is_diagonal(SparseMatrix.from_entries(3, [(3, 3, 1)], F17))
    assert not is_diagonal(SparseMatrix.from_entries(3, [(3, 2, 1)], F17))
    assert is_diagonal(SparseMatrix(3))


def test_nonzero_entries_sorted():
    M = SparseMatrix.from_entries(3, [(3, 1, 6), (2, 1, 5)], F17)
    assert nonzero_entries(M) == [(2, 1, 5), (3, 1, 6)]
    assert nonzero_entries(SparseMatrix(3)) == []


def test_from_entries_validation():
    with pytest.raises(ValueError):
        SparseMatrix.from_entries(3, [(4, 1, 1)], F17)
    with pytest.raises(ValueError):
        SparseMatrix.from_entries(3, [(2, 1, 1), (2, 1, 2)], F17)
    with pytest.raises(ValueError):
        SparseMatrix.from_entries(3, [(2, 1, 17)], F17)


@pytest.mark.parametrize("name, prog", program_corpus(), ids=[name for name, _ in program_corpus()])
def test_execution_satisfies_instance_for_every_input(name, prog):
    inst = build_program(prog, F17)
    for inputs in itertools.product(range(F17), repeat=prog.num_inputs):
        z = execute_program(prog, inputs, F17)
        assert is_satisfied(inst, z), f"{name} unsatisfied on {inputs}"


def _dense(M: SparseMatrix) -> np.ndarray:
    out = np.zeros((M.dim, M.dim), dtype=np.int64)
    for r, c, v in M.entries:
        out[r - 1, c - 1] = v.value
    return out


def test_is_satisfied_matches_dense_evaluation():
    rng = np.random.default_rng(2024)
    checked = 0
    for _, prog in program_corpus():
        inst = build_program(prog, F17)
        A, B, C = _dense(inst.A), _dense(inst.B), _dense(inst.C)
        for _ in range(200):
            z = rng.integers(0, F17, size=inst.n)
            z[0] = 1
            if rng.random() < 0.5:
                # Half of the samples start from an honest execution
                honest = execute_program(prog, rng.integers(0, F17, size=prog.num_inputs).tolist(), F17)
                z = np.array([v.value for v in honest.z], dtype=np.int64)
                if rng.random() < 0.5:
                    z[rng.integers(1, inst.n)] = rng.integers(0, F17)
            expected = bool(np.all((A @ z % F17) * (B @ z % F17) % F17 == C @ z % F17))
            assert is_satisfied(inst, Assignment(elements(z.tolist(), F17))) == expected
            checked += 1
    assert checked >= 1000


def test_program_output_reads_declared_wire(product_prog):
    z = execute_program(product_prog, [2, 5], F17)
    assert program_output(product_prog, z) == 10


def test_execute_arity(product_prog):
    with pytest.raises(ArityError):
        execute_program(product_prog, [1], F17)


@given(st.integers(), st.integers())
def test_product_executes_at_runtime_modulus(product_prog, a, b):
    inst = build_program(product_prog)
    z = execute_program(product_prog, [a, b])
    assert is_satisfied(inst, z)
    assert program_output(product_prog, z) == a * b


def test_text_format():
    prog = parse_program("# comment\ninputs 2\nw3 = add w1 w2  # sum\nw4 = cmul -3 w3\noutput w4\n")
    assert prog.gates == (Gate("add", 1, 2), Gate("cmul", 3, constant=-3))
    assert parse_program(format_program(prog)) == prog


@pytest.mark.parametrize("text", [
    "w2 = mul w1 w1\noutput w2\n",
    "inputs 1\nw3 = mul w1 w1\noutput w3\n",
    "inputs 1\nw2 = mul w1 w1\n",
    "inputs 1\nw2 = div w1 w1\noutput w2\n",
    "inputs 1\nw2 = mul w1 w1\noutput w2\nw3 = mul w2 w2\n",
])
def test_malformed_programs(text):
    with pytest.raises(ValueError):
        parse_program(text)
