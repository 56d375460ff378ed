# Sparse R1CS in normal form (A, B strictly lower triangular; C diagonal),
# the gate-program builder that produces it, and the brute-force oracles.
#
# Wire w<i> of a program maps to row/column i+1; w0 is the constant-one wire
# (row 1), w1..w<inputs> are the inputs, later wires are gate outputs.
# Add and cmul gates produce linear wires: they are folded into the linear
# combinations of whichever rows consume them and keep an empty row of their own.

import hashlib
import logging
import re
import struct
from dataclasses import dataclass, field
from typing import Sequence

from common.errors import ArityError, EncodingError, NonCausalGate
from common.field import DEFAULT_MODULUS, FieldElement
from common.protocol import ByteReader

logger = logging.getLogger(__name__)

OP_ADD = "add"
OP_MUL = "mul"
OP_CMUL = "cmul"
GATE_OPS = (OP_ADD, OP_MUL, OP_CMUL)


@dataclass(frozen=True)
class SparseMatrix:
    """n x n matrix as (row, col, value) entries, 1-based, sorted by (row, col)."""
    dim: int
    entries: tuple[tuple[int, int, FieldElement], ...] = ()

    @classmethod
    def from_entries(cls, dim: int, entries, modulus: int = DEFAULT_MODULUS) -> 'SparseMatrix':
        seen = set()
        cleaned = []
        for r, c, v in entries:
            v = v if isinstance(v, FieldElement) else FieldElement(v, modulus)
            if not (1 <= r <= dim and 1 <= c <= dim):
                raise ValueError(f"Entry ({r}, {c}) outside a {dim}x{dim} matrix")
            if (r, c) in seen:
                raise ValueError(f"Duplicate entry at ({r}, {c})")
            if v.value == 0:
                raise ValueError(f"Zero value stored at ({r}, {c})")
            seen.add((r, c))
            cleaned.append((r, c, v))
        cleaned.sort(key=lambda e: (e[0], e[1]))
        return cls(dim, tuple(cleaned))

    def row(self, r: int) -> list[tuple[int, FieldElement]]:
        return [(c, v) for (rr, c, v) in self.entries if rr == r]

    def to_bytes(self) -> bytes:
        """dim, entry count, then (r, c, v) as 4+4+8 big-endian bytes each."""
        out = [struct.pack('!II', self.dim, len(self.entries))]
        for r, c, v in self.entries:
            out.append(struct.pack('!II', r, c) + v.to_bytes())
        return b''.join(out)

    @classmethod
    def read(cls, reader: ByteReader, modulus: int) -> 'SparseMatrix':
        dim = reader.u32()
        count = reader.u32()
        entries = []
        for _ in range(count):
            r = reader.u32()
            c = reader.u32()
            entries.append((r, c, FieldElement.from_bytes(reader.read(8), modulus)))
        try:
            matrix = cls.from_entries(dim, entries, modulus)
        except ValueError as e:
            raise EncodingError(str(e)) from e
        if matrix.entries != tuple(entries):
            raise EncodingError("Matrix entries are not in canonical order")
        return matrix


def nonzero_entries(M: SparseMatrix) -> list[tuple[int, int, FieldElement]]:
    """Canonical (r, c)-sorted entry list."""
    return list(M.entries)


def is_strictly_lower_triangular(M: SparseMatrix) -> bool:
    return all(r > c for r, c, _ in M.entries)


def is_diagonal(M: SparseMatrix) -> bool:
    return all(r == c for r, c, _ in M.entries)


@dataclass(frozen=True)
class R1CSInstance:
    """
    (A z) o (B z) = C z over GF(modulus).

    n counts wires and constraint rows alike. Public positions are the input
    rows 2..num_inputs+1 followed by the declared output row.
    """
    n: int
    num_inputs: int
    output_row: int
    A: SparseMatrix
    B: SparseMatrix
    C: SparseMatrix
    modulus: int = DEFAULT_MODULUS

    @property
    def num_public(self) -> int:
        return self.num_inputs + 1

    @property
    def public_positions(self) -> tuple[int, ...]:
        return tuple(range(2, self.num_inputs + 2)) + (self.output_row,)

    @property
    def nnz_max(self) -> int:
        return max(len(self.A.entries), len(self.B.entries), len(self.C.entries))

    def matrices(self) -> dict[str, SparseMatrix]:
        return {"A": self.A, "B": self.B, "C": self.C}

    def to_bytes(self) -> bytes:
        header = struct.pack('!QIII', self.modulus, self.n, self.num_inputs, self.output_row)
        return header + self.A.to_bytes() + self.B.to_bytes() + self.C.to_bytes()

    @classmethod
    def read(cls, reader: ByteReader) -> 'R1CSInstance':
        modulus = reader.u64()
        n = reader.u32()
        num_inputs = reader.u32()
        output_row = reader.u32()
        A = SparseMatrix.read(reader, modulus)
        B = SparseMatrix.read(reader, modulus)
        C = SparseMatrix.read(reader, modulus)
        if not (num_inputs + 1 <= n and 1 <= output_row <= n):
            raise EncodingError("Instance layout out of range")
        if not (A.dim == B.dim == C.dim == n):
            raise EncodingError("Matrix dimensions disagree with n")
        return cls(n, num_inputs, output_row, A, B, C, modulus)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


@dataclass(frozen=True)
class Assignment:
    """z = (1, inputs..., gate wires...); public values read at the instance's public positions."""
    z: tuple[FieldElement, ...]

    def __len__(self):
        return len(self.z)

    def at(self, position: int) -> FieldElement:
        return self.z[position - 1]

    def public_values(self, inst: R1CSInstance) -> tuple[FieldElement, ...]:
        return tuple(self.at(k) for k in inst.public_positions)


@dataclass(frozen=True)
class Gate:
    op: str
    left: int
    right: int = 0
    constant: int = 0


@dataclass(frozen=True)
class GateProgram:
    num_inputs: int
    gates: tuple[Gate, ...] = field(default_factory=tuple)
    output: int = 1

    @property
    def num_wires(self) -> int:
        """Wire count including the constant wire w0."""
        return 1 + self.num_inputs + len(self.gates)


def _check_causal(prog: GateProgram):
    if prog.num_inputs < 0:
        raise ValueError("Negative input count")
    for position, gate in enumerate(prog.gates):
        wire = prog.num_inputs + 1 + position
        if gate.op not in GATE_OPS:
            raise ValueError(f"Unknown gate op '{gate.op}'")
        refs = [gate.left] if gate.op == OP_CMUL else [gate.left, gate.right]
        for ref in refs:
            if ref < 0 or ref >= wire:
                raise NonCausalGate(f"Gate w{wire} references w{ref}, which is not strictly earlier")
    if not (0 <= prog.output < prog.num_wires):
        raise NonCausalGate(f"Declared output w{prog.output} does not exist")


def build_program(prog: GateProgram, modulus: int = DEFAULT_MODULUS) -> R1CSInstance:
    """
    Compiles a straight-line program into an R1CS instance.

    Each mul gate on wire k yields row k+1 with A = lincomb(left),
    B = lincomb(right), C[k+1, k+1] = 1. Linear wires expand to their
    combination over the constant, input and mul wires.
    """
    _check_causal(prog)
    n = prog.num_wires

    # lincombs[w] maps column -> coefficient (as int mod p)
    lincombs: list[dict[int, int]] = [{1: 1}]
    for i in range(1, prog.num_inputs + 1):
        lincombs.append({i + 1: 1})

    a_entries, b_entries, c_entries = [], [], []

    def combine(*terms: tuple[int, dict[int, int]]) -> dict[int, int]:
        out: dict[int, int] = {}
        for scale, comb in terms:
            for col, coeff in comb.items():
                out[col] = (out.get(col, 0) + scale * coeff) % modulus
        return {col: coeff for col, coeff in out.items() if coeff}

    for position, gate in enumerate(prog.gates):
        wire = prog.num_inputs + 1 + position
        row = wire + 1
        if gate.op == OP_MUL:
            a_entries += [(row, col, coeff) for col, coeff in lincombs[gate.left].items()]
            b_entries += [(row, col, coeff) for col, coeff in lincombs[gate.right].items()]
            c_entries.append((row, row, 1))
            lincombs.append({row: 1})
        elif gate.op == OP_ADD:
            lincombs.append(combine((1, lincombs[gate.left]), (1, lincombs[gate.right])))
        else:
            lincombs.append(combine((gate.constant, lincombs[gate.left])))

    # An output on a linear wire is bound on that wire's own (otherwise empty) row
    output_row = prog.output + 1
    is_linear_output = (prog.output > prog.num_inputs
                        and prog.gates[prog.output - prog.num_inputs - 1].op != OP_MUL)
    if is_linear_output:
        a_entries += [(output_row, col, coeff) for col, coeff in lincombs[prog.output].items()]
        b_entries.append((output_row, 1, 1))
        c_entries.append((output_row, output_row, 1))

    inst = R1CSInstance(
        n=n,
        num_inputs=prog.num_inputs,
        output_row=output_row,
        A=SparseMatrix.from_entries(n, a_entries, modulus),
        B=SparseMatrix.from_entries(n, b_entries, modulus),
        C=SparseMatrix.from_entries(n, c_entries, modulus),
        modulus=modulus,
    )
    logger.debug(f"Built R1CS: n={n}, nnz A/B/C = {len(inst.A.entries)}/{len(inst.B.entries)}/{len(inst.C.entries)}")
    return inst


def execute_program(prog: GateProgram, inputs: Sequence, modulus: int = DEFAULT_MODULUS) -> Assignment:
    """Forward-executes the gates; returns the full wire assignment z."""
    _check_causal(prog)
    if len(inputs) != prog.num_inputs:
        raise ArityError(f"Program takes {prog.num_inputs} inputs, got {len(inputs)}")

    wires = [FieldElement(1, modulus)] + [FieldElement(int(x), modulus) for x in inputs]
    for gate in prog.gates:
        if gate.op == OP_MUL:
            wires.append(wires[gate.left] * wires[gate.right])
        elif gate.op == OP_ADD:
            wires.append(wires[gate.left] + wires[gate.right])
        else:
            wires.append(wires[gate.left] * gate.constant)
    return Assignment(tuple(wires))


def program_output(prog: GateProgram, z: Assignment) -> FieldElement:
    return z.at(prog.output + 1)


def is_satisfied(inst: R1CSInstance, z: Assignment) -> bool:
    """Row-by-row check of (A z) o (B z) = C z. This is the brute-force oracle."""
    if len(z) != inst.n:
        raise ArityError(f"Assignment has {len(z)} entries, instance needs {inst.n}")
    p = inst.modulus
    values = [v.value for v in z.z]
    for row in range(1, inst.n + 1):
        a = sum(v.value * values[c - 1] for c, v in inst.A.row(row)) % p
        b = sum(v.value * values[c - 1] for c, v in inst.B.row(row)) % p
        c = sum(v.value * values[col - 1] for col, v in inst.C.row(row)) % p
        if a * b % p != c:
            return False
    return True


# === GateProgram text format ===
# inputs <count>
# w<k> = mul w<i> w<j>
# w<k> = add w<i> w<j>
# w<k> = cmul <const> w<i>
# output w<k>

_GATE_RE = re.compile(r'^w(\d+)\s*=\s*(mul|add)\s+w(\d+)\s+w(\d+)$')
_CMUL_RE = re.compile(r'^w(\d+)\s*=\s*cmul\s+(-?\d+)\s+w(\d+)$')


def parse_program(text: str) -> GateProgram:
    """Parses the GateProgram text format. Raises ValueError with the line number."""
    num_inputs = None
    output = None
    gates = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if output is not None:
            raise ValueError(f"line {lineno}: content after 'output'")

        parts = line.split()
        if parts[0] == 'inputs':
            if num_inputs is not None or gates or len(parts) != 2 or not parts[1].isdigit():
                raise ValueError(f"line {lineno}: malformed 'inputs' header")
            num_inputs = int(parts[1])
            continue
        if num_inputs is None:
            raise ValueError(f"line {lineno}: missing 'inputs <count>' header")
        if parts[0] == 'output':
            if len(parts) != 2 or not re.fullmatch(r'w\d+', parts[1]):
                raise ValueError(f"line {lineno}: malformed 'output' footer")
            output = int(parts[1][1:])
            continue

        expected = num_inputs + 1 + len(gates)
        if m := _GATE_RE.match(line):
            wire, op, left, right = int(m.group(1)), m.group(2), int(m.group(3)), int(m.group(4))
            gate = Gate(op, left, right)
        elif m := _CMUL_RE.match(line):
            wire, constant, left = int(m.group(1)), int(m.group(2)), int(m.group(3))
            gate = Gate(OP_CMUL, left, constant=constant)
        else:
            raise ValueError(f"line {lineno}: cannot parse gate '{line}'")
        if wire != expected:
            raise ValueError(f"line {lineno}: expected wire w{expected}, found w{wire}")
        gates.append(gate)

    if num_inputs is None:
        raise ValueError("missing 'inputs <count>' header")
    if output is None:
        raise ValueError("missing 'output w<k>' footer")

    prog = GateProgram(num_inputs, tuple(gates), output)
    _check_causal(prog)
    return prog


def format_program(prog: GateProgram) -> str:
    lines = [f"inputs {prog.num_inputs}"]
    for position, gate in enumerate(prog.gates):
        wire = prog.num_inputs + 1 + position
        if gate.op == OP_CMUL:
            lines.append(f"w{wire} = cmul {gate.constant} w{gate.left}")
        else:
            lines.append(f"w{wire} = {gate.op} w{gate.left} w{gate.right}")
    lines.append(f"output w{prog.output}")
    return "\n".join(lines) + "\n"
