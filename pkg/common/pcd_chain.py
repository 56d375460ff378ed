# Proof-carrying data chains
# Step i carries its own (structure + execution) proofs; the output y_i of
# step i must reappear at a declared position of step i+1's public inputs.
# Chains verify step by step: proofs in parallel, linkage as a sequential fold.

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from common import config
from common.errors import EncodingError, LinkError, SequenceError, UnknownKey
from common.fc_scheme import ProofBundle, VerificationKey, verify
from common.field import FieldElement
from common.protocol import ByteReader, pack_frames, unpack_frames
from common.verdict import ACCEPT, Verdict, reject

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainStep:
    """
    One device's contribution. 'link_position' is the 1-based position in this
    step's inputs that receives the previous step's output (None on step 1).
    """
    index: int
    vk_digest: bytes
    inputs: tuple[FieldElement, ...]
    output: FieldElement
    proof: ProofBundle
    link_position: int | None = None

    @property
    def public(self) -> tuple[FieldElement, ...]:
        return self.inputs + (self.output,)

    def to_bytes(self) -> bytes:
        header = [struct.pack('!I', self.index), self.vk_digest,
                  struct.pack('!I', self.link_position or 0),
                  struct.pack('!I', len(self.inputs))]
        header.extend(x.to_bytes() for x in self.inputs)
        header.append(self.output.to_bytes())
        return pack_frames([b''.join(header), self.proof.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int) -> 'ChainStep':
        header, proof = unpack_frames(data, expected=2)
        reader = ByteReader(header)
        index = reader.u32()
        digest = reader.read(32)
        link = reader.u32()
        count = reader.u32()
        if count > config.MAX_CONSTRAINTS:
            raise EncodingError(f"Implausible input count {count}")
        inputs = tuple(FieldElement.from_bytes(reader.read(8), modulus) for _ in range(count))
        output = FieldElement.from_bytes(reader.read(8), modulus)
        reader.finish()
        return cls(index, digest, inputs, output, ProofBundle.from_bytes(proof, modulus), link or None)


@dataclass(frozen=True)
class ChainProof:
    steps: tuple[ChainStep, ...] = ()
    final_claim: FieldElement | None = None

    @property
    def T(self) -> int:
        return len(self.steps)


def _check_link(previous: ChainStep, step: ChainStep) -> str | None:
    """Returns a failure reason, or None when the link holds."""
    pos = step.link_position
    if pos is None or not 1 <= pos <= len(step.inputs):
        return "link-position"
    if step.inputs[pos - 1] != previous.output:
        return "link-value"
    return None


def extend_chain(chain: ChainProof, step: ChainStep) -> ChainProof:
    """Appends a step after checking index and linkage. No proof verification here."""
    if step.index != chain.T + 1:
        raise SequenceError(f"Expected step {chain.T + 1}, got {step.index}")
    if chain.steps:
        reason = _check_link(chain.steps[-1], step)
        if reason:
            raise LinkError(f"Step {step.index}: {reason}")
    elif step.link_position is not None:
        raise LinkError("Step 1 has no predecessor to link to")
    return ChainProof(chain.steps + (step,), step.output)


def _verify_step(step: ChainStep, vk: VerificationKey) -> Verdict:
    # Values decoded under another modulus carry the same integers
    if any(x.modulus != vk.pp.modulus for x in step.public):
        return reject("modulus")
    return verify(vk, step.proof, step.public)


def verify_chain(chain: ChainProof, registry: dict[bytes, VerificationKey],
                 max_workers: int | None = None) -> Verdict:
    # 1. Resolve every key before any work
    keys = []
    for step in chain.steps:
        vk = registry.get(step.vk_digest)
        if vk is None:
            raise UnknownKey(f"No verification key for step {step.index} ({step.vk_digest.hex()[:16]})")
        keys.append(vk)

    if not chain.steps:
        return reject("empty-chain")

    # 2. Per-step proofs are independent
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        verdicts = list(pool.map(_verify_step, chain.steps, keys))

    # 3. Sequential fold: index, proof, link
    previous = None
    for expected, (step, verdict) in enumerate(zip(chain.steps, verdicts), start=1):
        if step.index != expected:
            return reject("sequence", step=expected)
        if not verdict:
            return verdict._replace(step=step.index)
        if previous is not None:
            reason = _check_link(previous, step)
            if reason:
                return reject(reason, step=step.index)
        elif step.link_position is not None:
            return reject("link-position", step=1)
        previous = step

    if chain.final_claim != chain.steps[-1].output:
        return reject("final-claim", step=chain.T)
    logger.debug(f"Chain of {chain.T} steps verified, y_T = {chain.final_claim.value}")
    return ACCEPT


def build_step(bundle, index: int, link_position: int | None = None) -> ChainStep:
    """Turns a device data bundle into a chain step."""
    return ChainStep(index=index, vk_digest=bundle.vk_digest, inputs=tuple(bundle.inputs),
                     output=bundle.output, proof=bundle.proof, link_position=link_position)


def relink(step: ChainStep, link_position: int | None) -> ChainStep:
    return replace(step, link_position=link_position)


# === Chain file ===
# frame 0: modulus (8) || T (4) || final claim (8); frames 1..T: step encodings

def encode_chain(chain: ChainProof, modulus: int) -> bytes:
    claim = chain.final_claim if chain.final_claim is not None else FieldElement(0, modulus)
    meta = struct.pack('!QI', modulus, chain.T) + claim.to_bytes()
    return pack_frames([meta] + [step.to_bytes() for step in chain.steps])


def decode_chain(data: bytes) -> ChainProof:
    frames = unpack_frames(data)
    if not frames:
        raise EncodingError("Chain file has no header frame")
    reader = ByteReader(frames[0])
    modulus = reader.u64()
    count = reader.u32()
    claim = FieldElement.from_bytes(reader.read(8), modulus)
    reader.finish()
    if count != len(frames) - 1:
        raise EncodingError(f"Header declares {count} steps, file has {len(frames) - 1}")
    steps = tuple(ChainStep.from_bytes(f, modulus) for f in frames[1:])
    return ChainProof(steps, claim if steps else None)
