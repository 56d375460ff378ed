import random
from dataclasses import replace

import pytest

from common import fc_scheme
from common.errors import LinkError, SequenceError, UnknownKey, ZkIotError
from common.field import FieldElement
from common.pcd_chain import (ChainProof, ChainStep, decode_chain, encode_chain, extend_chain, relink,
                              verify_chain)
from common.r1cs import execute_program, program_output
from conftest import F17


def _step(square_prog, keys, index, x, link=None) -> ChainStep:
    _, pk, vk = keys
    z = execute_program(square_prog, [x], F17)
    return ChainStep(index=index, vk_digest=vk.digest, inputs=(FieldElement(x, F17),),
                     output=program_output(square_prog, z), proof=fc_scheme.prove(pk, z, vk),
                     link_position=link)


@pytest.fixture(scope="module")
def chain3(square_prog, square_keys):
    """x -> x^2 three times from x = 3: outputs 9, 13, 16."""
    chain = ChainProof()
    x = 3
    for index in (1, 2, 3):
        step = _step(square_prog, square_keys, index, x, None if index == 1 else 1)
        chain = extend_chain(chain, step)
        x = step.output.value
    return chain


@pytest.fixture(scope="module")
def registry(square_keys):
    vk = square_keys[2]
    return {vk.digest: vk}


def test_three_step_square_chain(chain3, registry):
    assert [s.output.value for s in chain3.steps] == [9, 13, 16]
    assert chain3.T == 3
    assert chain3.final_claim == 16
    assert verify_chain(chain3, registry)


def test_chain_matches_direct_recomputation(chain3, square_prog):
    x = chain3.steps[0].inputs[0].value
    for _ in range(chain3.T):
        x = program_output(square_prog, execute_program(square_prog, [x], F17)).value
    assert chain3.final_claim == x


def test_single_step_chain(square_prog, square_keys, registry):
    chain = extend_chain(ChainProof(), _step(square_prog, square_keys, 1, 5))
    assert chain.T == 1
    assert verify_chain(chain, registry, max_workers=1)


def test_extend_links_by_construction(chain3):
    one = ChainProof(chain3.steps[:1], chain3.steps[0].output)
    assert extend_chain(one, chain3.steps[1]).T == 2


def test_extend_rejects_wrong_link_value(square_prog, square_keys, chain3):
    one = ChainProof(chain3.steps[:1], chain3.steps[0].output)
    with pytest.raises(LinkError):
        extend_chain(one, _step(square_prog, square_keys, 2, 8, link=1))


def test_extend_rejects_index_gap(chain3):
    one = ChainProof(chain3.steps[:1], chain3.steps[0].output)
    with pytest.raises(SequenceError):
        extend_chain(one, replace(chain3.steps[1], index=3))


def test_first_step_cannot_link(chain3):
    with pytest.raises(LinkError):
        extend_chain(ChainProof(), relink(chain3.steps[0], 1))


def test_tampered_intermediate_output(chain3, registry):
    steps = list(chain3.steps)
    steps[1] = replace(steps[1], output=FieldElement(12, F17))
    verdict = verify_chain(ChainProof(tuple(steps), chain3.final_claim), registry)
    assert not verdict
    assert verdict.step in (2, 3)


def test_final_claim_must_match(chain3, registry):
    verdict = verify_chain(replace(chain3, final_claim=FieldElement(15, F17)), registry)
    assert (verdict.accepted, verdict.reason, verdict.step) == (False, "final-claim", 3)


def test_unknown_key(chain3):
    with pytest.raises(UnknownKey):
        verify_chain(chain3, {})


def test_empty_chain_rejected(registry):
    assert verify_chain(ChainProof(), registry).reason == "empty-chain"


def test_chain_file_decodes_to_equal_chain(chain3):
    data = encode_chain(chain3, F17)
    assert encode_chain(decode_chain(data), F17) == data


def _rejected(data: bytes, registry) -> bool:
    try:
        chain = decode_chain(data)
        return not verify_chain(chain, registry)
    except ZkIotError:
        return True


def test_single_byte_mutations_of_chain_file_rejected(chain3, registry):
    data = encode_chain(chain3, F17)
    assert not _rejected(data, registry)
    for position in random.Random(7).sample(range(len(data)), 150):
        mutated = bytearray(data)
        mutated[position] ^= 0x04
        assert _rejected(bytes(mutated), registry), f"mutation at byte {position} accepted"


def test_modulus_field_of_chain_file_is_bound(chain3, registry):
    data = bytearray(encode_chain(chain3, F17))
    # Header frame body starts after the frame count and its length prefix
    data[8] ^= 0x01
    assert _rejected(bytes(data), registry)
