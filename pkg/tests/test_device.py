import pytest

from common import fc_scheme
from common.errors import ArityError, EncodingError, RangeError
from common.field import elements
from common.r1cs import GateProgram
from device.zk_device import (SensorReading, decode_bundle, emit_bundle, encode_bundle, encode_reading,
                              execute_firmware, load_firmware, metadata_digest, provision,
                              rogue_verification_key, sample_inputs)
from conftest import F17

SEATTLE = [47610000, -122330000]


@pytest.fixture(scope="module")
def square_device(square_prog):
    return provision("sq-1", "Square", square_prog, F17, binds_metadata=False)


@pytest.fixture(scope="module")
def product_device(product_prog):
    return provision("px-1", "Product", product_prog, F17, binds_metadata=False)


@pytest.fixture(scope="module")
def tesla():
    script = (SensorReading("collision", 0, 0), SensorReading("timestamp", 1712000000, 0),
              SensorReading("collision", 1, 4))
    return provision("tesla-a", "Tesla", load_firmware("road_report.prog"),
                     inputs=("collision", "timestamp"), gps=tuple(SEATTLE), script=script)


def test_encode_reading():
    assert encode_reading(SensorReading("temperature", 2150), 1) == 2150
    assert encode_reading(SensorReading("temperature", 0), 1) == 0
    assert encode_reading(SensorReading("temperature", -100), 1, F17) == -100 % F17


def test_encode_reading_overflow():
    with pytest.raises(RangeError):
        encode_reading(SensorReading("pressure", 9), 2, F17)
    with pytest.raises(RangeError):
        encode_reading(SensorReading("temperature", 20000), 1)


def test_execute_firmware(square_device, product_device):
    y, z = execute_firmware(square_device, elements([3], F17))
    assert y == 9
    assert z.z == elements([1, 3, 9], F17)
    assert execute_firmware(product_device, elements([2, 5], F17))[0] == 10
    with pytest.raises(ArityError):
        execute_firmware(product_device, elements([2], F17))


def test_honest_bundle_verifies(square_device):
    bundle = emit_bundle(square_device, [3], {})
    assert bundle.output == 9
    assert bundle.vk_digest == square_device.vk.digest
    assert fc_scheme.verify_bytes(square_device.vk, bundle.proof_bytes, bundle.public)


def test_forged_output_rejected(square_device):
    bundle = emit_bundle(square_device, [3], {}, tamper="forge-output")
    assert bundle.output == 10
    verdict = fc_scheme.verify_bytes(square_device.vk, bundle.proof_bytes, bundle.public)
    assert verdict.reason == "public-mismatch"


def test_corrupted_proof_rejected(square_device):
    bundle = emit_bundle(square_device, [3], {}, tamper="corrupt-proof")
    assert fc_scheme.verify_bytes(square_device.vk, bundle.proof_bytes, bundle.public).reason == "opening"


def test_swapped_firmware_rejected_under_registered_key(square_device):
    bundle = emit_bundle(square_device, [3], {}, tamper="firmware-swap")
    assert bundle.vk_digest == square_device.vk.digest
    assert not fc_scheme.verify_bytes(square_device.vk, bundle.proof_bytes, bundle.public)


def test_rogue_key_bundle_is_self_consistent(square_device):
    bundle = emit_bundle(square_device, [3], {}, tamper="rogue-vk")
    rogue = rogue_verification_key(square_device)
    assert bundle.vk_digest == rogue.digest != square_device.vk.digest
    assert fc_scheme.verify_bytes(rogue, bundle.proof_bytes, bundle.public)


def test_metadata_is_bound_into_publics(tesla):
    bundle = emit_bundle(tesla, sample_inputs(tesla, 5), {"gps": SEATTLE})
    assert bundle.input_names == ("collision", "timestamp", "meta")
    assert bundle.metadata["device_type"] == "Tesla"
    assert bundle.metadata_value == metadata_digest(bundle.metadata)
    assert bundle.output == 1712000000
    assert fc_scheme.verify_bytes(tesla.vk, bundle.proof_bytes, bundle.public)


def test_sensor_script_uses_latest_reading(tesla):
    assert [x.value for x in sample_inputs(tesla, 0)] == [0, 1712000000]
    assert [x.value for x in sample_inputs(tesla, 4)] == [1, 1712000000]


def test_missing_reading(square_prog):
    dev = provision("empty", "Square", square_prog, F17, inputs=("temperature",), binds_metadata=False)
    with pytest.raises(RangeError):
        sample_inputs(dev, 0)


def test_provision_needs_metadata_slot():
    with pytest.raises(ArityError):
        provision("none", "X", GateProgram(num_inputs=0, output=0), F17)


def test_bundle_codec(tesla):
    bundle = emit_bundle(tesla, sample_inputs(tesla, 0), {"gps": SEATTLE, "tick": 0})
    data = encode_bundle(bundle)
    assert decode_bundle(data) == bundle
    assert decode_bundle(data).digest() == bundle.digest()
    with pytest.raises(EncodingError):
        decode_bundle(data[:-1])
