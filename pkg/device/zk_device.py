# Simulated zk-Device
# Digital boundary of an IoT board: scripted post-ADC sensor readings are
# encoded into the field, fed to the manufacturer's firmware (a GateProgram),
# and every output leaves the device together with its proof bundle.
#
# The firmware's last input is always the metadata slot: a digest of the
# metadata map, so contract guards only ever act on proof-bound data.

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace

from common import config, fc_scheme
from common.errors import ArityError, EncodingError, RangeError
from common.fc_scheme import ProofBundle, ProvingKey, VerificationKey
from common.field import FieldElement
from common.protocol import ByteReader, pack_frames, unpack_frames
from common.r1cs import (OP_MUL, Assignment, Gate, GateProgram, R1CSInstance, build_program, execute_program,
                         is_satisfied, parse_program, program_output)

logger = logging.getLogger(__name__)

FIRMWARE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'firmware')

# Tamper directives
TAMPER_NONE = None
TAMPER_FORGE_OUTPUT = "forge-output"
TAMPER_CORRUPT_PROOF = "corrupt-proof"
TAMPER_FIRMWARE_SWAP = "firmware-swap"
TAMPER_ROGUE_VK = "rogue-vk"
TAMPER_REPLAY_METADATA = "replay-metadata"
TAMPER_MODES = (TAMPER_FORGE_OUTPUT, TAMPER_CORRUPT_PROOF, TAMPER_FIRMWARE_SWAP,
                TAMPER_ROGUE_VK, TAMPER_REPLAY_METADATA)


@dataclass(frozen=True)
class SensorChannel:
    """Declared post-ADC range of one channel (inclusive) and its fixed-point scale."""
    name: str
    minimum: int
    maximum: int
    scale: int = 1
    unit: str = ""


# Multi-sensor board channels
CHANNELS = {
    "temperature": SensorChannel("temperature", -4000, 12500, 1, "centi-degC"),
    "hygrometer": SensorChannel("hygrometer", 0, 10000, 1, "centi-%RH"),
    "motion": SensorChannel("motion", 0, 1),
    "button": SensorChannel("button", 0, 1),
    "collision": SensorChannel("collision", 0, 1),
    "timestamp": SensorChannel("timestamp", 0, 2**40, 1, "s"),
}


@dataclass(frozen=True)
class SensorReading:
    channel: str
    raw: int
    tick: int = 0


def encode_reading(reading: SensorReading, scale: int = 1, modulus: int = config.DEFAULT_MODULUS) -> FieldElement:
    """Fixed-point field encoding raw * scale mod p."""
    channel = CHANNELS.get(reading.channel)
    if channel is not None and not channel.minimum <= reading.raw <= channel.maximum:
        raise RangeError(f"{reading.channel} reading {reading.raw} outside "
                         f"[{channel.minimum}, {channel.maximum}]")
    scaled = reading.raw * scale
    if abs(scaled) >= modulus:
        raise RangeError(f"Scaled reading {scaled} does not fit GF({modulus})")
    return FieldElement(scaled, modulus)


def metadata_digest(metadata: dict, modulus: int = config.DEFAULT_MODULUS) -> FieldElement:
    """First 8 bytes of SHA-256 over canonical JSON, reduced mod p."""
    canonical = json.dumps(metadata, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return FieldElement(int.from_bytes(hashlib.sha256(canonical).digest()[:8], 'big'), modulus)


def load_firmware(path: str, base_dir: str | None = None) -> GateProgram:
    """
    Reads a .prog file. Relative paths are tried against base_dir first; bare
    names then fall back to the bundled firmware directory. Raises OSError for
    an unreadable file and ValueError for a malformed program.
    """
    if base_dir is not None and not os.path.isabs(path) and os.path.exists(os.path.join(base_dir, path)):
        path = os.path.join(base_dir, path)
    elif not os.path.exists(path) and not os.path.dirname(path):
        path = os.path.join(FIRMWARE_DIR, path)
    with open(path, 'r', encoding='utf-8') as f:
        return parse_program(f.read())


@dataclass(frozen=True)
class DeviceIdentity:
    device_id: str
    device_type: str
    vk_digest: bytes
    firmware: GateProgram


@dataclass
class ZkDevice:
    """
    A provisioned device: identity, keys and its sensor script.
    'inputs' names the channels feeding firmware inputs 1..m-1; input m is
    the metadata slot.
    """
    identity: DeviceIdentity
    instance: R1CSInstance
    pk: ProvingKey
    vk: VerificationKey
    inputs: tuple[str, ...] = ()
    gps: tuple[int, int] = (0, 0)
    script: tuple[SensorReading, ...] = ()
    tamper: str | None = None
    modulus: int = config.DEFAULT_MODULUS
    binds_metadata: bool = True
    # Keys for tamper modes that prove under a different circuit
    _rogue: tuple | None = field(default=None, repr=False)

    @property
    def device_id(self) -> str:
        return self.identity.device_id

    def read_sensors(self, tick: int) -> dict[str, SensorReading]:
        """Latest scripted reading per channel at or before 'tick'."""
        latest = {}
        for reading in sorted(self.script, key=lambda r: r.tick):
            if reading.tick <= tick:
                latest[reading.channel] = reading
        return latest


def provision(device_id: str, device_type: str, firmware: GateProgram,
              modulus: int = config.DEFAULT_MODULUS, security: int = config.DEFAULT_SECURITY,
              **kwargs) -> ZkDevice:
    """Runs setup for the firmware and returns a device bound to its vk."""
    if kwargs.get("binds_metadata", True) and firmware.num_inputs < 1:
        raise ArityError("Device firmware needs at least the metadata input")
    inst = build_program(firmware, modulus)
    _, pk, vk = fc_scheme.setup(security, inst)
    identity = DeviceIdentity(device_id, device_type, vk.digest, firmware)
    logger.info(f"Provisioned {device_id} ({device_type}), vk {vk.digest.hex()[:16]}")
    return ZkDevice(identity, inst, pk, vk, modulus=modulus, **kwargs)


def execute_firmware(dev: ZkDevice, inputs) -> tuple[FieldElement, Assignment]:
    firmware = dev.identity.firmware
    if len(inputs) != firmware.num_inputs:
        raise ArityError(f"{dev.device_id} firmware takes {firmware.num_inputs} inputs, got {len(inputs)}")
    z = execute_program(firmware, inputs, dev.modulus)
    if not is_satisfied(dev.instance, z):
        raise AssertionError(f"{dev.device_id}: forward execution does not satisfy its own instance")
    return program_output(firmware, z), z


@dataclass(frozen=True)
class DataBundle:
    producer: str
    device_type: str
    input_names: tuple[str, ...]
    inputs: tuple[FieldElement, ...]
    output: FieldElement
    metadata: dict
    proof_bytes: bytes
    vk_digest: bytes
    modulus: int = config.DEFAULT_MODULUS

    @property
    def public(self) -> tuple[FieldElement, ...]:
        return self.inputs + (self.output,)

    @property
    def proof(self) -> ProofBundle:
        return ProofBundle.from_bytes(self.proof_bytes, self.modulus)

    @property
    def metadata_value(self) -> FieldElement:
        """The proof-bound metadata slot (last input)."""
        return self.inputs[-1]

    def fields(self) -> dict:
        """Bundle fields visible to contracts: metadata, named inputs, output."""
        out = dict(self.metadata)
        for name, value in zip(self.input_names, self.inputs):
            out[name] = value.value
        out["output"] = self.output.value
        return out

    def digest(self) -> bytes:
        return hashlib.sha256(encode_bundle(self)).digest()


def emit_bundle(dev: ZkDevice, inputs, metadata: dict, tamper: str | None = None,
                input_names: tuple[str, ...] | None = None) -> DataBundle:
    """
    Executes the firmware on 'inputs' (plus the metadata slot when the device binds one), proves, and
    packages the result. 'tamper' (or the device's own directive) models an
    adversary between firmware and radio.
    """
    tamper = tamper or dev.tamper
    metadata = dict(metadata)
    metadata.setdefault("device_type", dev.identity.device_type)
    full_inputs = [FieldElement(int(x), dev.modulus) for x in inputs]
    if dev.binds_metadata:
        full_inputs.append(metadata_digest(metadata, dev.modulus))

    firmware, pk, vk = dev.identity.firmware, dev.pk, dev.vk
    if tamper in (TAMPER_FIRMWARE_SWAP, TAMPER_ROGUE_VK):
        firmware, pk, vk = _rogue_keys(dev)

    z = execute_program(firmware, full_inputs, dev.modulus)
    y = program_output(firmware, z)
    bundle = fc_scheme.prove(pk, z, vk)
    proof_bytes = bundle.to_bytes()
    vk_digest = vk.digest

    if tamper == TAMPER_FORGE_OUTPUT:
        y = y + 1
    elif tamper == TAMPER_CORRUPT_PROOF:
        # First byte of the z commitment root: still decodable, never authenticates
        offset = len(proof_bytes) - len(bundle.execution.to_bytes()) + 1 + 32
        proof_bytes = proof_bytes[:offset] + bytes([proof_bytes[offset] ^ 0x5A]) + proof_bytes[offset + 1:]
    elif tamper == TAMPER_FIRMWARE_SWAP:
        # Swapped firmware, but the bundle still claims the registered key
        vk_digest = dev.vk.digest
    elif tamper == TAMPER_REPLAY_METADATA:
        metadata = {**metadata, "replayed": True}

    meta_name = ("meta",) if dev.binds_metadata else ()
    names = tuple(input_names or dev.inputs) + meta_name
    if len(names) != len(full_inputs):
        names = tuple(f"x{i}" for i in range(1, len(full_inputs) - len(meta_name) + 1)) + meta_name

    if tamper:
        logger.debug(f"{dev.device_id} emitting with tamper mode '{tamper}'")
    return DataBundle(
        producer=dev.device_id,
        device_type=dev.identity.device_type,
        input_names=names,
        inputs=tuple(full_inputs),
        output=y,
        metadata=metadata,
        proof_bytes=proof_bytes,
        vk_digest=vk_digest,
        modulus=dev.modulus,
    )


def _rogue_keys(dev: ZkDevice) -> tuple[GateProgram, ProvingKey, VerificationKey]:
    """Keys for a modified firmware: one extra squaring of the declared output."""
    if dev._rogue is None:
        base = dev.identity.firmware
        rogue = replace(base, gates=base.gates + (Gate(OP_MUL, base.output, base.output),),
                        output=base.num_wires)
        inst = build_program(rogue, dev.modulus)
        _, pk, vk = fc_scheme.setup(dev.pk.pp.security, inst)
        dev._rogue = (rogue, pk, vk)
    return dev._rogue


def rogue_verification_key(dev: ZkDevice) -> VerificationKey:
    """The key a rogue-vk device publishes alongside its bundles."""
    return _rogue_keys(dev)[2]


def sample_inputs(dev: ZkDevice, tick: int) -> list[FieldElement]:
    """Encodes the latest readings for the device's declared input channels."""
    readings = dev.read_sensors(tick)
    values = []
    for name in dev.inputs:
        reading = readings.get(name)
        if reading is None:
            raise RangeError(f"{dev.device_id} has no '{name}' reading at tick {tick}")
        scale = CHANNELS[name].scale if name in CHANNELS else 1
        values.append(encode_reading(reading, scale, dev.modulus))
    return values


# === Bundle codec ===

def encode_bundle(bundle: DataBundle) -> bytes:
    header = json.dumps({
        "producer": bundle.producer,
        "device_type": bundle.device_type,
        "input_names": list(bundle.input_names),
        "metadata": bundle.metadata,
        "modulus": bundle.modulus,
    }, sort_keys=True, separators=(',', ':')).encode('utf-8')
    values = b''.join(v.to_bytes() for v in bundle.public)
    return pack_frames([header, bundle.vk_digest, values, bundle.proof_bytes])


def decode_bundle(data: bytes) -> DataBundle:
    header_bytes, vk_digest, values, proof_bytes = unpack_frames(data, expected=4)
    try:
        header = json.loads(header_bytes.decode('utf-8'))
        modulus = int(header["modulus"])
        names = tuple(header["input_names"])
        metadata = dict(header["metadata"])
        producer, device_type = header["producer"], header["device_type"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise EncodingError(f"Malformed bundle header: {e}") from e
    if len(vk_digest) != 32:
        raise EncodingError("Bundle vk digest must be 32 bytes")

    reader = ByteReader(values)
    count = len(names) + 1
    public = [FieldElement.from_bytes(reader.read(8), modulus) for _ in range(count)]
    reader.finish()
    return DataBundle(producer, device_type, names, tuple(public[:-1]), public[-1],
                      metadata, proof_bytes, vk_digest, modulus)
