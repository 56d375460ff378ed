# Scenario configuration
# Loads a YAML scenario into a frozen ScenarioConfig and validates every cross
# reference. ConfigError messages always name the first offending field.

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from common import config
from common.errors import ConfigError, ZkIotError
from common.message_types import FAIL_FUNDS, FAIL_PROOF, FAIL_TIMEOUT, STATE_WITHDRAWN
from common.r1cs import GateProgram
from device.zk_device import TAMPER_MODES, load_firmware
from server.handlers.contract_handler import PREDICATES

logger = logging.getLogger(__name__)

EXPECTATIONS = (STATE_WITHDRAWN, f"FAILED({FAIL_FUNDS})", f"FAILED({FAIL_PROOF})", f"FAILED({FAIL_TIMEOUT})")


@dataclass(frozen=True)
class SensorScriptEntry:
    channel: str
    value: int
    tick: int = 0


@dataclass(frozen=True)
class DeviceConfig:
    device_id: str
    device_type: str
    firmware: str
    node: str
    inputs: tuple[str, ...] = ()
    gps: tuple[int, int] = (0, 0)
    sensors: tuple[SensorScriptEntry, ...] = ()
    tamper: str | None = None
    program: GateProgram | None = None


@dataclass(frozen=True)
class GuardConfig:
    name: str
    field: str
    predicate: str
    constant: Any


@dataclass(frozen=True)
class ContractConfig:
    contract_id: str
    node: str
    required_type: str
    guards: tuple[GuardConfig, ...] = ()
    forward: tuple[tuple[str, str], ...] = ()
    next_hop: str = ""


@dataclass(frozen=True)
class SessionConfig:
    session_id: str
    producer: str
    receiver: str
    amount: int
    required: int
    contract_x: str
    contract_y: str
    expect: str = STATE_WITHDRAWN
    link: int = 1


@dataclass(frozen=True)
class FaultConfig:
    drop_rate: float = 0.0
    max_delay: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    nodes: tuple[str, ...]
    devices: tuple[DeviceConfig, ...]
    contracts: tuple[ContractConfig, ...]
    sessions: tuple[SessionConfig, ...]
    balances: dict[str, int] = field(default_factory=dict)
    geo: tuple[tuple[str, tuple[int, int, int, int]], ...] = ()
    registry: dict[str, tuple[str, ...]] = field(default_factory=dict)
    step_timeout: int = config.STEP_TIMEOUT_TICKS
    faults: FaultConfig = FaultConfig()
    modulus: int = config.DEFAULT_MODULUS
    base_dir: str = "."

    def device(self, device_id: str) -> DeviceConfig:
        return next(d for d in self.devices if d.device_id == device_id)

    def contract(self, contract_id: str) -> ContractConfig:
        return next(c for c in self.contracts if c.contract_id == contract_id)


# === Field helpers ===

def _require(data: dict, key: str, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"field '{where}': expected a mapping")
    if key not in data:
        raise ConfigError(f"field '{where}.{key}' is required")
    return data[key]


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"field '{where}': expected an integer, got {value!r}")
    return value


def _str(value, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"field '{where}': expected a non-empty string, got {value!r}")
    return value


def _list(value, where: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ConfigError(f"field '{where}': expected a list")
    return value


def _unique(ids: list[str], where: str):
    seen = set()
    for i, item in enumerate(ids):
        if item in seen:
            raise ConfigError(f"field '{where}[{i}].id': duplicate id '{item}'")
        seen.add(item)


# === Sections ===

def _load_program(d: DeviceConfig, where: str, base_dir: str) -> DeviceConfig:
    try:
        program = load_firmware(d.firmware, base_dir)
    except OSError as e:
        raise ConfigError(f"field '{where}.firmware': cannot read '{d.firmware}' ({e.strerror})") from e
    except (ValueError, ZkIotError) as e:
        raise ConfigError(f"field '{where}.firmware': '{d.firmware}' is not a gate program: {e}") from e
    return replace(d, program=program)


def _parse_device(raw: dict, where: str) -> DeviceConfig:
    sensors = []
    for j, entry in enumerate(_list(raw.get('sensors'), f"{where}.sensors")):
        at = f"{where}.sensors[{j}]"
        sensors.append(SensorScriptEntry(
            channel=_str(_require(entry, 'channel', at), f"{at}.channel"),
            value=_int(_require(entry, 'value', at), f"{at}.value"),
            tick=_int(entry.get('tick', 0), f"{at}.tick"),
        ))
    gps = raw.get('gps', [0, 0])
    if not isinstance(gps, list) or len(gps) != 2:
        raise ConfigError(f"field '{where}.gps': expected [lat, lon] in micro-degrees")
    tamper = raw.get('tamper')
    if tamper is not None and tamper not in TAMPER_MODES:
        raise ConfigError(f"field '{where}.tamper': unknown mode '{tamper}'")
    return DeviceConfig(
        device_id=_str(_require(raw, 'id', where), f"{where}.id"),
        device_type=_str(_require(raw, 'type', where), f"{where}.type"),
        firmware=_str(_require(raw, 'firmware', where), f"{where}.firmware"),
        node=_str(_require(raw, 'node', where), f"{where}.node"),
        inputs=tuple(_str(x, f"{where}.inputs") for x in _list(raw.get('inputs'), f"{where}.inputs")),
        gps=(_int(gps[0], f"{where}.gps"), _int(gps[1], f"{where}.gps")),
        sensors=tuple(sensors),
        tamper=tamper,
    )


def _parse_contract(raw: dict, where: str) -> ContractConfig:
    guards = []
    for j, g in enumerate(_list(raw.get('guards'), f"{where}.guards")):
        at = f"{where}.guards[{j}]"
        predicate = _require(g, 'predicate', at)
        if predicate not in PREDICATES:
            raise ConfigError(f"field '{at}.predicate': unknown predicate '{predicate}'")
        guards.append(GuardConfig(_str(_require(g, 'name', at), f"{at}.name"),
                                  _str(_require(g, 'field', at), f"{at}.field"),
                                  predicate, _require(g, 'constant', at)))
    forward = []
    for j, pair in enumerate(_list(raw.get('forward'), f"{where}.forward")):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"field '{where}.forward[{j}]': expected [input_field, output_field]")
        forward.append((_str(pair[0], f"{where}.forward[{j}]"), _str(pair[1], f"{where}.forward[{j}]")))
    return ContractConfig(
        contract_id=_str(_require(raw, 'id', where), f"{where}.id"),
        node=_str(_require(raw, 'node', where), f"{where}.node"),
        required_type=_str(_require(raw, 'required_type', where), f"{where}.required_type"),
        guards=tuple(guards),
        forward=tuple(forward),
        next_hop=str(raw.get('next_hop', '')),
    )


def _parse_session(raw: dict, where: str) -> SessionConfig:
    expect = raw.get('expect', STATE_WITHDRAWN)
    if expect not in EXPECTATIONS:
        raise ConfigError(f"field '{where}.expect': must be one of {', '.join(EXPECTATIONS)}")
    amount = _int(_require(raw, 'amount', where), f"{where}.amount")
    if amount <= 0:
        raise ConfigError(f"field '{where}.amount': must be positive")
    return SessionConfig(
        session_id=_str(_require(raw, 'id', where), f"{where}.id"),
        producer=_str(_require(raw, 'producer', where), f"{where}.producer"),
        receiver=_str(_require(raw, 'receiver', where), f"{where}.receiver"),
        amount=amount,
        required=_int(raw.get('required', amount), f"{where}.required"),
        contract_x=_str(_require(raw, 'contract_x', where), f"{where}.contract_x"),
        contract_y=_str(_require(raw, 'contract_y', where), f"{where}.contract_y"),
        expect=expect,
        link=_int(raw.get('link', 1), f"{where}.link"),
    )


def parse_scenario(data: dict, base_dir: str = ".", seed: int | None = None) -> ScenarioConfig:
    """Builds and cross-checks a ScenarioConfig from a parsed YAML mapping."""
    if not isinstance(data, dict):
        raise ConfigError("field '<root>': scenario must be a mapping")

    # 1. Seed (determinism contract)
    if seed is None:
        seed = _int(_require(data, 'seed', '<root>'), 'seed')

    # 2. Sections
    nodes = tuple(_str(n, f"nodes[{i}]") for i, n in enumerate(_list(_require(data, 'nodes', '<root>'), 'nodes')))
    devices = tuple(_parse_device(d, f"devices[{i}]") for i, d in enumerate(_list(data.get('devices'), 'devices')))
    contracts = tuple(_parse_contract(c, f"contracts[{i}]")
                      for i, c in enumerate(_list(data.get('contracts'), 'contracts')))
    sessions = tuple(_parse_session(s, f"sessions[{i}]") for i, s in enumerate(_list(data.get('sessions'), 'sessions')))

    balances = {}
    for party, amount in (data.get('balances') or {}).items():
        balances[str(party)] = _int(amount, f"balances.{party}")
        if balances[str(party)] < 0:
            raise ConfigError(f"field 'balances.{party}': must be non-negative")

    geo = []
    for city, box in (data.get('geo') or {}).items():
        if not isinstance(box, list) or len(box) != 4:
            raise ConfigError(f"field 'geo.{city}': expected [lat_min, lat_max, lon_min, lon_max]")
        lat_min, lat_max, lon_min, lon_max = (_int(v, f"geo.{city}") for v in box)
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ConfigError(f"field 'geo.{city}': degenerate box")
        geo.append((str(city), (lat_min, lat_max, lon_min, lon_max)))

    registry = {}
    for device_type, ids in (data.get('registry') or {}).items():
        ids = _list(ids, f"registry.{device_type}")
        if not ids:
            raise ConfigError(f"field 'registry.{device_type}': must list at least one device")
        registry[str(device_type)] = tuple(_str(x, f"registry.{device_type}") for x in ids)

    timeouts = data.get('timeouts') or {}
    step_timeout = _int(timeouts.get('step', config.STEP_TIMEOUT_TICKS), 'timeouts.step')
    if step_timeout <= 0:
        raise ConfigError("field 'timeouts.step': must be positive")

    faults_raw = data.get('faults') or {}
    drop_rate = faults_raw.get('drop_rate', 0.0)
    if not isinstance(drop_rate, (int, float)) or not 0.0 <= drop_rate < 1.0:
        raise ConfigError("field 'faults.drop_rate': expected a number in [0, 1)")
    faults = FaultConfig(float(drop_rate), _int(faults_raw.get('max_delay', 0), 'faults.max_delay'))

    modulus = _int(data.get('modulus', config.DEFAULT_MODULUS), 'modulus')

    # 3. Cross references
    _unique(list(nodes), 'nodes')
    _unique([d.device_id for d in devices], 'devices')
    _unique([c.contract_id for c in contracts], 'contracts')
    _unique([s.session_id for s in sessions], 'sessions')

    device_ids = {d.device_id for d in devices}
    contract_ids = {c.contract_id for c in contracts}
    for i, d in enumerate(devices):
        if d.node not in nodes:
            raise ConfigError(f"field 'devices[{i}].node': unknown node '{d.node}'")
    devices = tuple(_load_program(d, f"devices[{i}]", base_dir) for i, d in enumerate(devices))
    for i, c in enumerate(contracts):
        if c.node not in nodes:
            raise ConfigError(f"field 'contracts[{i}].node': unknown node '{c.node}'")
        for j, g in enumerate(c.guards):
            if g.predicate == "in-bbox" and g.constant not in dict(geo):
                raise ConfigError(f"field 'contracts[{i}].guards[{j}].constant': unknown city '{g.constant}'")
    for device_type, ids in registry.items():
        for x in ids:
            if x not in device_ids:
                raise ConfigError(f"field 'registry.{device_type}': unknown device '{x}'")
    for i, s in enumerate(sessions):
        for key in ('producer', 'receiver'):
            if getattr(s, key) not in device_ids:
                raise ConfigError(f"field 'sessions[{i}].{key}': unknown device '{getattr(s, key)}'")
        for key in ('contract_x', 'contract_y'):
            if getattr(s, key) not in contract_ids:
                raise ConfigError(f"field 'sessions[{i}].{key}': unknown contract '{getattr(s, key)}'")
    for party in balances:
        if party not in device_ids:
            raise ConfigError(f"field 'balances.{party}': unknown device '{party}'")

    return ScenarioConfig(seed, nodes, devices, contracts, sessions, balances, tuple(geo), registry,
                          step_timeout, faults, modulus, base_dir)


def load_scenario(path: str, seed: int | None = None) -> ScenarioConfig:
    """Reads and validates a scenario file; 'seed' overrides the file's seed."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"field '<file>': scenario '{path}' not found") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"field '<file>': invalid YAML: {e}") from e
    scenario = parse_scenario(data, base_dir=os.path.dirname(os.path.abspath(path)), seed=seed)
    logger.info(f"Loaded scenario {path}: {len(scenario.devices)} devices, {len(scenario.sessions)} sessions")
    return scenario
