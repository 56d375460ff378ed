# Service contract handler
# Declarative interaction logic between devices: verify the proof, check
# device compliance, evaluate guards in order, forward the selected fields.

import json
import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from common import fc_scheme
from common.fc_scheme import VerificationKey
from common.verdict import ACCEPT, Verdict, reject
from device.zk_device import DataBundle, metadata_digest

logger = logging.getLogger(__name__)

PRED_EQUALS = "equals"
PRED_IN_BBOX = "in-bbox"
PRED_AT_LEAST = "at-least"
PREDICATES = (PRED_EQUALS, PRED_IN_BBOX, PRED_AT_LEAST)

OUTCOME_FORWARD = "forward"
OUTCOME_REJECT = "reject"


@dataclass(frozen=True)
class Guard:
    name: str
    field: str
    predicate: str
    constant: object


@dataclass(frozen=True)
class ContractSpec:
    contract_id: str
    required_type: str
    guards: tuple[Guard, ...] = ()
    forward: tuple[tuple[str, str], ...] = ()
    next_hop: str = ""
    # (city, (lat_min, lat_max, lon_min, lon_max)) in micro-degrees, declaration order
    geo: tuple[tuple[str, tuple[int, int, int, int]], ...] = ()

    def __post_init__(self):
        for guard in self.guards:
            if guard.predicate not in PREDICATES:
                raise ValueError(f"guard '{guard.name}': unknown predicate '{guard.predicate}'")
        for city, (lat_min, lat_max, lon_min, lon_max) in self.geo:
            if not (lat_min < lat_max and lon_min < lon_max):
                raise ValueError(f"geo box '{city}' is degenerate")

    def to_dict(self) -> dict:
        return {
            "id": self.contract_id,
            "required_type": self.required_type,
            "guards": [{"name": g.name, "field": g.field, "predicate": g.predicate, "constant": g.constant}
                       for g in self.guards],
            "forward": [[src, dst] for src, dst in self.forward],
            "next_hop": self.next_hop,
            "geo": {city: list(box) for city, box in self.geo},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ContractSpec':
        return cls(
            contract_id=data["id"],
            required_type=data["required_type"],
            guards=tuple(Guard(g["name"], g["field"], g["predicate"], g["constant"])
                         for g in data.get("guards", [])),
            forward=tuple((src, dst) for src, dst in data.get("forward", [])),
            next_hop=data.get("next_hop", ""),
            geo=tuple((city, tuple(int(v) for v in box)) for city, box in data.get("geo", {}).items()),
        )

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':')).encode('utf-8')


@dataclass(frozen=True)
class ComplianceRegistry:
    """device_type -> authorized vk digests, read-only once built."""
    authorized: Mapping[str, frozenset[bytes]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'authorized', MappingProxyType(
            {t: frozenset(digests) for t, digests in self.authorized.items()}))

    def types_for(self, digest: bytes) -> list[str]:
        return [t for t, digests in self.authorized.items() if digest in digests]


@dataclass(frozen=True)
class Decision:
    outcome: str
    outputs: dict = field(default_factory=dict)
    next_hop: str = ""
    reason: str = ""
    detail: str = ""

    @property
    def forwarded(self) -> bool:
        return self.outcome == OUTCOME_FORWARD

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "outputs": self.outputs, "next_hop": self.next_hop,
                "reason": self.reason, "detail": self.detail}


def compliance_check(registry: ComplianceRegistry, bundle: DataBundle, claimed_type: str) -> Verdict:
    if claimed_type not in registry.authorized:
        return reject("unknown-type")
    if bundle.vk_digest not in registry.authorized[claimed_type]:
        if registry.types_for(bundle.vk_digest):
            return reject("type-mismatch")
        return reject("unregistered")
    if bundle.metadata.get("device_type") != claimed_type:
        return reject("type-mismatch")
    if not bundle.input_names or bundle.input_names[-1] != "meta":
        return reject("metadata-unbound")
    if metadata_digest(bundle.metadata, bundle.modulus) != bundle.metadata_value:
        return reject("metadata-unbound")
    return ACCEPT


def city_lookup(geo, lat: int, lon: int) -> str | None:
    """First box (declaration order) containing the point; bounds are inclusive."""
    boxes = geo.items() if isinstance(geo, dict) else geo
    for city, (lat_min, lat_max, lon_min, lon_max) in boxes:
        if lat_min <= lat <= lat_max and lon_min <= lon <= lon_max:
            return city
    return None


def _guard_holds(guard: Guard, fields: dict, geo) -> bool:
    value = fields.get(guard.field)
    if value is None:
        return False
    if guard.predicate == PRED_EQUALS:
        return value == guard.constant
    if guard.predicate == PRED_AT_LEAST:
        return isinstance(value, int) and value >= guard.constant
    # in-bbox: value is (lat, lon)
    try:
        lat, lon = value
    except (TypeError, ValueError):
        return False
    return city_lookup(geo, int(lat), int(lon)) == guard.constant


def evaluate_contract(spec: ContractSpec, registry: ComplianceRegistry, bundle: DataBundle,
                      vk: VerificationKey | None) -> Decision:
    """
    1. proof (structure + execution)  2. compliance  3. guards in order  4. forward.
    The first failing stage decides; later stages are not evaluated.
    """
    # 1. Proof
    if vk is None:
        return Decision(OUTCOME_REJECT, reason="proof", detail="unknown-key")
    verdict = fc_scheme.verify_bytes(vk, bundle.proof_bytes, bundle.public)
    if not verdict:
        logger.warning(f"{spec.contract_id}: proof from {bundle.producer} rejected: {verdict.describe()}")
        return Decision(OUTCOME_REJECT, reason="proof", detail=verdict.reason)

    # 2. Compliance
    verdict = compliance_check(registry, bundle, spec.required_type)
    if not verdict:
        logger.warning(f"{spec.contract_id}: {bundle.producer} failed compliance ({verdict.reason})")
        return Decision(OUTCOME_REJECT, reason="compliance", detail=verdict.reason)

    # 3. Guards
    fields = bundle.fields()
    for guard in spec.guards:
        if not _guard_holds(guard, fields, spec.geo):
            return Decision(OUTCOME_REJECT, reason=f"guard:{guard.name}")

    # 4. Forward (pass-through, no transformation)
    outputs = {dst: fields[src] for src, dst in spec.forward if src in fields}
    return Decision(OUTCOME_FORWARD, outputs=outputs, next_hop=spec.next_hop)
