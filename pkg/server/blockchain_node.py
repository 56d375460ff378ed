# Simulated blockchain node.
#
# One deterministic sequencer (Blockchain) collects records, seals them into
# hash-chained blocks once per simulation tick and copies every sealed block
# verbatim into each node's hot store. Cold storage (device data) is per node
# and never enters a block.
#
# Nodes answer {"collection", "action", "data"} requests with
# {"status": "ok" | "error", ...} dicts, serialized by a per-node lock.

import hashlib
import logging
import threading
import time
from dataclasses import dataclass

from common import config
from common.errors import EncodingError, NotFound, ZkIotError
from common.fc_scheme import ProofBundle, VerificationKey
from common.message_types import (COLLECTION_COLD, COLLECTION_CONTRACT, COLLECTION_ESCROW,
                                  COLLECTION_PROOF, RECORD_CONTRACT, RECORD_KEY, RECORD_PROOF,
                                  validate_request)
from device.zk_device import decode_bundle
from server.handlers.contract_handler import ComplianceRegistry, ContractSpec, evaluate_contract
from server.handlers.escrow_handler import EscrowBook, handle_escrow_request

logger = logging.getLogger(__name__)

GENESIS_PREV = bytes(32)


@dataclass(frozen=True)
class Record:
    kind: str
    payload: bytes

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.kind.encode('utf-8') + b'\x00' + self.payload).digest()


@dataclass(frozen=True)
class Block:
    height: int
    prev_digest: bytes
    records: tuple[Record, ...] = ()

    @property
    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.height.to_bytes(8, 'big'))
        h.update(self.prev_digest)
        for record in self.records:
            h.update(record.digest)
        return h.digest()


GENESIS = Block(0, GENESIS_PREV)


class HotStore:
    """Replicated, append-only block list."""

    def __init__(self):
        self.blocks: list[Block] = [GENESIS]
        self.keys: dict[bytes, bytes] = {}

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    def apply(self, block: Block):
        if block.height != self.height + 1 or block.prev_digest != self.blocks[-1].digest:
            raise ValueError(f"Block {block.height} does not extend height {self.height}")
        self.blocks.append(block)
        for record in block.records:
            if record.kind == RECORD_KEY:
                self.keys[hashlib.sha256(record.payload).digest()] = record.payload

    def read(self, height: int, index: int) -> Record:
        if not 0 <= height < len(self.blocks):
            raise NotFound(f"No block at height {height}")
        records = self.blocks[height].records
        if not 0 <= index < len(records):
            raise NotFound(f"No record {index} in block {height}")
        return records[index]

    def verify_links(self) -> bool:
        """Recomputes every previous-digest link."""
        for prev, block in zip(self.blocks, self.blocks[1:]):
            if block.prev_digest != prev.digest or block.height != prev.height + 1:
                return False
        return self.blocks[0] == GENESIS

    def dump(self) -> str:
        lines = []
        for block in self.blocks[1:]:
            for index, record in enumerate(block.records):
                lines.append(f"{block.height}|{index}|{record.kind}|{record.digest.hex()}\n")
        return "".join(lines)


class ColdStore:
    """Node-local device data: latest bundle per device. Not replicated."""

    def __init__(self):
        self.data: dict[str, bytes] = {}

    def put(self, device_id: str, payload: bytes):
        self.data[device_id] = payload

    def get(self, device_id: str) -> bytes:
        if device_id not in self.data:
            raise NotFound(f"No cold data for '{device_id}'")
        return self.data[device_id]


class Blockchain:
    """Single sequencer: pending records, sealing and replication."""

    def __init__(self, balances: dict[str, int] | None = None, modulus: int = config.DEFAULT_MODULUS):
        self.modulus = modulus
        self.blocks: list[Block] = [GENESIS]
        self.pending: list[Record] = []
        self._pending_since: list[float] = []
        self.nodes: list['BlockchainNode'] = []
        self.escrow = EscrowBook(balances, recorder=self.append)
        self.confirm_times: list[float] = []

    def attach(self, node: 'BlockchainNode'):
        for block in self.blocks[1:]:
            node.hot.apply(block)
        self.nodes.append(node)

    def append(self, kind: str, payload: bytes) -> tuple[int, int]:
        """Queues a record for the next block; returns (height, index) it will occupy."""
        position = (len(self.blocks), len(self.pending))
        self.pending.append(Record(kind, payload))
        self._pending_since.append(time.perf_counter())
        return position

    def seal(self) -> Block | None:
        if not self.pending:
            return None
        block = Block(len(self.blocks), self.blocks[-1].digest, tuple(self.pending))
        self.blocks.append(block)
        for node in self.nodes:
            node.hot.apply(block)
        now = time.perf_counter()
        self.confirm_times.extend(now - t for t in self._pending_since)
        self.pending, self._pending_since = [], []
        logger.debug(f"Sealed block {block.height} with {len(block.records)} records")
        return block

    def publish_key(self, vk: VerificationKey) -> tuple[int, int]:
        return self.append(RECORD_KEY, vk.to_bytes())

    def dump(self) -> str:
        return self.nodes[0].hot.dump() if self.nodes else HotStore().dump()


class BlockchainNode:
    def __init__(self, node_id: str, chain: Blockchain,
                 registry: ComplianceRegistry | None = None):
        self.node_id = node_id
        self.chain = chain
        self.hot = HotStore()
        self.cold = ColdStore()
        self.registry = registry or ComplianceRegistry()
        self.contracts: dict[str, ContractSpec] = {}
        self._vk_cache: dict[bytes, VerificationKey] = {}
        self.lock = threading.Lock()
        chain.attach(self)

    def verification_key(self, digest: bytes) -> VerificationKey | None:
        """Looks up a published key in this node's hot-store replica."""
        if digest not in self._vk_cache:
            for payload in self.hot.keys.values():
                try:
                    vk = VerificationKey.from_bytes(payload)
                except EncodingError:
                    continue
                self._vk_cache[vk.digest] = vk
        return self._vk_cache.get(digest)

    def process_request(self, request_data: dict) -> dict:
        # Main logic to handle a parsed request.
        with self.lock:
            valid, reason = validate_request(request_data)
            if not valid:
                return {"status": "error", "reason": reason}
            try:
                return self._dispatch(request_data['collection'], request_data['action'],
                                      request_data.get('data', {}))
            except KeyError as e:
                logger.warning(f"[{self.node_id}] Request processing error: Missing key {e}")
                return {"status": "error", "reason": f"missing_key: {e}"}
            except (ZkIotError, ValueError) as e:
                logger.info(f"[{self.node_id}] {request_data['collection']}/{request_data['action']} "
                            f"refused: {type(e).__name__}: {e}")
                return {"status": "error", "reason": type(e).__name__, "detail": str(e)}

    def _dispatch(self, collection: str, action: str, data: dict) -> dict:
        # === Escrow Collection ===
        if collection == COLLECTION_ESCROW:
            return handle_escrow_request(self.chain.escrow, action, data)

        # === Proof Collection ===
        elif collection == COLLECTION_PROOF:
            if action == "append":
                height, index = append_proof(self, data['proof'])
                return {"status": "ok", "height": height, "index": index}
            else:
                return {"status": "ok", "proof": read_proof(self, int(data['height']), int(data['index']))}

        # === Contract Collection ===
        elif collection == COLLECTION_CONTRACT:
            if action == "register":
                spec = data['spec'] if isinstance(data['spec'], ContractSpec) else ContractSpec.from_dict(data['spec'])
                height, index = register_contract(self, spec)
                return {"status": "ok", "height": height, "index": index}
            spec = self.contracts.get(data['contract'])
            if spec is None:
                raise NotFound(f"Contract '{data['contract']}' is not registered on {self.node_id}")
            if action == "get":
                return {"status": "ok", "spec": spec.to_dict()}
            bundle = decode_bundle(data['bundle'])
            decision = evaluate_contract(spec, self.registry, bundle, self.verification_key(bundle.vk_digest))
            return {"status": "ok", "decision": decision.to_dict()}

        # === Cold Collection ===
        else:
            if action == "put":
                self.cold.put(data['device'], data['payload'])
                return {"status": "ok"}
            return {"status": "ok", "payload": self.cold.get(data['device'])}


# === Ledger operations ===

def append_proof(node: BlockchainNode, proof_bytes: bytes) -> tuple[int, int]:
    """Validates the encoding and queues the proof for the next block."""
    ProofBundle.from_bytes(proof_bytes, node.chain.modulus)
    height, index = node.chain.append(RECORD_PROOF, proof_bytes)
    logger.debug(f"[{node.node_id}] proof queued at ({height}, {index})")
    return height, index


def read_proof(node: BlockchainNode, height: int, index: int) -> bytes:
    record = node.hot.read(height, index)
    if record.kind != RECORD_PROOF:
        raise NotFound(f"Record ({height}, {index}) is a {record.kind}, not a proof")
    return record.payload


def register_contract(node: BlockchainNode, spec: ContractSpec) -> tuple[int, int]:
    node.contracts[spec.contract_id] = spec
    return node.chain.append(RECORD_CONTRACT, spec.to_bytes())
