# Simulated world
# Discrete-event run of a scenario: devices, blockchain nodes, the escrow
# contract and the relayer are simpy actors exchanging ProtocolMessages over
# FIFO per-pair channels in logical ticks. One sequencer seals a block every
# tick; a watchdog per session injects Timeout after a step stalls.
#
# Transcript line (one per delivered message, after the recipient handled it):
#   tick|session|state|kind|sender>recipient|digest-hex

import hashlib
import logging
import random
import time
from dataclasses import dataclass, field

import numpy as np
import simpy

from common import config
from common.errors import ZkIotError
from common.fc_scheme import VerificationKey
from common.message_types import (
    COLLECTION_COLD, COLLECTION_CONTRACT, COLLECTION_ESCROW, COLLECTION_PROOF, MSG_DATA_DELIVERY,
    MSG_DATA_TRANSFER, MSG_DEPOSIT_REQUEST, MSG_DEPOSITED, MSG_FUNDS_OK, MSG_FUNDS_QUERY, MSG_FUNDS_SHORT,
    MSG_NEW_DATA_NOTICE, MSG_PROOF_SUBMITTED, MSG_RECEIVED_NOTICE, MSG_REFUND_DONE, MSG_REFUND_REQUEST,
    MSG_RELEASE_DONE, MSG_RELEASE_REQUEST, MSG_TIMEOUT, MSG_VERIFY_RESULT, MSG_WITHDRAW_DONE,
    MSG_WITHDRAW_REQUEST, STATE_FUNDED, ProtocolMessage,
)
from common.pcd_chain import ChainProof, build_step, encode_chain, extend_chain, verify_chain
from common.scenario_config import ScenarioConfig, SessionConfig
from device.zk_device import (TAMPER_ROGUE_VK, SensorReading, ZkDevice, decode_bundle, emit_bundle,
                              encode_bundle, load_firmware, provision, rogue_verification_key,
                              sample_inputs)
from server.blockchain_node import Blockchain, BlockchainNode
from server.handlers.contract_handler import ComplianceRegistry, ContractSpec, Guard
from server.relayer import Relayer, Session

logger = logging.getLogger(__name__)

PHASES = ("prove", "verify", "write", "confirm", "read", "session")
# Failure-path and settlement signals are never dropped by fault injection
RELIABLE_KINDS = (MSG_TIMEOUT, MSG_REFUND_REQUEST, MSG_REFUND_DONE,
                  MSG_RELEASE_REQUEST, MSG_RELEASE_DONE, MSG_WITHDRAW_REQUEST, MSG_WITHDRAW_DONE)
DRAIN_TICKS = 5


def payload_digest(payload) -> bytes:
    return hashlib.sha256(payload).digest() if isinstance(payload, bytes) else b''


# === Metrics ===

@dataclass
class MetricsReport:
    """Wall-clock phase durations (seconds internally, microseconds when reported)."""
    samples: dict[str, list[float]] = field(default_factory=lambda: {p: [] for p in PHASES})
    accepts: int = 0
    rejects: int = 0

    def record(self, phase: str, seconds: float):
        self.samples[phase].append(seconds)

    def summary(self) -> dict:
        out = {}
        for phase in PHASES:
            values = np.asarray(self.samples[phase], dtype=float) * 1e6
            if values.size == 0:
                out[phase] = {"count": 0}
                continue
            out[phase] = {
                "count": int(values.size),
                "mean_us": float(values.mean()),
                "min_us": float(values.min()),
                "max_us": float(values.max()),
                "total_us": float(values.sum()),
            }
        out["accepts"] = self.accepts
        out["rejects"] = self.rejects
        return out


class Timer:
    def __init__(self, metrics: MetricsReport, phase: str):
        self.metrics = metrics
        self.phase = phase

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.metrics.record(self.phase, time.perf_counter() - self.start)
        return False


# === Network ===

class Network:
    """FIFO per (sender, recipient) with seeded drop/delay injection."""

    def __init__(self, world: 'World'):
        self.world = world
        self.env = world.env
        self.rng = random.Random(world.scenario.seed)
        self._last: dict[tuple[str, str], float] = {}
        self.dropped: list[ProtocolMessage] = []

    def send(self, msg: ProtocolMessage):
        faults = self.world.scenario.faults
        if msg.recipient not in self.world.actors:
            logger.warning(f"No actor '{msg.recipient}' for {msg.kind} ({msg.session_id})")
            return
        if msg.kind not in RELIABLE_KINDS and faults.drop_rate and self.rng.random() < faults.drop_rate:
            self.dropped.append(msg)
            logger.info(f"Dropped {msg.kind} {msg.sender}>{msg.recipient} ({msg.session_id})")
            return
        delay = config.MESSAGE_LATENCY_TICKS
        if faults.max_delay:
            delay += self.rng.randint(0, faults.max_delay)
        pair = (msg.sender, msg.recipient)
        deliver_at = max(self.env.now + delay, self._last.get(pair, 0))
        self._last[pair] = deliver_at
        self.env.process(self._deliver(msg, deliver_at - self.env.now))

    def _deliver(self, msg: ProtocolMessage, delay: float):
        yield self.env.timeout(delay)
        yield self.world.actors[msg.recipient].inbox.put(msg)


# === Actors ===

class Actor:
    """An actor with an inbox; subclasses implement receive()."""

    def __init__(self, world: 'World', name: str):
        self.world = world
        self.env = world.env
        self.name = name
        self.inbox = simpy.Store(self.env)

    def send(self, kind: str, session_id: str, recipient: str, payload=None, digest: bytes = b''):
        self.world.network.send(ProtocolMessage(kind, session_id, self.name, recipient,
                                                digest or payload_digest(payload), payload))

    def request(self, node_id: str, collection: str, action: str, data: dict) -> dict:
        return self.world.nodes[node_id].process_request(
            {"collection": collection, "action": action, "data": data})

    def run(self):
        while True:
            msg = yield self.inbox.get()
            self.receive(msg)
            self.world.record(msg)

    def receive(self, msg: ProtocolMessage):
        raise NotImplementedError


class RelayerActor(Actor):
    def __init__(self, world: 'World'):
        super().__init__(world, config.RELAYER_ID)
        self.relayer = Relayer()

    def receive(self, msg: ProtocolMessage):
        before = self.relayer.sessions.get(msg.session_id)
        for out in self.relayer.handle(msg):
            self.world.network.send(out)
        after = self.relayer.sessions.get(msg.session_id)
        if after is not None and after is not before:
            self.world.progress(after)


class EscrowActor(Actor):
    """The token escrow contract; requests go through the session's node X."""

    def __init__(self, world: 'World'):
        super().__init__(world, config.ESCROW_ID)

    def _escrow(self, session: SessionConfig, action: str, **data) -> dict:
        node_id = self.world.device_config(session.producer).node
        return self.request(node_id, COLLECTION_ESCROW, action, {"session": session.session_id, **data})

    def receive(self, msg: ProtocolMessage):
        session = self.world.session_configs[msg.session_id]
        if msg.kind == MSG_DEPOSIT_REQUEST:
            reply = self._escrow(session, "deposit", depositor=session.receiver,
                                 beneficiary=session.producer, amount=session.amount)
            if reply["status"] == "ok":
                self.send(MSG_DEPOSITED, session.session_id, config.RELAYER_ID)
            else:
                logger.warning(f"Deposit for {session.session_id} refused: {reply.get('detail', reply['reason'])}")
        elif msg.kind == MSG_FUNDS_QUERY:
            reply = self._escrow(session, "verify_funds", required=msg.payload["required"])
            kind = MSG_FUNDS_OK if reply["status"] == "ok" and reply["sufficient"] else MSG_FUNDS_SHORT
            self.send(kind, session.session_id, config.RELAYER_ID)
        elif msg.kind == MSG_RELEASE_REQUEST:
            reply = self._escrow(session, "release", caller=msg.sender)
            if reply["status"] == "ok":
                self.send(MSG_RELEASE_DONE, session.session_id, config.RELAYER_ID)
                self.send(MSG_RELEASE_DONE, session.session_id, session.producer)
            else:
                logger.warning(f"Release for {session.session_id} refused: {reply.get('detail', reply['reason'])}")
        elif msg.kind == MSG_WITHDRAW_REQUEST:
            reply = self._escrow(session, "withdraw", caller=msg.sender)
            if reply["status"] == "ok":
                self.send(MSG_WITHDRAW_DONE, session.session_id, config.RELAYER_ID)
            else:
                logger.warning(f"Withdraw for {session.session_id} refused: {reply.get('detail', reply['reason'])}")
        elif msg.kind == MSG_REFUND_REQUEST:
            self._escrow(session, "mark_failed")
            reply = self._escrow(session, "refund")
            if reply["status"] == "ok":
                self.send(MSG_REFUND_DONE, session.session_id, session.receiver)
            else:
                logger.warning(f"Refund for {session.session_id} not applied: {reply.get('detail', reply['reason'])}")


class NodeActor(Actor):
    """Blockchain node hosting service contracts (X on the producer side, Y on the receiver side)."""

    def receive(self, msg: ProtocolMessage):
        session = self.world.session_configs[msg.session_id]
        world = self.world
        if msg.kind == MSG_NEW_DATA_NOTICE:
            # 1. Contract X must be live on this node
            reply = self.request(self.name, COLLECTION_CONTRACT, "get", {"contract": session.contract_x})
            if reply["status"] != "ok":
                logger.error(f"[{self.name}] {session.session_id}: {reply.get('detail', reply['reason'])}")
                return
            # 2. Cold storage for the data, hot storage for the proof
            self.request(self.name, COLLECTION_COLD, "put", {"device": msg.sender, "payload": msg.payload})
            try:
                proof_bytes = decode_bundle(msg.payload).proof_bytes
            except ZkIotError as e:
                logger.warning(f"[{self.name}] undecodable bundle from {msg.sender}: {e}")
                return
            with Timer(world.metrics, "write"):
                reply = self.request(self.name, COLLECTION_PROOF, "append", {"proof": proof_bytes})
            if reply["status"] != "ok":
                logger.warning(f"[{self.name}] proof from {msg.sender} refused: {reply.get('detail', reply['reason'])}")
                return
            world.proof_positions.append((reply["height"], reply["index"], proof_bytes))
            self.send(MSG_PROOF_SUBMITTED, session.session_id, config.RELAYER_ID,
                      {"height": reply["height"], "index": reply["index"]}, msg.digest)
        elif msg.kind == MSG_DATA_TRANSFER:
            reply = self.request(self.name, COLLECTION_COLD, "get", {"device": session.producer})
            if reply["status"] == "ok":
                self.send(MSG_DATA_TRANSFER, session.session_id, config.RELAYER_ID, reply["payload"])
        elif msg.kind == MSG_DATA_DELIVERY:
            self._verify_delivery(session, msg)
        elif msg.kind == MSG_RECEIVED_NOTICE:
            logger.info(f"[{self.name}] {session.session_id}: receiver acknowledged the data")

    def _verify_delivery(self, session: SessionConfig, msg: ProtocolMessage):
        world = self.world
        self.request(self.name, COLLECTION_COLD, "put", {"device": session.producer, "payload": msg.payload})
        self.send(MSG_DATA_DELIVERY, session.session_id, config.RELAYER_ID, digest=msg.digest)

        with Timer(world.metrics, "verify"):
            reply = self.request(self.name, COLLECTION_CONTRACT, "evaluate",
                                 {"contract": session.contract_y, "bundle": msg.payload})
        if reply["status"] != "ok":
            result = {"accepted": False, "detail": reply.get('detail', reply['reason'])}
        else:
            decision = reply["decision"]
            result = {"accepted": decision["outcome"] == "forward",
                      "detail": decision["detail"] or decision["reason"], "outputs": decision["outputs"]}
        if result["accepted"]:
            world.metrics.accepts += 1
            world.consume(session, decode_bundle(msg.payload))
        else:
            world.metrics.rejects += 1
            logger.warning(f"[{self.name}] {session.session_id}: contract {session.contract_y} "
                           f"rejected ({result['detail']})")
        world.decisions[session.session_id] = result
        self.send(MSG_VERIFY_RESULT, session.session_id, config.RELAYER_ID, result, msg.digest)


class DeviceActor(Actor):
    def __init__(self, world: 'World', device: ZkDevice, node_id: str):
        super().__init__(world, device.device_id)
        self.device = device
        self.node_id = node_id

    def produce(self, session: SessionConfig):
        """Reads sensors, runs the firmware and notifies its node."""
        tick = int(self.env.now)
        lat, lon = self.device.gps
        metadata = {"device_id": self.name, "device_type": self.device.identity.device_type,
                    "gps": [lat, lon], "session": session.session_id, "tick": tick}
        try:
            inputs = sample_inputs(self.device, tick)
            with Timer(self.world.metrics, "prove"):
                bundle = emit_bundle(self.device, inputs, metadata)
        except ZkIotError as e:
            logger.error(f"{self.name} could not produce data for {session.session_id}: {e}")
            return
        self.world.bundles[session.session_id] = bundle
        self.send(MSG_NEW_DATA_NOTICE, session.session_id, self.node_id, encode_bundle(bundle))

    def receive(self, msg: ProtocolMessage):
        if msg.kind == MSG_RELEASE_DONE:
            self.send(MSG_WITHDRAW_REQUEST, msg.session_id, config.ESCROW_ID)
        elif msg.kind == MSG_REFUND_DONE:
            logger.info(f"{self.name}: deposit for {msg.session_id} refunded")


# === World ===

class World:
    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.env = simpy.Environment()
        self.metrics = MetricsReport()
        self.transcript: list[str] = []
        self.proof_positions: list[tuple[int, int, bytes]] = []
        self.bundles: dict = {}
        self.decisions: dict[str, dict] = {}
        self.chains: dict[str, bytes] = {}
        self.chain_verdicts: dict[str, str] = {}
        self.session_configs: dict[str, SessionConfig] = {}
        self._started: dict[str, float] = {}
        self._last_progress: dict[str, float] = {}

        self.chain = Blockchain(scenario.balances, scenario.modulus)
        self.devices = self._provision_devices()
        self.registry = ComplianceRegistry({
            device_type: frozenset(self.devices[d].vk.digest for d in ids)
            for device_type, ids in scenario.registry.items()
        })
        self.nodes = {n: BlockchainNode(n, self.chain, self.registry) for n in scenario.nodes}
        self._register_contracts()
        # Keys and contracts are on chain before the first session starts
        self.chain.seal()

        self.network = Network(self)
        self.relayer = RelayerActor(self)
        self.actors: dict[str, Actor] = {self.relayer.name: self.relayer, config.ESCROW_ID: EscrowActor(self)}
        for node_id in scenario.nodes:
            self.actors[node_id] = NodeActor(self, node_id)
        for d in scenario.devices:
            self.actors[d.device_id] = DeviceActor(self, self.devices[d.device_id], d.node)
        for actor in self.actors.values():
            self.env.process(actor.run())
        self.env.process(self._sequencer())

    # Setup

    def _provision_devices(self) -> dict[str, ZkDevice]:
        devices = {}
        for d in self.scenario.devices:
            firmware = d.program or load_firmware(d.firmware, self.scenario.base_dir)
            script = tuple(SensorReading(s.channel, s.value, s.tick) for s in d.sensors)
            dev = provision(d.device_id, d.device_type, firmware, self.scenario.modulus,
                            inputs=d.inputs, gps=d.gps, script=script, tamper=d.tamper)
            self.chain.publish_key(dev.vk)
            if d.tamper == TAMPER_ROGUE_VK:
                self.chain.publish_key(rogue_verification_key(dev))
            devices[d.device_id] = dev
        return devices

    def _register_contracts(self):
        for c in self.scenario.contracts:
            spec = ContractSpec(
                contract_id=c.contract_id,
                required_type=c.required_type,
                guards=tuple(Guard(g.name, g.field, g.predicate, g.constant) for g in c.guards),
                forward=c.forward,
                next_hop=c.next_hop,
                geo=self.scenario.geo,
            )
            reply = self.nodes[c.node].process_request(
                {"collection": COLLECTION_CONTRACT, "action": "register", "data": {"spec": spec}})
            if reply["status"] != "ok":
                raise ZkIotError(f"Contract {c.contract_id} not registered: {reply}")

    def device_config(self, device_id: str):
        return self.scenario.device(device_id)

    # Processes

    def _sequencer(self):
        while True:
            yield self.env.timeout(1)
            self.chain.seal()

    def _watchdog(self, session_id: str):
        timeout = self.scenario.step_timeout
        while True:
            yield self.env.timeout(1)
            session = self.relayer.relayer.sessions[session_id]
            if session.terminal:
                return
            if self.env.now - self._last_progress[session_id] >= timeout:
                logger.warning(f"{session_id} stalled in {session.state} for {timeout} ticks")
                self.network.send(ProtocolMessage(MSG_TIMEOUT, session_id, config.CLOCK_ID, config.RELAYER_ID))
                self._last_progress[session_id] = self.env.now

    def _produce_later(self, cfg: SessionConfig):
        yield self.env.timeout(config.DATA_DELAY_TICKS)
        self.actors[cfg.producer].produce(cfg)

    def start_session(self, cfg: SessionConfig):
        a, b = self.device_config(cfg.producer), self.device_config(cfg.receiver)
        session = Session(cfg.session_id, cfg.producer, cfg.receiver, a.node, b.node,
                          cfg.contract_x, cfg.contract_y, cfg.amount, cfg.required,
                          timeout=self.scenario.step_timeout)
        self.session_configs[cfg.session_id] = cfg
        self.relayer.relayer.open(session)
        self._started[cfg.session_id] = time.perf_counter()
        self._last_progress[cfg.session_id] = self.env.now
        self.actors[cfg.receiver].send(MSG_DEPOSIT_REQUEST, cfg.session_id, config.ESCROW_ID,
                                       {"amount": cfg.amount, "beneficiary": cfg.producer})
        self.env.process(self._watchdog(cfg.session_id))
        logger.info(f"Session {cfg.session_id}: {cfg.receiver} pays {cfg.amount} for data from {cfg.producer}")

    def progress(self, session: Session):
        self._last_progress[session.session_id] = self.env.now
        if session.state == STATE_FUNDED:
            # The producer senses and proves once the deposit is confirmed
            self.env.process(self._produce_later(self.session_configs[session.session_id]))
        elif session.terminal:
            self.metrics.record("session", time.perf_counter() - self._started[session.session_id])
            logger.info(f"Session {session.session_id} finished {session.label} at tick {int(self.env.now)}")

    def record(self, msg: ProtocolMessage):
        session = self.relayer.relayer.sessions.get(msg.session_id)
        label = session.label if session else "-"
        digest = msg.digest.hex() if msg.digest else "-"
        self.transcript.append(f"{int(self.env.now)}|{msg.session_id}|{label}|{msg.kind}|"
                               f"{msg.sender}>{msg.recipient}|{digest}")

    # Proof-carrying data: the receiver builds on the producer's output

    def consume(self, cfg: SessionConfig, bundle):
        receiver = self.devices[cfg.receiver]
        own = list(sample_inputs(receiver, int(self.env.now)))
        own.insert(cfg.link - 1, bundle.output)
        names = list(receiver.inputs)
        names.insert(cfg.link - 1, "report")
        metadata = {"device_id": receiver.device_id, "device_type": receiver.identity.device_type,
                    "session": cfg.session_id, "source": bundle.producer, "tick": int(self.env.now)}
        try:
            with Timer(self.metrics, "prove"):
                follow = emit_bundle(receiver, own, metadata, input_names=tuple(names))
            chain = extend_chain(extend_chain(ChainProof(), build_step(bundle, 1)),
                                 build_step(follow, 2, cfg.link))
        except ZkIotError as e:
            logger.warning(f"{receiver.device_id} cannot extend the chain for {cfg.session_id}: {e}")
            return
        # Keys come from the receiver's own hot-store replica
        node = self.nodes[self.device_config(cfg.receiver).node]
        keys: dict[bytes, VerificationKey] = {}
        for step in chain.steps:
            vk = node.verification_key(step.vk_digest)
            if vk is not None:
                keys[step.vk_digest] = vk
        try:
            verdict = verify_chain(chain, keys)
        except ZkIotError as e:
            logger.warning(f"Chain for {cfg.session_id} not verifiable: {e}")
            self.chain_verdicts[cfg.session_id] = "unknown-key"
            return
        self.chain_verdicts[cfg.session_id] = verdict.describe()
        self.chains[cfg.session_id] = encode_chain(chain, self.scenario.modulus)
        logger.info(f"{cfg.session_id}: {chain.T}-step chain {verdict.describe()}, "
                    f"y_T = {chain.final_claim.value}")

    # Run

    def _all_terminal(self) -> bool:
        return all(self.relayer.relayer.sessions[s].terminal for s in self.session_configs)

    def _controller(self, done):
        while not self._all_terminal() and self.env.now < config.SESSION_TICK_BUDGET:
            yield self.env.timeout(1)
        yield self.env.timeout(DRAIN_TICKS + self.scenario.faults.max_delay)
        done.succeed()

    def run(self):
        done = self.env.event()
        self.env.process(self._controller(done))
        self.env.run(until=done)
        self.chain.seal()
        for seconds in self.chain.confirm_times:
            self.metrics.record("confirm", seconds)
        self.chain.confirm_times.clear()

    def measure_reads(self) -> bool:
        """Reads every appended proof back from every node; True iff all are byte-identical."""
        identical = True
        for height, index, proof_bytes in self.proof_positions:
            for node in self.nodes.values():
                with Timer(self.metrics, "read"):
                    reply = node.process_request({"collection": COLLECTION_PROOF, "action": "read",
                                                  "data": {"height": height, "index": index}})
                if reply["status"] != "ok" or reply["proof"] != proof_bytes:
                    identical = False
        return identical

    # Reports

    def session(self, session_id: str) -> Session:
        return self.relayer.relayer.sessions[session_id]

    def session_summaries(self) -> list[dict]:
        out = []
        for session_id, cfg in self.session_configs.items():
            s = self.session(session_id)
            out.append({
                "session": session_id,
                "state": s.label,
                "expect": cfg.expect,
                "met": s.label == cfg.expect,
                "history": list(s.history),
                "decision": self.decisions.get(session_id, {}),
                "chain": self.chain_verdicts.get(session_id, ""),
            })
        return out

    def escrow_dump(self) -> str:
        return self.chain.escrow.dump()

    def ledger_dump(self) -> str:
        return self.chain.dump()


@dataclass
class RunResult:
    transcript: list[str]
    ledger: str
    escrow: str
    sessions: list[dict]
    metrics: dict
    chains: dict[str, bytes]
    violations: list[str]

    @property
    def expectations_met(self) -> bool:
        return all(s["met"] for s in self.sessions)


def run_session(world: World, cfg: SessionConfig) -> list[str]:
    """Drives one session to a terminal state; returns its transcript lines."""
    world.start_session(cfg)
    world.run()
    return [line for line in world.transcript if line.split('|')[1] == cfg.session_id]


def run_scenario(scenario: ScenarioConfig) -> RunResult:
    """Runs every session of the scenario concurrently in one world."""
    world = World(scenario)
    for cfg in scenario.sessions:
        world.start_session(cfg)
    world.run()
    if not world.measure_reads():
        logger.error("Replicated proof reads differ from the appended bytes")
    return RunResult(
        transcript=world.transcript,
        ledger=world.ledger_dump(),
        escrow=world.escrow_dump(),
        sessions=world.session_summaries(),
        metrics=world.metrics.summary(),
        chains=world.chains,
        violations=list(world.relayer.relayer.violations),
    )
