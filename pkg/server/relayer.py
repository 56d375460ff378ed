# Relayer session state machine
# Mediates between the producer's contract (node X) and the receiver's
# contract (node Y) through the eleven workflow steps, from "deposit tokens"
# to "withdraw tokens". step_session is pure: it maps (session, event) to the
# next session and the messages to emit.

import logging
from dataclasses import dataclass, field, replace

from common import config
from common.errors import ProtocolViolation
from common.message_types import (
    FAIL_FUNDS, FAIL_PROOF, FAIL_TIMEOUT, MSG_ACK, MSG_DATA_DELIVERY, MSG_DATA_TRANSFER,
    MSG_DEPOSITED, MSG_FUNDS_OK, MSG_FUNDS_QUERY, MSG_FUNDS_SHORT, MSG_PROOF_SUBMITTED,
    MSG_RECEIVED_NOTICE, MSG_REFUND_REQUEST, MSG_RELEASE_CMD, MSG_RELEASE_DONE,
    MSG_RELEASE_REQUEST, MSG_TIMEOUT, MSG_VERIFY_RESULT, MSG_WITHDRAW_DONE, STATE_ACKED,
    STATE_DATA_AT_RELAYER, STATE_DATA_DELIVERED, STATE_FAILED, STATE_FUNDED, STATE_FUNDS_RELEASED,
    STATE_FUNDS_VERIFIED, STATE_INIT, STATE_PROOF_SUBMITTED, STATE_PROOF_VERIFIED,
    STATE_RELEASE_AUTHORIZED, STATE_WITHDRAWN, TERMINAL_STATES, ProtocolMessage,
)

logger = logging.getLogger(__name__)

RELAYER = config.RELAYER_ID
ESCROW = config.ESCROW_ID

# (state, kind) -> next state, for every non-failing transition
TRANSITIONS = {
    (STATE_INIT, MSG_DEPOSITED): STATE_FUNDED,
    (STATE_FUNDED, MSG_PROOF_SUBMITTED): STATE_PROOF_SUBMITTED,
    (STATE_PROOF_SUBMITTED, MSG_FUNDS_OK): STATE_FUNDS_VERIFIED,
    (STATE_FUNDS_VERIFIED, MSG_DATA_TRANSFER): STATE_DATA_AT_RELAYER,
    (STATE_DATA_AT_RELAYER, MSG_DATA_DELIVERY): STATE_DATA_DELIVERED,
    (STATE_DATA_DELIVERED, MSG_VERIFY_RESULT): STATE_PROOF_VERIFIED,
    (STATE_PROOF_VERIFIED, MSG_ACK): STATE_ACKED,
    (STATE_ACKED, MSG_RELEASE_CMD): STATE_RELEASE_AUTHORIZED,
    (STATE_RELEASE_AUTHORIZED, MSG_RELEASE_DONE): STATE_FUNDS_RELEASED,
    (STATE_FUNDS_RELEASED, MSG_WITHDRAW_DONE): STATE_WITHDRAWN,
}

# Once the escrow has been told to release, a refund is no longer possible
SETTLING_STATES = (STATE_RELEASE_AUTHORIZED, STATE_FUNDS_RELEASED)


@dataclass(frozen=True)
class Session:
    session_id: str
    device_a: str
    device_b: str
    node_x: str
    node_y: str
    contract_x: str = ""
    contract_y: str = ""
    amount: int = 0
    required: int = 0
    state: str = STATE_INIT
    failure: str | None = None
    timeout: int = config.STEP_TIMEOUT_TICKS
    history: tuple[str, ...] = field(default=(STATE_INIT,))

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    @property
    def label(self) -> str:
        """State as printed in transcripts: FAILED carries its reason."""
        return f"{self.state}({self.failure})" if self.state == STATE_FAILED else self.state

    def moved(self, state: str, failure: str | None = None) -> 'Session':
        return replace(self, state=state, failure=failure, history=self.history + (state,))


def _msg(kind: str, session: Session, sender: str, recipient: str, event: ProtocolMessage,
         payload=None) -> ProtocolMessage:
    return ProtocolMessage(kind, session.session_id, sender, recipient, event.digest, payload)


def _fail(session: Session, reason: str, event: ProtocolMessage):
    failed = session.moved(STATE_FAILED, reason)
    logger.warning(f"Session {session.session_id} FAILED({reason}) in {session.state}")
    return failed, [_msg(MSG_REFUND_REQUEST, session, RELAYER, ESCROW, event)]


def _expected_sender(session: Session, kind: str) -> str | None:
    return {
        MSG_DATA_TRANSFER: session.node_x,
        MSG_DATA_DELIVERY: session.node_y,
        MSG_VERIFY_RESULT: session.node_y,
        MSG_ACK: session.node_y,
        MSG_RELEASE_CMD: session.node_y,
        MSG_DEPOSITED: ESCROW,
        MSG_FUNDS_OK: ESCROW,
        MSG_FUNDS_SHORT: ESCROW,
        MSG_RELEASE_DONE: ESCROW,
        MSG_WITHDRAW_DONE: ESCROW,
    }.get(kind)


def step_session(session: Session, event: ProtocolMessage) -> tuple[Session, list[ProtocolMessage]]:
    """
    Deterministic transition. A Timeout after release was authorised leaves
    the session where it is. Illegal (state, kind) pairs, events for another
    session and events from the wrong sender raise ProtocolViolation and
    leave the session unchanged.
    """
    if event.session_id != session.session_id:
        raise ProtocolViolation(f"Event for '{event.session_id}' delivered to '{session.session_id}'")
    if session.terminal:
        raise ProtocolViolation(f"{event.kind} after terminal state {session.label}")

    kind = event.kind
    if kind == MSG_TIMEOUT:
        if session.state in SETTLING_STATES:
            logger.info(f"Session {session.session_id}: Timeout in {session.state} ignored, settlement pending")
            return session, []
        return _fail(session, FAIL_TIMEOUT, event)

    expected = _expected_sender(session, kind)
    if expected is not None and event.sender != expected:
        raise ProtocolViolation(f"{kind} from '{event.sender}', expected '{expected}'")

    if kind == MSG_FUNDS_SHORT and session.state == STATE_PROOF_SUBMITTED:
        return _fail(session, FAIL_FUNDS, event)
    if kind == MSG_VERIFY_RESULT and session.state == STATE_DATA_DELIVERED:
        result = event.payload or {}
        if not result.get("accepted"):
            return _fail(session, FAIL_PROOF, event)

    next_state = TRANSITIONS.get((session.state, kind))
    if next_state is None:
        raise ProtocolViolation(f"{kind} is not permitted in state {session.state}")

    moved = session.moved(next_state)
    emitted: list[ProtocolMessage] = []
    if next_state == STATE_PROOF_SUBMITTED:
        emitted.append(_msg(MSG_FUNDS_QUERY, session, RELAYER, ESCROW, event, {"required": session.required}))
    elif next_state == STATE_FUNDS_VERIFIED:
        emitted.append(_msg(MSG_DATA_TRANSFER, session, RELAYER, session.node_x, event))
    elif next_state == STATE_DATA_AT_RELAYER:
        emitted.append(_msg(MSG_DATA_DELIVERY, session, RELAYER, session.node_y, event, event.payload))
    elif next_state == STATE_PROOF_VERIFIED:
        # Contract Y acknowledges on its own channel
        emitted.append(_msg(MSG_ACK, session, session.node_y, RELAYER, event))
    elif next_state == STATE_ACKED:
        emitted.append(_msg(MSG_RECEIVED_NOTICE, session, RELAYER, session.node_x, event))
        emitted.append(_msg(MSG_RELEASE_CMD, session, session.node_y, RELAYER, event))
    elif next_state == STATE_RELEASE_AUTHORIZED:
        emitted.append(_msg(MSG_RELEASE_REQUEST, session, RELAYER, ESCROW, event))

    logger.debug(f"Session {session.session_id}: {session.state} --{kind}--> {next_state}")
    return moved, emitted


class Relayer:
    """Holds live sessions; violations are logged and the event dropped."""

    def __init__(self):
        self.sessions: dict[str, Session] = {}
        self.violations: list[str] = []

    def open(self, session: Session):
        self.sessions[session.session_id] = session

    def handle(self, event: ProtocolMessage) -> list[ProtocolMessage]:
        session = self.sessions.get(event.session_id)
        if session is None:
            self.violations.append(f"{event.kind} for unknown session {event.session_id}")
            logger.warning(self.violations[-1])
            return []
        try:
            session, emitted = step_session(session, event)
        except ProtocolViolation as e:
            self.violations.append(f"{event.session_id}: {e}")
            logger.warning(f"Protocol violation in {event.session_id}: {e}")
            return []
        self.sessions[event.session_id] = session
        return emitted
