# Protocol model checker
# Breadth-first enumeration of every event order a single session can see
# under per-pair FIFO delivery, with one injectable Timeout, over each
# combination of fund sufficiency and proof honesty. The relayer transition
# function and the escrow book are the production ones; devices and nodes are
# reduced to their message reactions.
#
# Checked on every reachable state:
#   - tokens are conserved
#   - the producer is credited, and WITHDRAWN is reached, only after the
#     session passed PROOF_VERIFIED and ACKED
# and on every quiescent state:
#   - no escrow is left OPEN
#   - a FAILED session leaves its escrow REFUNDED
#   - exactly one of producer/receiver ends up holding the deposit
#   - an honest, funded session without timeout ends WITHDRAWN

import logging
from collections import Counter, deque
from dataclasses import dataclass, field, replace

from common import config
from common.errors import ProtocolViolation, ZkIotError
from common.message_types import (
    ESCROW_OPEN, ESCROW_REFUNDED, ESCROW_WITHDRAWN, MSG_DATA_DELIVERY, MSG_DATA_TRANSFER,
    MSG_DEPOSIT_REQUEST, MSG_DEPOSITED, MSG_FUNDS_OK, MSG_FUNDS_QUERY, MSG_FUNDS_SHORT,
    MSG_NEW_DATA_NOTICE, MSG_PROOF_SUBMITTED, MSG_REFUND_DONE, MSG_REFUND_REQUEST, MSG_RELEASE_DONE,
    MSG_RELEASE_REQUEST, MSG_TIMEOUT, MSG_VERIFY_RESULT, MSG_WITHDRAW_DONE, MSG_WITHDRAW_REQUEST,
    STATE_ACKED, STATE_FAILED, STATE_FUNDED, STATE_PROOF_VERIFIED, STATE_WITHDRAWN, ProtocolMessage,
)
from server.handlers.escrow_handler import EscrowAccount, EscrowBook
from server.relayer import Session, step_session

logger = logging.getLogger(__name__)

RELAYER = config.RELAYER_ID
ESCROW = config.ESCROW_ID
SESSION_ID = "s"
DEVICE_A, DEVICE_B = "A", "B"
NODE_X, NODE_Y = "X", "Y"
AMOUNT = 100
STATE_LIMIT = 10**4

# funds branch -> (B's opening balance, deposit amount, required amount)
FUNDS_BRANCHES = {
    "sufficient": (AMOUNT, AMOUNT, AMOUNT),
    "short": (AMOUNT, AMOUNT // 2, AMOUNT),
    "no-balance": (0, AMOUNT, AMOUNT),
}


def _freeze(msg: ProtocolMessage) -> ProtocolMessage:
    if isinstance(msg.payload, dict):
        return replace(msg, digest=b'', payload=tuple(sorted(msg.payload.items())))
    return replace(msg, digest=b'')


def _thaw(msg: ProtocolMessage) -> ProtocolMessage:
    if isinstance(msg.payload, tuple):
        return replace(msg, payload=dict(msg.payload))
    return msg


@dataclass(frozen=True)
class Branch:
    funds: str
    honest: bool

    @property
    def live(self) -> bool:
        return self.funds == "sufficient" and self.honest


@dataclass(frozen=True)
class GlobalState:
    branch: Branch
    session: Session
    channels: tuple[tuple[tuple[str, str], tuple[ProtocolMessage, ...]], ...]
    balances: tuple[tuple[str, int], ...]
    accounts: tuple[EscrowAccount, ...]
    failed: frozenset
    emitted: bool = False
    timeout_used: bool = False

    def book(self) -> EscrowBook:
        book = EscrowBook(dict(self.balances))
        book.accounts = {a.session: a for a in self.accounts}
        book.failed = set(self.failed)
        return book

    def balance(self, party: str) -> int:
        return dict(self.balances).get(party, 0)


@dataclass
class ModelCheckResult:
    states: int = 0
    transitions: int = 0
    dropped: int = 0
    outcomes: Counter = field(default_factory=Counter)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


# === Abstract actors ===

def _react(state: GlobalState, book: EscrowBook, msg: ProtocolMessage) -> tuple[Session, list[ProtocolMessage], int]:
    """Delivers one message; returns (session, emitted, dropped count)."""
    session = state.session
    out: list[ProtocolMessage] = []

    def send(kind, sender, recipient, payload=None):
        out.append(ProtocolMessage(kind, SESSION_ID, sender, recipient, b'', payload))

    if msg.recipient == RELAYER:
        try:
            session, emitted = step_session(session, _thaw(msg))
        except ProtocolViolation:
            return session, [], 1
        return session, emitted, 0

    if msg.recipient == ESCROW:
        _, amount, _ = FUNDS_BRANCHES[state.branch.funds]
        try:
            if msg.kind == MSG_DEPOSIT_REQUEST:
                book.deposit(SESSION_ID, DEVICE_B, DEVICE_A, amount)
                send(MSG_DEPOSITED, ESCROW, RELAYER)
            elif msg.kind == MSG_FUNDS_QUERY:
                required = dict(msg.payload)["required"]
                sufficient = book.verify_funds(SESSION_ID, required)
                send(MSG_FUNDS_OK if sufficient else MSG_FUNDS_SHORT, ESCROW, RELAYER)
            elif msg.kind == MSG_RELEASE_REQUEST:
                book.release(SESSION_ID, msg.sender)
                send(MSG_RELEASE_DONE, ESCROW, RELAYER)
                send(MSG_RELEASE_DONE, ESCROW, DEVICE_A)
            elif msg.kind == MSG_WITHDRAW_REQUEST:
                book.withdraw(SESSION_ID, msg.sender)
                send(MSG_WITHDRAW_DONE, ESCROW, RELAYER)
            elif msg.kind == MSG_REFUND_REQUEST:
                book.mark_failed(SESSION_ID)
                book.refund(SESSION_ID)
                send(MSG_REFUND_DONE, ESCROW, DEVICE_B)
        except ZkIotError:
            # Refused escrow operations produce no reply
            pass
        return session, out, 0

    if msg.recipient == NODE_X:
        if msg.kind == MSG_NEW_DATA_NOTICE:
            send(MSG_PROOF_SUBMITTED, NODE_X, RELAYER)
        elif msg.kind == MSG_DATA_TRANSFER:
            send(MSG_DATA_TRANSFER, NODE_X, RELAYER)
    elif msg.recipient == NODE_Y:
        if msg.kind == MSG_DATA_DELIVERY:
            send(MSG_DATA_DELIVERY, NODE_Y, RELAYER)
            send(MSG_VERIFY_RESULT, NODE_Y, RELAYER, {"accepted": state.branch.honest})
    elif msg.recipient == DEVICE_A and msg.kind == MSG_RELEASE_DONE:
        send(MSG_WITHDRAW_REQUEST, DEVICE_A, ESCROW)
    return session, out, 0


def _enqueue(channels: dict, messages: list[ProtocolMessage]):
    for msg in messages:
        pair = (msg.sender, msg.recipient)
        channels[pair] = channels.get(pair, ()) + (_freeze(msg),)


def _pack(state: GlobalState, session: Session, channels: dict, book: EscrowBook, **flags) -> GlobalState:
    return replace(
        state,
        session=session,
        channels=tuple(sorted((pair, msgs) for pair, msgs in channels.items() if msgs)),
        balances=tuple(sorted(book.balances.items())),
        accounts=tuple(book.accounts[s] for s in sorted(book.accounts)),
        failed=frozenset(book.failed),
        **flags,
    )


def successors(state: GlobalState) -> list[tuple[str, GlobalState, int]]:
    """Every (label, next state, dropped) one event away."""
    result = []
    channels = dict(state.channels)

    # 1. Deliver the head of any non-empty channel
    for pair, queue in state.channels:
        book = state.book()
        session, emitted, dropped = _react(state, book, queue[0])
        rest = dict(channels)
        rest[pair] = queue[1:]
        _enqueue(rest, emitted)
        result.append((f"{queue[0].kind} {pair[0]}>{pair[1]}", _pack(state, session, rest, book), dropped))

    # 2. The producer emits once the deposit is confirmed
    if not state.emitted and STATE_FUNDED in state.session.history and not state.session.terminal:
        rest = dict(channels)
        _enqueue(rest, [ProtocolMessage(MSG_NEW_DATA_NOTICE, SESSION_ID, DEVICE_A, NODE_X)])
        result.append(("emit", _pack(state, state.session, rest, state.book(), emitted=True), 0))

    # 3. The clock fires once
    if not state.timeout_used and not state.session.terminal:
        rest = dict(channels)
        _enqueue(rest, [ProtocolMessage(MSG_TIMEOUT, SESSION_ID, config.CLOCK_ID, RELAYER)])
        result.append(("timeout", _pack(state, state.session, rest, state.book(), timeout_used=True), 0))
    return result


def initial_state(branch: Branch) -> GlobalState:
    balance, _, required = FUNDS_BRANCHES[branch.funds]
    session = Session(SESSION_ID, DEVICE_A, DEVICE_B, NODE_X, NODE_Y, "cx", "cy",
                      amount=FUNDS_BRANCHES[branch.funds][1], required=required)
    book = EscrowBook({DEVICE_A: 0, DEVICE_B: balance})
    channels: dict = {}
    _enqueue(channels, [ProtocolMessage(MSG_DEPOSIT_REQUEST, SESSION_ID, DEVICE_B, ESCROW)])
    blank = GlobalState(branch, session, (), (), (), frozenset())
    return _pack(blank, session, channels, book)


# === Properties ===

def _check_state(state: GlobalState, initial: GlobalState) -> list[str]:
    problems = []
    if state.book().total_tokens() != initial.book().total_tokens():
        problems.append("conservation")
    history = state.session.history
    paid = state.balance(DEVICE_A) > initial.balance(DEVICE_A)
    if (paid or state.session.state == STATE_WITHDRAWN) and not (
            STATE_PROOF_VERIFIED in history and STATE_ACKED in history):
        problems.append("paid-without-verification")
    return problems


def _check_quiescent(state: GlobalState, initial: GlobalState) -> list[str]:
    problems = []
    accounts = {a.session: a for a in state.accounts}
    account = accounts.get(SESSION_ID)
    if account is not None:
        if account.state == ESCROW_OPEN:
            problems.append("escrow-left-open")
        if state.session.state == STATE_FAILED and account.state != ESCROW_REFUNDED:
            problems.append("failed-not-refunded")
        credited_a = state.balance(DEVICE_A) - initial.balance(DEVICE_A)
        credited_b = state.balance(DEVICE_B) - (initial.balance(DEVICE_B) - account.amount)
        expected = {ESCROW_WITHDRAWN: (account.amount, 0), ESCROW_REFUNDED: (0, account.amount)}
        if expected.get(account.state, (credited_a, credited_b)) != (credited_a, credited_b):
            problems.append("fund-movement")
    if state.branch.live and not state.timeout_used and state.session.state != STATE_WITHDRAWN:
        problems.append("liveness")
    return problems


def explore_protocol(branches: list[Branch] | None = None, limit: int = STATE_LIMIT) -> ModelCheckResult:
    """Exhaustive BFS; stops with a 'state-limit' violation past 'limit' states."""
    if branches is None:
        branches = [Branch(funds, honest) for funds in FUNDS_BRANCHES for honest in (True, False)]
    result = ModelCheckResult()
    for branch in branches:
        start = initial_state(branch)
        seen = {start}
        parent: dict[GlobalState, tuple[GlobalState, str]] = {}
        queue = deque([start])
        while queue:
            state = queue.popleft()
            result.states += 1
            if result.states > limit:
                result.violations.append(f"state-limit: more than {limit} states")
                return result

            problems = _check_state(state, start)
            nexts = successors(state)
            if not nexts:
                result.outcomes[state.session.label] += 1
                problems += _check_quiescent(state, start)
            elif branch.live and not state.timeout_used and all(label == "timeout" for label, _, _ in nexts):
                problems.append("liveness")
            for problem in problems:
                trace = _trace(parent, state)
                result.violations.append(f"{problem} [{branch.funds}, honest={branch.honest}]: {trace}")
                logger.warning(result.violations[-1])

            for label, nxt, dropped in nexts:
                result.transitions += 1
                result.dropped += dropped
                if nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = (state, label)
                    queue.append(nxt)
    logger.info(f"Explored {result.states} states, {result.transitions} transitions, "
                f"{len(result.violations)} violations")
    return result


def _trace(parent: dict, state: GlobalState) -> str:
    labels = []
    while state in parent:
        state, label = parent[state]
        labels.append(label)
    return " -> ".join(reversed(labels)) or "<initial>"
