# Message kind and session state constants
# Defines every protocol message, the escrow session states, the node request
# vocabulary, and request validation.

from dataclasses import dataclass

# Protocol message kinds (relayer workflow)
MSG_DEPOSIT_REQUEST = "DepositRequest"
MSG_DEPOSITED = "Deposited"
MSG_NEW_DATA_NOTICE = "NewDataNotice"
MSG_PROOF_SUBMITTED = "ProofSubmitted"
MSG_FUNDS_QUERY = "FundsQuery"
MSG_FUNDS_OK = "FundsOk"
MSG_FUNDS_SHORT = "FundsShort"
MSG_DATA_TRANSFER = "DataTransfer"
MSG_DATA_DELIVERY = "DataDelivery"
MSG_VERIFY_RESULT = "VerifyResult"
MSG_ACK = "Ack"
MSG_RECEIVED_NOTICE = "ReceivedNotice"
MSG_RELEASE_CMD = "ReleaseCmd"
MSG_RELEASE_REQUEST = "ReleaseRequest"
MSG_RELEASE_DONE = "ReleaseDone"
MSG_WITHDRAW_REQUEST = "WithdrawRequest"
MSG_WITHDRAW_DONE = "WithdrawDone"
MSG_REFUND_REQUEST = "RefundRequest"
MSG_REFUND_DONE = "RefundDone"
MSG_TIMEOUT = "Timeout"

MESSAGE_KINDS = (
    MSG_DEPOSIT_REQUEST, MSG_DEPOSITED, MSG_NEW_DATA_NOTICE, MSG_PROOF_SUBMITTED,
    MSG_FUNDS_QUERY, MSG_FUNDS_OK, MSG_FUNDS_SHORT, MSG_DATA_TRANSFER, MSG_DATA_DELIVERY,
    MSG_VERIFY_RESULT, MSG_ACK, MSG_RECEIVED_NOTICE, MSG_RELEASE_CMD, MSG_RELEASE_REQUEST,
    MSG_RELEASE_DONE, MSG_WITHDRAW_REQUEST, MSG_WITHDRAW_DONE, MSG_REFUND_REQUEST,
    MSG_REFUND_DONE, MSG_TIMEOUT,
)

# Workflow step (1..11) each kind belongs to; failure-path kinds have none
MESSAGE_STEPS = {
    MSG_DEPOSIT_REQUEST: 1, MSG_DEPOSITED: 1,
    MSG_NEW_DATA_NOTICE: 2, MSG_PROOF_SUBMITTED: 2,
    MSG_FUNDS_QUERY: 3, MSG_FUNDS_OK: 3, MSG_FUNDS_SHORT: 3,
    MSG_DATA_TRANSFER: 4,
    MSG_DATA_DELIVERY: 5,
    MSG_VERIFY_RESULT: 6,
    MSG_ACK: 7,
    MSG_RECEIVED_NOTICE: 8,
    MSG_RELEASE_CMD: 9,
    MSG_RELEASE_REQUEST: 10, MSG_RELEASE_DONE: 10,
    MSG_WITHDRAW_REQUEST: 11, MSG_WITHDRAW_DONE: 11,
}

# Session states, in workflow order
STATE_INIT = "INIT"
STATE_FUNDED = "FUNDED"
STATE_PROOF_SUBMITTED = "PROOF_SUBMITTED"
STATE_FUNDS_VERIFIED = "FUNDS_VERIFIED"
STATE_DATA_AT_RELAYER = "DATA_AT_RELAYER"
STATE_DATA_DELIVERED = "DATA_DELIVERED"
STATE_PROOF_VERIFIED = "PROOF_VERIFIED"
STATE_ACKED = "ACKED"
STATE_RELEASE_AUTHORIZED = "RELEASE_AUTHORIZED"
STATE_FUNDS_RELEASED = "FUNDS_RELEASED"
STATE_WITHDRAWN = "WITHDRAWN"
STATE_FAILED = "FAILED"

HAPPY_PATH = (
    STATE_INIT, STATE_FUNDED, STATE_PROOF_SUBMITTED, STATE_FUNDS_VERIFIED,
    STATE_DATA_AT_RELAYER, STATE_DATA_DELIVERED, STATE_PROOF_VERIFIED, STATE_ACKED,
    STATE_RELEASE_AUTHORIZED, STATE_FUNDS_RELEASED, STATE_WITHDRAWN,
)
TERMINAL_STATES = (STATE_WITHDRAWN, STATE_FAILED)

# Failure reasons
FAIL_FUNDS = "funds"
FAIL_PROOF = "proof"
FAIL_TIMEOUT = "timeout"

# Escrow account states
ESCROW_OPEN = "OPEN"
ESCROW_RELEASABLE = "RELEASABLE"
ESCROW_WITHDRAWN = "WITHDRAWN"
ESCROW_REFUNDED = "REFUNDED"

# Hot-storage record kinds
RECORD_PROOF = "proof"
RECORD_KEY = "key"
RECORD_CONTRACT = "contract"
RECORD_DEPOSIT = "deposit"
RECORD_RELEASE = "release"
RECORD_WITHDRAW = "withdraw"
RECORD_REFUND = "refund"
RECORD_FAILURE = "failure"

# Node request collections and actions
COLLECTION_ESCROW = "Escrow"
COLLECTION_PROOF = "Proof"
COLLECTION_CONTRACT = "Contract"
COLLECTION_COLD = "Cold"

NODE_ACTIONS = {
    COLLECTION_ESCROW: ("deposit", "verify_funds", "release", "withdraw", "refund", "mark_failed", "get"),
    COLLECTION_PROOF: ("append", "read"),
    COLLECTION_CONTRACT: ("register", "evaluate", "get"),
    COLLECTION_COLD: ("put", "get"),
}


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    session_id: str
    sender: str
    recipient: str
    digest: bytes = b''
    payload: object = None

    @property
    def step(self) -> int | None:
        return MESSAGE_STEPS.get(self.kind)


def validate_request(request: dict) -> tuple[bool, str]:
    """
    Validate a node request message structure.

    Args:
        request: Dictionary containing the request

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(request, dict):
        return False, "Request must be a dictionary"

    for key in ('collection', 'action'):
        if key not in request:
            return False, f"Request must contain '{key}' field"
        if not isinstance(request[key], str):
            return False, f"'{key}' must be a string"

    collection = request['collection']
    action = request['action']
    if collection not in NODE_ACTIONS:
        return False, f"Unknown collection '{collection}'"
    if action not in NODE_ACTIONS[collection]:
        return False, f"Unknown action '{action}' for {collection}"

    data = request.get('data', {})
    if not isinstance(data, dict):
        return False, "'data' must be a dictionary"
    if collection == COLLECTION_ESCROW and action != "get" and 'session' not in data:
        return False, f"Action '{action}' requires 'session' in data"
    return True, ""
