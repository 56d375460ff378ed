# Escrow handler
# Token reserve pool for data transactions: the receiver deposits, the relayer
# releases on the receiving contract's instruction, the producer withdraws.
# Failed sessions refund the depositor.
#
# OPEN -> RELEASABLE -> WITHDRAWN
# OPEN -> REFUNDED (session marked failed)

import json
import logging
from dataclasses import dataclass, replace
from typing import Callable

from common import config
from common.errors import (DuplicateSession, InsufficientFunds, StateError, Unauthorized,
                           UnknownSession)
from common.message_types import (ESCROW_OPEN, ESCROW_REFUNDED, ESCROW_RELEASABLE, ESCROW_WITHDRAWN,
                                  RECORD_DEPOSIT, RECORD_FAILURE, RECORD_REFUND, RECORD_RELEASE,
                                  RECORD_WITHDRAW)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EscrowAccount:
    session: str
    depositor: str
    beneficiary: str
    amount: int
    state: str = ESCROW_OPEN

    def row(self) -> str:
        return f"{self.session}|{self.state}|{self.amount}|{self.depositor}|{self.beneficiary}"


class EscrowBook:
    """
    Balances and escrow accounts. Every mutation is reported to 'recorder'
    (kind, payload bytes) so it lands in hot storage.
    """

    def __init__(self, balances: dict[str, int] | None = None,
                 recorder: Callable[[str, bytes], object] | None = None):
        self.balances: dict[str, int] = dict(balances or {})
        self.accounts: dict[str, EscrowAccount] = {}
        self.failed: set[str] = set()
        self.recorder = recorder

    def __deepcopy__(self, memo):
        clone = EscrowBook(self.balances, None)
        clone.accounts = dict(self.accounts)
        clone.failed = set(self.failed)
        return clone

    def _record(self, kind: str, account: EscrowAccount):
        if self.recorder is None:
            return
        payload = json.dumps({"session": account.session, "state": account.state,
                              "amount": account.amount, "from": account.depositor,
                              "to": account.beneficiary}, sort_keys=True).encode('utf-8')
        self.recorder(kind, payload)

    def _get(self, session: str) -> EscrowAccount:
        account = self.accounts.get(session)
        if account is None:
            raise UnknownSession(f"No escrow for session '{session}'")
        return account

    def balance(self, party: str) -> int:
        return self.balances.get(party, 0)

    def deposit(self, session: str, depositor: str, beneficiary: str, amount: int) -> EscrowAccount:
        if session in self.failed:
            raise StateError(f"Session '{session}' already failed; deposit refused")
        if amount <= 0:
            raise ValueError(f"Deposit amount must be positive, got {amount}")
        if session in self.accounts:
            raise DuplicateSession(f"Session '{session}' already has an escrow")
        if self.balance(depositor) < amount:
            raise InsufficientFunds(f"{depositor} holds {self.balance(depositor)}, needs {amount}")
        self.balances[depositor] = self.balance(depositor) - amount
        account = EscrowAccount(session, depositor, beneficiary, amount)
        self.accounts[session] = account
        self._record(RECORD_DEPOSIT, account)
        logger.info(f"Escrow {session}: {depositor} deposited {amount} for {beneficiary}")
        return account

    def verify_funds(self, session: str, required: int) -> bool:
        account = self._get(session)
        return account.state == ESCROW_OPEN and account.amount >= required

    def release(self, session: str, caller: str = config.RELAYER_ID) -> EscrowAccount:
        account = self._get(session)
        if caller != config.RELAYER_ID:
            raise Unauthorized(f"Only the relayer may release funds, not '{caller}'")
        if account.state != ESCROW_OPEN:
            raise StateError(f"Cannot release escrow in state {account.state}")
        account = replace(account, state=ESCROW_RELEASABLE)
        self.accounts[session] = account
        self._record(RECORD_RELEASE, account)
        return account

    def withdraw(self, session: str, caller: str) -> EscrowAccount:
        account = self._get(session)
        if caller != account.beneficiary:
            raise Unauthorized(f"'{caller}' is not the beneficiary of session '{session}'")
        if account.state != ESCROW_RELEASABLE:
            raise StateError(f"Cannot withdraw escrow in state {account.state}")
        self.balances[caller] = self.balance(caller) + account.amount
        account = replace(account, state=ESCROW_WITHDRAWN)
        self.accounts[session] = account
        self._record(RECORD_WITHDRAW, account)
        logger.info(f"Escrow {session}: {caller} withdrew {account.amount}")
        return account

    def mark_failed(self, session: str):
        """Authorises a refund. Works before a deposit too, so a late deposit is refused."""
        self.failed.add(session)
        account = self.accounts.get(session)
        if account is not None:
            self._record(RECORD_FAILURE, account)

    def refund(self, session: str) -> EscrowAccount:
        account = self._get(session)
        if account.state != ESCROW_OPEN:
            raise StateError(f"Cannot refund escrow in state {account.state}")
        if session not in self.failed:
            raise StateError(f"Session '{session}' has not been marked failed")
        self.balances[account.depositor] = self.balance(account.depositor) + account.amount
        account = replace(account, state=ESCROW_REFUNDED)
        self.accounts[session] = account
        self._record(RECORD_REFUND, account)
        logger.warning(f"Escrow {session}: refunded {account.amount} to {account.depositor}")
        return account

    def total_tokens(self) -> int:
        """Balances plus everything still held in escrow."""
        held = sum(a.amount for a in self.accounts.values()
                   if a.state in (ESCROW_OPEN, ESCROW_RELEASABLE))
        return sum(self.balances.values()) + held

    def dump(self) -> str:
        return "".join(self.accounts[s].row() + "\n" for s in sorted(self.accounts))


def handle_escrow_request(book: EscrowBook, action: str, data: dict) -> dict:
    """Node-facing dispatch; exceptions propagate to the node's process_request."""
    session = data.get('session')
    if action == "deposit":
        account = book.deposit(session, data['depositor'], data['beneficiary'], int(data['amount']))
        return {"status": "ok", "escrow": account.row()}
    elif action == "verify_funds":
        return {"status": "ok", "sufficient": book.verify_funds(session, int(data['required']))}
    elif action == "release":
        account = book.release(session, data.get('caller', config.RELAYER_ID))
        return {"status": "ok", "escrow": account.row()}
    elif action == "withdraw":
        account = book.withdraw(session, data['caller'])
        return {"status": "ok", "escrow": account.row(), "amount": account.amount}
    elif action == "mark_failed":
        book.mark_failed(session)
        return {"status": "ok"}
    elif action == "refund":
        account = book.refund(session)
        return {"status": "ok", "escrow": account.row(), "amount": account.amount}
    elif action == "get":
        if session is None:
            return {"status": "ok", "escrow": [book.accounts[s].row() for s in sorted(book.accounts)]}
        return {"status": "ok", "escrow": book._get(session).row()}
    return {"status": "error", "reason": f"Unknown action '{action}' for Escrow"}
