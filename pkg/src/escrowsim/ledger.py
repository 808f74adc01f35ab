"""Account-based ledger: queued transactions, flat gas metering, block mining.

This is the stand-in for the public chain. It keeps balances, nonces and the
deployed escrow contracts, applies queued transactions when a block is mined
and exposes the global event log to every observer.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from . import escrow
from .encoding import U128_MAX, enum8, lp, text, u64, u128
from .escrow import EscrowRevert, EscrowState, EventKind
from .symcrypto import digest

log = logging.getLogger(__name__)

WEI_PER_ETHER = 10**18
GWEI = 10**9
# Plain value transfers are not in the contract gas schedule.
TRANSFER_GAS = 21_000
ZERO_HASH = bytes(32)
GENESIS_CURSOR = (0, -1)


class LedgerError(Exception):
    pass


class DuplicateAddress(LedgerError): pass
class UnknownSender(LedgerError): pass
class UnknownAddress(LedgerError): pass
class BadNonce(LedgerError): pass
class CursorBeyondHead(LedgerError): pass
class WeiOverflow(LedgerError): pass
class UnknownContract(LedgerError): pass


def derive_address(seed: bytes) -> bytes:
    return digest(b"addr" + seed)[:20]


def check_wei(amount: int) -> int:
    if not 0 <= amount <= U128_MAX:
        raise WeiOverflow(f"wei amount out of range: {amount}")
    return amount


@dataclass(frozen=True)
class GasSchedule:
    deploy: int = 505_822
    register: int = 22_796
    request_key: int = 22_796
    set_pk: int = 29_881
    set_sk: int = 22_144
    pay: int = 28_326
    split: int = 37_515

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"gas schedule entry {name!r} must be a positive integer")

    def as_dict(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def for_function(self, function: str) -> int | None:
        attr = FUNCTION_GAS_FIELD.get(function)
        return None if attr is None else getattr(self, attr)


FUNCTION_GAS_FIELD = {
    "deploy": "deploy",
    "register_affiliate": "register",
    "request_sample_key": "request_key",
    "set_sample_pk": "set_pk",
    "set_sample_sk": "set_sk",
    "pay_ransom": "pay",
    "split_ransom": "split",
}


@dataclass(frozen=True)
class Transfer:
    to: bytes


@dataclass(frozen=True)
class ContractCall:
    contract: bytes
    function: str
    args: bytes = b""


@dataclass(frozen=True)
class Deploy:
    args: bytes


Target = Union[Transfer, ContractCall, Deploy]


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    nonce: int
    target: Target
    value: int = 0
    gas_price: int = 0

    def encode(self) -> bytes:
        t = self.target
        if isinstance(t, Transfer):
            body = enum8(0) + lp(t.to)
        elif isinstance(t, ContractCall):
            body = enum8(1) + lp(t.contract) + text(t.function) + lp(t.args)
        else:
            body = enum8(2) + lp(t.args)
        return (lp(self.sender) + u64(self.nonce) + body
                + u128(self.value) + u128(self.gas_price))

    @property
    def hash(self) -> bytes:
        return digest(self.encode())

    @property
    def kind(self) -> str:
        return {Transfer: "transfer", ContractCall: "call", Deploy: "deploy"}[type(self.target)]

    @property
    def function(self) -> str | None:
        if isinstance(self.target, ContractCall):
            return self.target.function
        if isinstance(self.target, Deploy):
            return "deploy"
        return None


@dataclass(frozen=True)
class Event:
    block_number: int
    index: int
    tx_hash: bytes
    kind: EventKind
    attrs: dict[str, bytes]

    @property
    def position(self) -> tuple[int, int]:
        return (self.block_number, self.index)


@dataclass
class Receipt:
    tx: Transaction
    tx_hash: bytes
    status: str
    gas_used: int
    fee: int
    events: list[Event] = field(default_factory=list)
    error: str | None = None
    contract: bytes | None = None

    @property
    def succeeded(self) -> bool:
        return self.status == "succeeded"


@dataclass
class Block:
    number: int
    timestamp: float
    parent: bytes
    receipts: list[Receipt] = field(default_factory=list)

    @property
    def hash(self) -> bytes:
        body = u64(self.number) + repr(float(self.timestamp)).encode() + self.parent
        return digest(body + b"".join(r.tx_hash for r in self.receipts))


def contract_address(deployer: bytes, nonce: int) -> bytes:
    return digest(b"contract" + deployer + u64(nonce))[:20]


class Ledger:
    """The simulated chain.

    ``rng`` feeds the inter-block time draws; pass a seed or a numpy
    ``Generator`` so that runs are reproducible.
    """

    def __init__(self, gas_schedule: GasSchedule | None = None, block_mean_s: float = 13.0,
                 rng: np.random.Generator | int | None = 0):
        if block_mean_s <= 0:
            raise ValueError("block_mean_s must be positive")
        self.gas = gas_schedule or GasSchedule()
        self.block_mean_s = float(block_mean_s)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.balances: dict[bytes, int] = {}
        self.nonces: dict[bytes, int] = {}
        self.contracts: dict[bytes, EscrowState] = {}
        self.initial_supply = 0
        self.blocks: list[Block] = [Block(0, 0.0, ZERO_HASH)]
        self.events: list[Event] = []
        self._event_keys: list[tuple[int, int]] = []
        self.queue: list[Transaction] = []
        self._queued_nonce: dict[bytes, int] = {}
        self._next_dt: float | None = None
        self._receipts: dict[bytes, Receipt] = {}
        self.miner_sink = self._open(b"miner-sink", 0)

    # -- accounts ----------------------------------------------------------

    def _open(self, seed: bytes, initial_balance: int) -> bytes:
        addr = derive_address(seed)
        if addr in self.balances:
            raise DuplicateAddress(addr.hex())
        self.balances[addr] = check_wei(initial_balance)
        self.nonces[addr] = 0
        self.initial_supply += initial_balance
        return addr

    def create_account(self, seed: bytes, initial_balance: int = 0) -> bytes:
        if not seed:
            raise ValueError("account seed must be non-empty")
        return self._open(bytes(seed), initial_balance)

    def balance(self, addr: bytes) -> int:
        try:
            return self.balances[addr]
        except KeyError:
            raise UnknownAddress(addr.hex()) from None

    def total_supply(self) -> int:
        return sum(self.balances.values())

    def next_nonce(self, addr: bytes) -> int:
        return self._queued_nonce.get(addr, self.nonces.get(addr, 0))

    def contract(self, contract_id: bytes) -> EscrowState:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise UnknownContract(contract_id.hex()) from None

    # -- submission --------------------------------------------------------

    def submit_tx(self, tx: Transaction) -> bytes:
        if tx.sender not in self.balances:
            raise UnknownSender(tx.sender.hex())
        expected = self.next_nonce(tx.sender)
        if tx.nonce != expected:
            raise BadNonce(f"expected nonce {expected}, got {tx.nonce}")
        check_wei(tx.value)
        check_wei(tx.gas_price)
        self.queue.append(tx)
        self._queued_nonce[tx.sender] = expected + 1
        return tx.hash

    # -- mining ------------------------------------------------------------

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def next_block_time(self) -> float:
        """Timestamp the next block will carry; drawn once and cached."""
        if self._next_dt is None:
            dt = float(self.rng.exponential(self.block_mean_s))
            self._next_dt = dt if dt > 0 else np.nextafter(0.0, 1.0)
        ts = self.head.timestamp + self._next_dt
        if ts <= self.head.timestamp:
            ts = float(np.nextafter(self.head.timestamp, np.inf))
        return ts

    def mine_next_block(self, clock=None) -> Block:
        ts = self.next_block_time()
        self._next_dt = None
        block = Block(self.head.number + 1, ts, self.head.hash)
        queued, self.queue = self.queue, []
        self._queued_nonce.clear()
        for tx in queued:
            receipt = self._apply(tx, block)
            block.receipts.append(receipt)
            self._receipts[receipt.tx_hash] = receipt
        self.blocks.append(block)
        if clock is not None:
            clock.advance_to(ts)
        log.debug("mined block %d at %.3f with %d txs", block.number, ts, len(queued))
        return block

    def _gas_for(self, tx: Transaction) -> int:
        fn = tx.function
        if fn is None:
            return TRANSFER_GAS
        gas = self.gas.for_function(fn)
        return TRANSFER_GAS if gas is None else gas

    def _credit(self, addr: bytes, amount: int) -> None:
        self.balances[addr] = check_wei(self.balances[addr] + amount)

    def _apply(self, tx: Transaction, block: Block) -> Receipt:
        tx_hash = tx.hash
        sender = tx.sender
        self.nonces[sender] += 1
        gas = self._gas_for(tx)
        cost = gas * tx.gas_price
        available = self.balances[sender]
        if available < tx.value + cost:
            charged = min(cost, available)
            self.balances[sender] -= charged
            self._credit(self.miner_sink, charged)
            return Receipt(tx, tx_hash, "reverted", gas, charged, error="InsufficientFunds")
        self.balances[sender] -= cost
        self._credit(self.miner_sink, cost)

        target = tx.target
        if isinstance(target, Transfer):
            if target.to not in self.balances:
                return Receipt(tx, tx_hash, "reverted", gas, cost, error="UnknownAddress")
            if target.to in self.contracts:
                # contract balances must track escrow accounting exactly
                return Receipt(tx, tx_hash, "reverted", gas, cost, error="NotPayable")
            self.balances[sender] -= tx.value
            self._credit(target.to, tx.value)
            return Receipt(tx, tx_hash, "succeeded", gas, cost)

        if isinstance(target, Deploy):
            if tx.value:
                return Receipt(tx, tx_hash, "reverted", gas, cost, error="NotPayable")
            try:
                state = escrow.deploy_from_args(target.args)
            except EscrowRevert as exc:
                return Receipt(tx, tx_hash, "reverted", gas, cost, error=exc.reason)
            cid = contract_address(sender, tx.nonce)
            self.contracts[cid] = state
            self.balances[cid] = 0
            self.nonces[cid] = 0
            return Receipt(tx, tx_hash, "succeeded", gas, cost, contract=cid)

        state = self.contracts.get(target.contract)
        if state is None:
            return Receipt(tx, tx_hash, "reverted", gas, cost, error="UnknownContract")
        try:
            effects = escrow.dispatch(state, sender, target.function, target.args,
                                      tx.value, tx_hash)
        except EscrowRevert as exc:
            return Receipt(tx, tx_hash, "reverted", gas, cost, error=exc.reason)
        self.balances[sender] -= tx.value
        self._credit(target.contract, tx.value)
        for recipient, amount in effects.payouts:
            self.balances[target.contract] -= amount
            self._credit(recipient, amount)
        receipt = Receipt(tx, tx_hash, "succeeded", gas, cost)
        base = sum(len(r.events) for r in block.receipts)
        for i, (kind, attrs) in enumerate(effects.events):
            ev = Event(block.number, base + i, tx_hash, kind, attrs)
            receipt.events.append(ev)
            self.events.append(ev)
            self._event_keys.append(ev.position)
        return receipt

    # -- reads ---------------------------------------------------------------

    def events_since(self, cursor: tuple[int, int] = GENESIS_CURSOR,
                     kinds: Iterable[EventKind] | None = None) -> list[Event]:
        if cursor[0] > self.head.number:
            raise CursorBeyondHead(f"cursor block {cursor[0]} > head {self.head.number}")
        start = bisect.bisect_right(self._event_keys, tuple(cursor))
        found = self.events[start:]
        if kinds is not None:
            wanted = set(kinds)
            found = [e for e in found if e.kind in wanted]
        return found

    def receipt(self, tx_hash: bytes) -> Receipt | None:
        return self._receipts.get(tx_hash)
