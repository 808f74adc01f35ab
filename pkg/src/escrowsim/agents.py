"""Scenario orchestration: author responder, affiliates and victims.

One :class:`Scenario` owns a clock, a ledger, a content store and a trace.
Agents never talk to each other directly. Everything they learn comes from
public ledger events, contract reads, transaction receipts or content-store
retrievals, and every action they take lands in the trace.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import escrow, symcrypto
from .caststore import ContentKind, ContentObject, ContentStore, NodeOffline, Unavailable
from .clock import ScenarioClock
from .escrow import EventKind, SecretMode
from .ledger import (GWEI, WEI_PER_ETHER, Block, ContractCall, Deploy, Event, GasSchedule,
                     Ledger, Transaction, contract_address)
from .trace import Trace, block_detail

log = logging.getLogger(__name__)

RETRY_BASE_S = 60.0
RETRY_FACTOR = 2.0
RETRY_CAP_S = 3600.0
# simulated processing span charged per author wake-up with work to do
AUTHOR_PROCESSING_S = 1.0
# affiliates come online over the first few blocks after deployment
AFFILIATE_START_BLOCK = 2
AFFILIATE_START_SPREAD = 8

AUTHOR_ENDOWMENT = 100 * WEI_PER_ETHER
AFFILIATE_ENDOWMENT = WEI_PER_ETHER


class ConfigInvalid(ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{f}: {msg}" for f, msg in problems))


def backoff_delay(attempt: int) -> float:
    return min(RETRY_BASE_S * RETRY_FACTOR ** attempt, RETRY_CAP_S)


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_affiliates: int = 100
    samples_per_affiliate: int = 1
    victims_per_sample: int = 1
    pay_probability: float = 1.0
    ransom_amount: int = WEI_PER_ETHER
    affiliate_share_bp: int = 3000
    gas_price: int = GWEI
    gas_schedule: GasSchedule = field(default_factory=GasSchedule)
    block_mean_s: float = 13.0
    churn: tuple[float, float] = (3600.0, 600.0)
    n_store_nodes: int = 8
    author_poll_blocks: int = 1
    encrypt_onchain_payloads: bool = False
    duration_blocks: int = 200
    # extensions beyond the core field list; all optional in JSON
    split_before_sk: bool = False
    publisher_offline_after_block: int | None = None
    warm_retrievals: int | None = None
    fault_underpay_probability: float = 0.0
    store_capacity: int | None = None

    @property
    def n_victims(self) -> int:
        return self.n_affiliates * self.samples_per_affiliate * self.victims_per_sample

    @property
    def effective_warm_retrievals(self) -> int:
        return self.n_store_nodes if self.warm_retrievals is None else self.warm_retrievals

    def to_dict(self) -> dict[str, Any]:
        on, off = self.churn
        return {
            "seed": self.seed,
            "n_affiliates": self.n_affiliates,
            "samples_per_affiliate": self.samples_per_affiliate,
            "victims_per_sample": self.victims_per_sample,
            "pay_probability": self.pay_probability,
            "ransom_amount": self.ransom_amount,
            "affiliate_share_bp": self.affiliate_share_bp,
            "gas_price": self.gas_price,
            "gas_schedule": self.gas_schedule.as_dict(),
            "block_mean_s": self.block_mean_s,
            "churn": {"mean_online_s": None if math.isinf(on) else on,
                      "mean_offline_s": None if math.isinf(off) else off},
            "n_store_nodes": self.n_store_nodes,
            "author_poll_blocks": self.author_poll_blocks,
            "encrypt_onchain_payloads": self.encrypt_onchain_payloads,
            "duration_blocks": self.duration_blocks,
            "split_before_sk": self.split_before_sk,
            "publisher_offline_after_block": self.publisher_offline_after_block,
            "warm_retrievals": self.warm_retrievals,
            "fault_underpay_probability": self.fault_underpay_probability,
            "store_capacity": self.store_capacity,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return symcrypto.digest(self.canonical_json().encode())

    @classmethod
    def from_dict(cls, doc: dict[str, Any], notices: list[str] | None = None) -> "ScenarioConfig":
        """Validate a JSON document; raises :class:`ConfigInvalid` listing every problem."""
        if not isinstance(doc, dict):
            raise ConfigInvalid([("<root>", "config must be a JSON object")])
        problems: list[tuple[str, str]] = []
        defaults = cls()
        known = set(defaults.to_dict())
        for key in sorted(set(doc) - known):
            problems.append((key, "unknown field"))

        def integer(name, lo=0, hi=None, nullable=False):
            v = doc.get(name, getattr(defaults, name))
            if v is None and nullable:
                return None
            if isinstance(v, str) and v.isdigit():
                v = int(v)
            if isinstance(v, bool) or not isinstance(v, int):
                problems.append((name, f"expected an integer, got {v!r}"))
                return getattr(defaults, name)
            if v < lo or (hi is not None and v > hi):
                bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
                problems.append((name, f"{v} outside {bound}"))
            return v

        def number(name, lo=None, hi=None, positive=False):
            v = doc.get(name, getattr(defaults, name))
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                problems.append((name, f"expected a finite number, got {v!r}"))
                return getattr(defaults, name)
            if positive and v <= 0:
                problems.append((name, f"{v} must be positive"))
            if lo is not None and hi is not None and not lo <= v <= hi:
                problems.append((name, f"{v} outside [{lo}, {hi}]"))
            return float(v)

        def flag(name):
            v = doc.get(name, getattr(defaults, name))
            if not isinstance(v, bool):
                problems.append((name, f"expected true/false, got {v!r}"))
                return getattr(defaults, name)
            return v

        seed = integer("seed", 0, 2**64 - 1)
        n_aff = integer("n_affiliates")
        spa = integer("samples_per_affiliate")
        vps = integer("victims_per_sample")
        pay_p = number("pay_probability", 0.0, 1.0)
        ransom = integer("ransom_amount", 1, 2**128 - 1)
        share = integer("affiliate_share_bp", 0, escrow.BP_DENOMINATOR)
        gas_price = integer("gas_price", 0, 2**128 - 1)
        block_mean = number("block_mean_s", positive=True)
        n_nodes = integer("n_store_nodes")
        poll = integer("author_poll_blocks", 1)
        encrypt = flag("encrypt_onchain_payloads")
        duration = integer("duration_blocks", 1)
        split_first = flag("split_before_sk")
        offline_after = integer("publisher_offline_after_block", 0, nullable=True)
        warm = integer("warm_retrievals", 0, nullable=True)
        fault_p = number("fault_underpay_probability", 0.0, 1.0)
        capacity = integer("store_capacity", 0, nullable=True)

        schedule = defaults.gas_schedule
        if "gas_schedule" not in doc or doc["gas_schedule"] is None:
            if notices is not None:
                notices.append("gas_schedule not given; using the built-in default gas schedule")
        elif not isinstance(doc["gas_schedule"], dict):
            problems.append(("gas_schedule", "expected an object"))
        else:
            gs = doc["gas_schedule"]
            extra = sorted(set(gs) - set(schedule.as_dict()))
            for key in extra:
                problems.append((f"gas_schedule.{key}", "unknown entry"))
            merged = {**schedule.as_dict(), **{k: v for k, v in gs.items() if k not in extra}}
            bad = [k for k, v in merged.items()
                   if isinstance(v, bool) or not isinstance(v, int) or v <= 0]
            for key in bad:
                problems.append((f"gas_schedule.{key}", f"must be a positive integer, got {merged[key]!r}"))
            if not bad:
                schedule = GasSchedule(**merged)

        churn = defaults.churn
        raw = doc.get("churn", defaults.to_dict()["churn"])
        if not isinstance(raw, dict):
            problems.append(("churn", "expected an object with mean_online_s/mean_offline_s"))
        else:
            parsed = []
            for key in ("mean_online_s", "mean_offline_s"):
                v = raw.get(key)
                if v is None:
                    parsed.append(math.inf)
                elif isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                    problems.append((f"churn.{key}", f"must be positive or null, got {v!r}"))
                    parsed.append(math.inf)
                else:
                    parsed.append(float(v))
            for key in sorted(set(raw) - {"mean_online_s", "mean_offline_s"}):
                problems.append((f"churn.{key}", "unknown entry"))
            churn = tuple(parsed)

        if problems:
            raise ConfigInvalid(problems)
        return cls(seed, n_aff, spa, vps, pay_p, ransom, share, gas_price, schedule, block_mean,
                   churn, n_nodes, poll, encrypt, duration, split_first, offline_after, warm,
                   fault_p, capacity)

    @classmethod
    def from_json(cls, text: str, notices: list[str] | None = None) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text), notices)


# -- agent state ---------------------------------------------------------------

@dataclass
class ResponderState:
    """The author's off-chain responder. It only acts when polled."""

    address: bytes
    contract: bytes
    gas_price: int
    nonce: int = 0
    cursor: tuple[int, int] = (0, -1)
    split_before_sk: bool = False
    wakeups: int = 0
    online_s: float = 0.0


@dataclass
class AffiliateState:
    index: int
    address: bytes
    node: bytes
    n_samples: int
    registration_page: bytes
    contract: bytes | None = None
    registered: bool = False
    sample_ids: list[bytes] = field(default_factory=list)
    descriptors: dict[bytes, bytes] = field(default_factory=dict)
    attempts: int = 0
    done: bool = False

    @property
    def name(self) -> str:
        return f"affiliate-{self.index}"


PHASES = ("Infected", "Paid", "Recovered", "Abandoned")


@dataclass
class VictimState:
    index: int
    address: bytes
    node: bytes
    payment_page: bytes
    sample_id: bytes | None = None
    contract: bytes | None = None
    descriptor: bytes | None = None
    pk: bytes | None = None
    key_temp: bytes | None = None
    locked_asset: symcrypto.SymCiphertext | None = None
    sealed_key: symcrypto.AsymCiphertext | None = None
    phase: str | None = None
    will_pay: bool = False
    underpay_pending: bool = False
    ephemeral_sk: bytes | None = None
    pending_tx: bytes | None = None
    attempts: int = 0
    asset: bytes | None = None
    recovered_asset: bytes | None = None
    infected_block: int | None = None
    paid_block: int | None = None
    recovered_block: int | None = None
    # a co-victim of the same sample already paid; wait for the public secret
    covered: bool = False

    @property
    def name(self) -> str:
        return f"victim-{self.index}"


# -- step functions --------------------------------------------------------------

def _call(sender: bytes, nonce: int, contract: bytes, function: str, *args,
          value: int = 0, gas_price: int = 0) -> Transaction:
    return Transaction(sender, nonce, ContractCall(contract, function,
                                                   escrow.encode_args(function, *args)),
                       value, gas_price)


def author_step(state: ResponderState, new_events: list[Event]) -> list[Transaction]:
    """React to one batch of events; returns the transactions to submit."""
    txs = []

    def emit(function, *args):
        txs.append(_call(state.address, state.nonce, state.contract, function, *args,
                         gas_price=state.gas_price))
        state.nonce += 1

    for ev in new_events:
        state.cursor = ev.position
        sample_id = ev.attrs.get("sample_id")
        if ev.kind == EventKind.SampleKeyRequested:
            _, pk = symcrypto.kdf_keypair(sample_id)
            emit("set_sample_pk", sample_id, pk)
        elif ev.kind == EventKind.RansomPaid:
            sk, _ = symcrypto.kdf_keypair(sample_id)
            recipient_pk = ev.attrs.get("recipient_pk", b"")
            if recipient_pk:
                secret = (SecretMode.SEALED, symcrypto.seal(recipient_pk, sk).encode())
            else:
                secret = (SecretMode.CLEAR, sk)
            if state.split_before_sk:
                emit("split_ransom", sample_id)
                emit("set_sample_sk", sample_id, *secret)
            else:
                emit("set_sample_sk", sample_id, *secret)
                emit("split_ransom", sample_id)
    return txs


def parse_page(data: bytes) -> dict[str, str]:
    out = {}
    for line in data.decode("ascii").splitlines()[1:]:
        key, _, value = line.partition("=")
        out[key] = value
    return out


class Scenario:
    """A single deterministic campaign run.

    ``block_hooks`` are called with ``(scenario, block)`` after every mined
    block and after the scenario's own bookkeeping for that block.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        ledger_ss, store_ss, agent_ss = np.random.SeedSequence(config.seed).spawn(3)
        self.clock = ScenarioClock()
        self.ledger = Ledger(config.gas_schedule, config.block_mean_s,
                             np.random.default_rng(ledger_ss))
        self.store = ContentStore(self.clock, np.random.default_rng(store_ss))
        self.rng = np.random.default_rng(agent_ss)
        self.trace = Trace()
        self.block_hooks: list[Callable[["Scenario", Block], None]] = []
        self.affiliates: list[AffiliateState] = []
        self.victims: list[VictimState] = []
        self._feed_cursor = (0, -1)
        self._affiliate_by_sample: dict[bytes, AffiliateState] = {}
        self._victims_by_sample: dict[bytes, list[VictimState]] = {}
        self._victims_by_tx: dict[bytes, VictimState] = {}
        self._next_victim = 0
        self.finished = False

    # -- helpers -------------------------------------------------------------

    def _rec(self, actor: str, action: str, **kw) -> None:
        self.trace.record(self.clock.now, actor, action, **kw)

    def _submit(self, actor: str, tx: Transaction) -> bytes:
        h = self.ledger.submit_tx(tx)
        self._rec(actor, "submit", tx_hash=h, function=tx.function)
        return h

    def _seed(self, label: str) -> bytes:
        return f"{self.config.seed}/{label}".encode()

    def _retrieve(self, actor: str, node: bytes, cid: bytes) -> bytes | None:
        try:
            data = self.store.retrieve(node, cid)
        except (Unavailable, NodeOffline) as exc:
            self._rec(actor, "retrieve", outcome=type(exc).__name__, cid=cid.hex())
            return None
        self._rec(actor, "retrieve", cid=cid.hex())
        return data

    # -- setup ---------------------------------------------------------------

    def setup(self) -> None:
        cfg = self.config
        self._rec("scenario", "start", config_digest=cfg.digest().hex(), seed=cfg.seed)
        author = self.ledger.create_account(self._seed("author"), AUTHOR_ENDOWMENT)
        contract = contract_address(author, 0)
        self.author_node = self.store.add_node(self._seed("author-node"))
        self.store_nodes = [self.store.add_node(self._seed(f"store-{i}"), cfg.churn,
                                                cfg.store_capacity)
                            for i in range(cfg.n_store_nodes)]
        self.responder = ResponderState(author, contract, cfg.gas_price,
                                        split_before_sk=cfg.split_before_sk)

        pages = {
            ContentKind.RegistrationPage: b"registration-page\ncontract=" + contract.hex().encode(),
            ContentKind.PaymentPage: b"payment-page\ncontract=" + contract.hex().encode()
                                     + b"\nransom=" + str(cfg.ransom_amount).encode(),
            ContentKind.Other: b"builder-placeholder\ncontract=" + contract.hex().encode(),
        }
        self.page_ids = {}
        for kind, data in pages.items():
            cid = self.store.publish(self.author_node, data, pin=True)
            self.page_ids[kind] = cid
            self._rec("author", "publish", kind=kind.name, cid=cid.hex())

        deploy_args = escrow.encode_args("deploy", author, cfg.ransom_amount,
                                         cfg.affiliate_share_bp, int(cfg.encrypt_onchain_payloads))
        self._submit("author", Transaction(author, self.responder.nonce, Deploy(deploy_args),
                                           0, cfg.gas_price))
        self.responder.nonce += 1

        reg = self.page_ids[ContentKind.RegistrationPage]
        pay = self.page_ids[ContentKind.PaymentPage]
        for i in range(cfg.n_affiliates):
            addr = self.ledger.create_account(self._seed(f"affiliate-{i}"), AFFILIATE_ENDOWMENT)
            node = self.store.add_node(self._seed(f"affiliate-node-{i}"))
            self.affiliates.append(AffiliateState(i, addr, node, cfg.samples_per_affiliate, reg))
        victim_funds = cfg.ransom_amount + WEI_PER_ETHER
        for i in range(cfg.n_victims):
            addr = self.ledger.create_account(self._seed(f"victim-{i}"), victim_funds)
            node = self.store.add_node(self._seed(f"victim-node-{i}"))
            self.victims.append(VictimState(i, addr, node, pay))

        for i, node in enumerate(self.store_nodes[:cfg.effective_warm_retrievals]):
            self.clock.schedule(1.0, lambda i=i, node=node: self._warm(i, node), label="warm")
        if cfg.publisher_offline_after_block == 0:
            self._publisher_offline()

    def _warm(self, i: int, node: bytes) -> None:
        for kind in (ContentKind.RegistrationPage, ContentKind.PaymentPage):
            self._retrieve(f"store-node-{i}", node, self.page_ids[kind])

    def _publisher_offline(self) -> None:
        self.store.take_offline(self.author_node)
        self._rec("author", "node-offline")

    # -- affiliates ----------------------------------------------------------

    def affiliate_step(self, aff: AffiliateState) -> list[Transaction]:
        """Fetch the registration page, register, request sample keys, publish samples."""
        if aff.done:
            return []
        page = self._retrieve(aff.name, aff.node, aff.registration_page)
        if page is None:
            delay = backoff_delay(aff.attempts)
            aff.attempts += 1
            self._rec(aff.name, "defer", outcome="PageUnavailable", retry_in=delay)
            self.clock.schedule_in(delay, lambda: self._run_affiliate(aff), label="affiliate")
            return []
        aff.contract = bytes.fromhex(parse_page(page)["contract"])
        state = self.ledger.contracts.get(aff.contract)
        if state is not None and escrow.is_registered(state, aff.address):
            aff.registered = True
        gas_price = self.config.gas_price
        txs = []
        nonce = self.ledger.next_nonce(aff.address)
        if not aff.registered:
            txs.append(_call(aff.address, nonce, aff.contract, "register_affiliate",
                             gas_price=gas_price))
            nonce += 1
            aff.registered = True
        for _ in range(aff.n_samples - len(aff.sample_ids)):
            tx = _call(aff.address, nonce, aff.contract, "request_sample_key", gas_price=gas_price)
            nonce += 1
            txs.append(tx)
            aff.sample_ids.append(tx.hash)
        aff.done = True
        return txs

    def _run_affiliate(self, aff: AffiliateState) -> None:
        txs = self.affiliate_step(aff)
        for tx in txs:
            self._submit(aff.name, tx)
            if tx.function == "request_sample_key":
                sample_id = tx.hash
                self._affiliate_by_sample[sample_id] = aff
                desc = ContentObject(ContentKind.SampleDescriptor,
                                     b"sample-descriptor\nsample_id=" + sample_id.hex().encode()
                                     + b"\ncontract=" + aff.contract.hex().encode())
                cid = self.store.publish(aff.node, desc.data, pin=True)
                aff.descriptors[sample_id] = cid
                self._rec(aff.name, "publish", kind="SampleDescriptor", cid=cid.hex())

    def _on_pk_published(self, aff: AffiliateState, sample_id: bytes) -> None:
        self._rec(aff.name, "observe", event_kind=EventKind.SampleKeyPublished.name)
        victims = []
        for _ in range(self.config.victims_per_sample):
            v = self.victims[self._next_victim]
            self._next_victim += 1
            v.descriptor = aff.descriptors[sample_id]
            victims.append(v)
            delay = float(self.rng.exponential(self.config.block_mean_s))
            self.clock.schedule_in(delay, lambda v=v: self.victim_step(v), label="infect")
        self._victims_by_sample[sample_id] = victims

    # -- victims -------------------------------------------------------------

    def victim_step(self, v: VictimState) -> list[Transaction]:
        """Advance one victim: infection, payment attempt, or recovery."""
        if v.phase is None:
            return self._infect(v)
        if v.phase == "Infected" and v.will_pay and v.pending_tx is None and not v.covered:
            return self._attempt_payment(v)
        if v.phase == "Paid" or v.covered:
            self._try_recover(v)
        return []

    def _infect(self, v: VictimState) -> list[Transaction]:
        data = self._retrieve(v.name, v.node, v.descriptor)
        if data is None:
            delay = backoff_delay(v.attempts)
            v.attempts += 1
            self.clock.schedule_in(delay, lambda: self.victim_step(v), label="infect")
            return []
        v.attempts = 0
        fields = parse_page(data)
        v.sample_id = bytes.fromhex(fields["sample_id"])
        v.contract = bytes.fromhex(fields["contract"])
        v.pk = escrow.get_sample_pk(self.ledger.contract(v.contract), v.sample_id)
        v.key_temp = self.rng.bytes(32)
        v.asset = b"victim-asset-" + str(v.index).encode()
        v.locked_asset = symcrypto.lock(v.key_temp, v.asset)
        v.sealed_key = symcrypto.seal(v.pk, v.key_temp)
        v.key_temp = None  # only the sealed copy survives infection
        v.will_pay = bool(self.rng.random() < self.config.pay_probability)
        v.underpay_pending = bool(self.rng.random() < self.config.fault_underpay_probability)
        v.phase = "Infected"
        v.infected_block = self.ledger.head.number
        self._rec(v.name, "infected", descriptor=v.descriptor.hex())
        if v.will_pay:
            return self._attempt_payment(v)
        return []

    def _attempt_payment(self, v: VictimState) -> list[Transaction]:
        page = self._retrieve(v.name, v.node, v.payment_page)
        if page is None:
            delay = backoff_delay(v.attempts)
            v.attempts += 1
            self._rec(v.name, "defer", outcome="PaymentPageUnavailable", retry_in=delay)
            self.clock.schedule_in(delay, lambda: self.victim_step(v), label="pay")
            return []
        fields = parse_page(page)
        contract = bytes.fromhex(fields["contract"])
        state = self.ledger.contract(contract)
        sample_id = escrow.sample_for_pk(state, v.pk)
        amount = int(fields["ransom"])
        if v.underpay_pending:
            amount -= 1
            v.underpay_pending = False
        recipient_pk = b""
        if self.config.encrypt_onchain_payloads:
            v.ephemeral_sk = self.rng.bytes(32)
            recipient_pk = symcrypto.pk_of(v.ephemeral_sk)
        tx = _call(v.address, self.ledger.next_nonce(v.address), contract, "pay_ransom",
                   sample_id, recipient_pk, value=amount, gas_price=self.config.gas_price)
        v.pending_tx = self._submit(v.name, tx)
        self._victims_by_tx[v.pending_tx] = v
        return [tx]

    def _on_receipt(self, v: VictimState, receipt) -> None:
        v.pending_tx = None
        if receipt.succeeded:
            v.phase = "Paid"
            v.paid_block = self.ledger.head.number
            self._rec(v.name, "observe", tx_hash=receipt.tx_hash, outcome="succeeded")
            self._try_recover(v)
        elif receipt.error == "AlreadyPaid":
            self._rec(v.name, "observe", tx_hash=receipt.tx_hash, outcome=receipt.error)
            v.covered = True
            self._try_recover(v)
        else:
            self._rec(v.name, "observe", tx_hash=receipt.tx_hash, outcome=receipt.error)
            self.victim_step(v)

    def _try_recover(self, v: VictimState) -> None:
        if v.phase == "Recovered":
            return
        state = self.ledger.contract(v.contract)
        try:
            published = escrow.get_sample_sk(state, v.sample_id)
        except escrow.SkNotSet:
            return
        rec = state.keys[v.sample_id]
        self._rec(v.name, "read", event_kind=EventKind.SampleSecretPublished.name)
        if rec.sk_mode == SecretMode.SEALED:
            try:
                sk = symcrypto.open(v.ephemeral_sk, symcrypto.AsymCiphertext.decode(published))
            except symcrypto.KeyMismatch:
                return  # sealed to whichever co-victim actually paid
        else:
            sk = published
        key_temp = symcrypto.open(sk, v.sealed_key)
        v.recovered_asset = symcrypto.unlock(key_temp, v.locked_asset)
        v.phase = "Recovered"
        v.recovered_block = self.ledger.head.number
        self._rec(v.name, "recovered")

    # -- main loop -------------------------------------------------------------

    def _author_poll(self, block: Block) -> None:
        r = self.responder
        if block.number % self.config.author_poll_blocks:
            return
        events = self.ledger.events_since(
            r.cursor, {EventKind.SampleKeyRequested, EventKind.RansomPaid})
        if not events:
            return
        r.wakeups += 1
        r.online_s += AUTHOR_PROCESSING_S
        self._rec("author", "wake", events=len(events))
        for tx in author_step(r, events):
            self._submit("author", tx)
        # any other events in the window are irrelevant to the responder
        if self.ledger.events:
            r.cursor = max(r.cursor, self.ledger.events[-1].position)

    def _dispatch_feed(self, block: Block) -> None:
        for receipt in block.receipts:
            v = self._victims_by_tx.pop(receipt.tx_hash, None)
            if v is not None:
                self._on_receipt(v, receipt)
        for ev in self.ledger.events_since(self._feed_cursor):
            self._feed_cursor = ev.position
            sample_id = ev.attrs.get("sample_id")
            if ev.kind == EventKind.SampleKeyPublished and sample_id in self._affiliate_by_sample:
                self._on_pk_published(self._affiliate_by_sample[sample_id], sample_id)
            elif ev.kind == EventKind.SampleSecretPublished:
                for v in self._victims_by_sample.get(sample_id, ()):
                    if v.phase == "Paid" or v.covered:
                        self._try_recover(v)

    def _on_block(self, block: Block) -> None:
        cfg = self.config
        self._rec("ledger", "block", outcome="mined", **block_detail(block))
        if cfg.publisher_offline_after_block == block.number and block.number > 0:
            self._publisher_offline()
        for aff in self.affiliates:
            if block.number == AFFILIATE_START_BLOCK + aff.index % AFFILIATE_START_SPREAD:
                self._run_affiliate(aff)
        self._dispatch_feed(block)
        self._author_poll(block)
        for hook in self.block_hooks:
            hook(self, block)

    def run(self) -> Trace:
        if self.finished:
            return self.trace
        self.setup()
        while self.ledger.head.number < self.config.duration_blocks:
            t_next = self.ledger.next_block_time()
            self.clock.run_until(t_next)
            block = self.ledger.mine_next_block(self.clock)
            self._on_block(block)
        for v in self.victims:
            if v.phase not in ("Recovered",) and v.phase is not None:
                v.phase = "Abandoned"
                self._rec(v.name, "abandoned")
        self._rec("scenario", "end", blocks=self.ledger.head.number)
        self.finished = True
        return self.trace


def run_scenario(config: ScenarioConfig) -> Trace:
    return Scenario(config).run()
