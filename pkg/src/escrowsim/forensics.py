"""Defender-side analysis that works from a public trace alone.

Nothing here touches agent state: roles, counts, revenue and costs are all
recovered from the ledger block records embedded in the trace.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any

from . import escrow
from .escrow import SecretMode
from .ledger import FUNCTION_GAS_FIELD, WEI_PER_ETHER, GasSchedule
from .trace import MalformedTrace, Trace

__all__ = [
    "MalformedTrace", "NoDeployment", "TransactionGraph", "CostReport", "RevenueReport",
    "Finding", "build_graph", "cost_report", "revenue_report", "detect_milestones",
    "cost_table_rows", "cost_csv", "revenue_csv", "findings_csv",
]

MILESTONE_FOR_EVENT = {
    "AffiliateRegistered": "NewAffiliate",
    "SampleKeyRequested": "NewSample",
    "RansomPaid": "PaymentObserved",
    "SampleSecretPublished": "SecretReleased",
}

# Actor and operation labels for the CSV cost table.
COST_TABLE = [
    ("Ransomware Author", "Deployment", "deploy"),
    ("Ransomware Author", "PK_sample Upload", "set_pk"),
    ("Ransomware Author", "SK_sample Upload", "set_sk"),
    ("Ransomware Author", "Ransom Split", "split"),
    ("Affiliate", "Affiliate Registration", "register"),
    ("Affiliate", "Sample Key Request", "request_key"),
    ("Victim", "Ransom Payment", "pay"),
]


class NoDeployment(ValueError):
    pass


@dataclass
class EventView:
    block: int
    index: int
    tx_hash: str
    kind: str
    attrs: dict[str, str]


@dataclass
class Edge:
    """One transaction, as seen by any chain observer."""

    tx_hash: str
    block: int
    src: str
    dst: str | None
    kind: str
    function: str | None
    value: int
    gas_used: int
    fee: int
    status: str
    error: str | None
    args: str | None
    events: list[EventView] = field(default_factory=list)
    attrs: dict[str, str] = field(default_factory=dict)


@dataclass
class Flow:
    src: str
    dst: str
    amount: int
    tx_hash: str
    reason: str


@dataclass
class TransactionGraph:
    nodes: dict[str, set[str]] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    flows: list[Flow] = field(default_factory=list)
    contracts: list[str] = field(default_factory=list)
    author: str | None = None

    def role(self, addr: str, role: str) -> None:
        self.nodes.setdefault(addr, set()).add(role)

    def with_role(self, role: str) -> list[str]:
        return sorted(a for a, roles in self.nodes.items() if role in roles)

    def events(self, kind: str | None = None) -> list[EventView]:
        out = [ev for e in self.edges for ev in e.events]
        return out if kind is None else [ev for ev in out if ev.kind == kind]


def _int(value: Any, lineno: int, what: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise MalformedTrace(f"bad {what}: {value!r}", lineno) from None


def build_graph(trace: Trace) -> TransactionGraph:
    g = TransactionGraph()
    expected = 1
    seen: set[str] = set()
    for rec in trace:
        if rec.actor != "ledger" or rec.action != "block":
            continue
        line = rec.seq + 1
        blk = rec.detail
        try:
            number = blk["number"]
            receipts = blk["receipts"]
        except (KeyError, TypeError):
            raise MalformedTrace("block record without number/receipts", line) from None
        if number != expected:
            raise MalformedTrace(f"expected block {expected}, found {number}", line)
        expected += 1
        for r in receipts:
            try:
                edge = Edge(
                    tx_hash=r["tx_hash"], block=number, src=r["sender"], dst=r["to"],
                    kind=r["kind"], function=r["function"],
                    value=_int(r["value"], line, "value"), gas_used=_int(r["gas_used"], line, "gas"),
                    fee=_int(r["fee"], line, "fee"), status=r["status"], error=r["error"],
                    args=r["args"],
                    events=[EventView(number, ev["index"], r["tx_hash"], ev["kind"], ev["attrs"])
                            for ev in r["events"]],
                )
            except (KeyError, TypeError) as exc:
                raise MalformedTrace(f"incomplete receipt ({exc})", line) from None
            if edge.tx_hash in seen:
                raise MalformedTrace(f"duplicate transaction {edge.tx_hash}", line)
            seen.add(edge.tx_hash)
            _annotate(g, edge, r, line)
            g.edges.append(edge)
    return g


def _annotate(g: TransactionGraph, edge: Edge, raw: dict, line: int) -> None:
    ok = edge.status == "succeeded"
    if edge.kind == "deploy":
        if ok:
            contract = raw.get("contract")
            if not contract:
                raise MalformedTrace("successful deployment without contract address", line)
            edge.dst = contract
            g.contracts.append(contract)
            g.role(contract, "contract")
            g.role(edge.src, "author")
            if g.author is None:
                g.author = edge.src
        return
    g.nodes.setdefault(edge.src, set())
    if edge.dst is not None:
        g.nodes.setdefault(edge.dst, set())
    if not ok:
        return
    if edge.kind == "transfer" and edge.value:
        g.flows.append(Flow(edge.src, edge.dst, edge.value, edge.tx_hash, "transfer"))
    if edge.function == "register_affiliate":
        g.role(edge.src, "affiliate")
    elif edge.function == "pay_ransom":
        g.role(edge.src, "victim")
        g.flows.append(Flow(edge.src, edge.dst, edge.value, edge.tx_hash, "ransom"))
    elif edge.function == "set_sample_sk":
        try:
            sample_id, mode, payload = escrow.decode_args("set_sample_sk",
                                                          bytes.fromhex(edge.args or ""))
        except (escrow.EscrowRevert, ValueError) as exc:
            raise MalformedTrace(f"undecodable set_sample_sk arguments ({exc})", line) from None
        edge.attrs["sample_id"] = sample_id.hex()
        edge.attrs["sk_mode"] = SecretMode(mode).name
        edge.attrs["sk"] = payload.hex()
    elif edge.function == "set_sample_pk":
        sample_id, pk = escrow.decode_args("set_sample_pk", bytes.fromhex(edge.args or ""))
        edge.attrs["sample_id"] = sample_id.hex()
        edge.attrs["pk"] = pk.hex()
    for ev in edge.events:
        if ev.kind == "RansomSplit":
            a = ev.attrs
            g.flows.append(Flow(edge.dst, a["affiliate"], int(a["affiliate_amount"], 16),
                                edge.tx_hash, "affiliate_share"))
            g.flows.append(Flow(edge.dst, a["author"], int(a["author_amount"], 16),
                                edge.tx_hash, "author_share"))


# -- cost model ----------------------------------------------------------------

@dataclass
class CostReport:
    rho: int
    delta: int
    mu: int
    pk_uploads: int
    per_op_gas: dict[str, int]
    total_gas: int
    gas_price: int
    fiat_rate: float
    total_fiat: float
    affiliate_gas: int
    victim_gas: int

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def observed_schedule(graph: TransactionGraph) -> dict[str, int]:
    """Per-operation gas as charged on chain; unobserved entries fall back to defaults."""
    sched = GasSchedule().as_dict()
    seen = set()
    for e in graph.edges:
        attr = FUNCTION_GAS_FIELD.get(e.function or "")
        if attr and attr not in seen:
            sched[attr] = e.gas_used
            seen.add(attr)
    return sched


def cost_report(graph: TransactionGraph, gas_price: int, fiat_rate: float) -> CostReport:
    if not graph.contracts:
        raise NoDeployment("trace contains no successful contract deployment")
    counts = Counter(ev.kind for ev in graph.events())
    rho = counts["AffiliateRegistered"]
    delta = counts["SampleSecretPublished"]
    mu = counts["RansomSplit"]
    pk_uploads = counts["SampleKeyPublished"]
    sched = observed_schedule(graph)
    # pk uploads equal registrations whenever each affiliate builds one sample
    total_gas = (sched["deploy"] + sched["set_pk"] * pk_uploads
                 + sched["set_sk"] * delta + sched["split"] * mu)
    fiat = Fraction(total_gas * gas_price, WEI_PER_ETHER) * Fraction(str(fiat_rate))
    return CostReport(
        rho=rho, delta=delta, mu=mu, pk_uploads=pk_uploads, per_op_gas=sched,
        total_gas=total_gas, gas_price=gas_price, fiat_rate=float(fiat_rate),
        total_fiat=float(fiat),
        affiliate_gas=sched["register"] * rho + sched["request_key"] * counts["SampleKeyRequested"],
        victim_gas=sched["pay"] * counts["RansomPaid"],
    )


def cost_table_rows(report: CostReport) -> list[tuple[str, str, int]]:
    return [(actor, op, report.per_op_gas[key]) for actor, op, key in COST_TABLE]


# -- revenue -------------------------------------------------------------------------

@dataclass
class AffiliateRevenue:
    registrations: int = 0
    samples: int = 0
    payments: int = 0
    earned: int = 0
    gas_spent: int = 0


@dataclass
class RevenueReport:
    affiliates: dict[str, AffiliateRevenue]
    author_earned: int
    author_gas_spent: int
    total_split: int

    def as_dict(self) -> dict[str, Any]:
        return {
            "affiliates": {a: asdict(r) for a, r in sorted(self.affiliates.items())},
            "author_earned": self.author_earned,
            "author_gas_spent": self.author_gas_spent,
            "total_split": self.total_split,
        }


def revenue_report(graph: TransactionGraph) -> RevenueReport:
    affiliates = {a: AffiliateRevenue() for a in graph.with_role("affiliate")}
    sample_owner: dict[str, str] = {}
    author_earned = total = 0
    for ev in graph.events():
        a = ev.attrs
        if ev.kind == "AffiliateRegistered":
            affiliates.setdefault(a["affiliate"], AffiliateRevenue()).registrations += 1
        elif ev.kind == "SampleKeyRequested":
            sample_owner[a["sample_id"]] = a["affiliate"]
            affiliates.setdefault(a["affiliate"], AffiliateRevenue()).samples += 1
        elif ev.kind == "RansomPaid":
            owner = sample_owner.get(a["sample_id"])
            if owner is not None:
                affiliates[owner].payments += 1
        elif ev.kind == "RansomSplit":
            aff_amount = int(a["affiliate_amount"], 16)
            auth_amount = int(a["author_amount"], 16)
            affiliates.setdefault(a["affiliate"], AffiliateRevenue()).earned += aff_amount
            author_earned += auth_amount
            total += aff_amount + auth_amount
    author_gas = 0
    for e in graph.edges:
        if e.src in affiliates:
            affiliates[e.src].gas_spent += e.fee
        if e.src == graph.author:
            author_gas += e.fee
    assert author_earned + sum(r.earned for r in affiliates.values()) == total
    return RevenueReport(affiliates, author_earned, author_gas, total)


# -- milestones --------------------------------------------------------------------

@dataclass
class Finding:
    kind: str
    block: int
    index: int
    tx_hash: str
    subject: str
    opaque: bool = False


def detect_milestones(trace_or_graph: Trace | TransactionGraph) -> list[Finding]:
    graph = (trace_or_graph if isinstance(trace_or_graph, TransactionGraph)
             else build_graph(trace_or_graph))
    findings = []
    for ev in graph.events():
        kind = MILESTONE_FOR_EVENT.get(ev.kind)
        if kind is None:
            continue
        a = ev.attrs
        subject = a["affiliate"] if kind == "NewAffiliate" else a["sample_id"]
        opaque = kind == "SecretReleased" and int(a.get("mode", "00"), 16) == SecretMode.SEALED
        findings.append(Finding(kind, ev.block, ev.index, ev.tx_hash, subject, opaque))
    findings.sort(key=lambda f: (f.block, f.index))
    return findings


# -- CSV export ----------------------------------------------------------------------

def _csv(rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def cost_csv(report: CostReport) -> str:
    rows: list[list[Any]] = [["Actor", "Operation", "Cost measured in gas"]]
    rows += [list(r) for r in cost_table_rows(report)]
    return _csv(rows)


def revenue_csv(report: RevenueReport) -> str:
    rows: list[list[Any]] = [["affiliate", "registrations", "samples", "payments", "earned_wei",
                              "gas_spent_wei"]]
    for addr, r in sorted(report.affiliates.items()):
        rows.append([addr, r.registrations, r.samples, r.payments, r.earned, r.gas_spent])
    return _csv(rows)


def findings_csv(findings: list[Finding]) -> str:
    rows: list[list[Any]] = [["kind", "block", "index", "tx_hash", "subject", "opaque"]]
    rows += [[f.kind, f.block, f.index, f.tx_hash, f.subject, f.opaque] for f in findings]
    return _csv(rows)
