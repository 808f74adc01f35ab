"""Exit criteria for the simulator, each at its stated tolerance.

A one-line PASS/FAIL verdict per criterion is printed in the terminal summary
(see the hooks in conftest.py).
"""

import dataclasses
import time
from collections import Counter

import numpy as np
import pytest

from escrowsim import symcrypto
from escrowsim.agents import AFFILIATE_ENDOWMENT, Scenario, ScenarioConfig
from escrowsim.caststore import ContentKind, Unavailable
from escrowsim.escrow import EventKind
from escrowsim.forensics import build_graph, cost_report, revenue_report
from escrowsim.ledger import GWEI
from escrowsim.trace import Trace

from conftest import RANSOM, Chain

acceptance = pytest.mark.acceptance

# Each scenario run through run_checked is also a conservation-suite witness.
_conservation_blocks: Counter = Counter()


def conservation_hook(scenario: Scenario, block) -> None:
    ledger = scenario.ledger
    assert ledger.total_supply() == ledger.initial_supply, f"supply drift at block {block.number}"
    for address, state in ledger.contracts.items():
        unsplit = sum(r.paid_amount for r in state.keys.values() if not r.split_done)
        assert state.escrow_balance == unsplit == ledger.balance(address)
    for receipt in block.receipts:
        for ev in receipt.events:
            if ev.kind == EventKind.RansomSplit:
                a = int.from_bytes(ev.attrs["affiliate_amount"], "big")
                b = int.from_bytes(ev.attrs["author_amount"], "big")
                assert a + b == scenario.config.ransom_amount
                _conservation_blocks["splits"] += 1
    _conservation_blocks["blocks"] += 1


def run_checked(config: ScenarioConfig) -> Scenario:
    s = Scenario(config)
    s.block_hooks.append(conservation_hook)
    s.run()
    _conservation_blocks["scenarios"] += 1
    return s


REFERENCE = ScenarioConfig()
LIVENESS = ScenarioConfig(n_affiliates=50, samples_per_affiliate=2, victims_per_sample=2,
                          duration_blocks=200)


# -- 1 -------------------------------------------------------------------------------

@acceptance(1, "cost model: TC = 9,459,822 gas, $1.66 vs $1.67 +/- 0.01, < 10 s")
def test_cost_model_reproduction():
    t0 = time.perf_counter()
    s = run_checked(REFERENCE)
    trace = Trace.from_ndjson(s.trace.to_ndjson())
    rep = cost_report(build_graph(trace), GWEI, 175.59)
    elapsed = time.perf_counter() - t0
    assert (rep.rho, rep.delta, rep.mu) == (100, 100, 100)
    assert rep.total_gas == 9_459_822
    assert abs(rep.total_fiat - 1.67) <= 0.01
    assert elapsed < 10.0


# -- 2 -------------------------------------------------------------------------------

@acceptance(2, "per-operation gas equals the reference schedule")
def test_table_gas_regression():
    c = Chain(gas_price=GWEI)
    c.account("aff")
    c.account("vic")
    reg = c.do("aff", "register_affiliate")
    sid = c.do("aff", "request_sample_key").tx_hash
    pk = c.do("author", "set_sample_pk", sid, symcrypto.kdf_keypair(sid)[1])
    pay = c.do("vic", "pay_ransom", sid, b"", value=RANSOM)
    sk = c.do("author", "set_sample_sk", sid, 0, symcrypto.kdf_keypair(sid)[0])
    split = c.do("author", "split_ransom", sid)
    measured = [c.deploy_receipt, pk, sk, split, reg, pay]
    assert all(r.succeeded for r in measured)
    assert [r.gas_used for r in measured] == [505822, 29881, 22144, 37515, 22796, 28326]


# -- 3 -------------------------------------------------------------------------------

@acceptance(3, "mean block interval in [12, 14] s over 10,000 blocks, < 30 s")
def test_block_latency_calibration():
    t0 = time.perf_counter()
    s = Scenario(dataclasses.replace(REFERENCE, duration_blocks=10_000))
    s.run()
    elapsed = time.perf_counter() - t0
    stamps = np.array([b.timestamp for b in s.ledger.blocks])
    gaps = np.diff(stamps)
    assert len(gaps) == 10_000 and (gaps > 0).all()
    assert 12.0 <= gaps.mean() <= 14.0
    assert elapsed < 30.0


# -- 4 -------------------------------------------------------------------------------

def successful_unlocks(scenario: Scenario) -> int:
    return sum(1 for r in scenario.trace if r.action == "recovered")


@acceptance(4, "liveness: 50x2x2 all Recovered at p=1; none at p=0")
def test_liveness_all_pay():
    s = run_checked(LIVENESS)
    assert len(s.victims) == 200
    assert all(v.phase == "Recovered" and v.recovered_asset == v.asset for v in s.victims)
    assert successful_unlocks(s) == 200


@acceptance(4, "liveness: 50x2x2 all Recovered at p=1; none at p=0")
def test_liveness_nobody_pays():
    s = run_checked(dataclasses.replace(LIVENESS, pay_probability=0.0))
    assert len(s.victims) == 200
    assert all(v.phase == "Abandoned" and v.recovered_asset is None for v in s.victims)
    assert successful_unlocks(s) == 0
    state = s.ledger.contract(s.responder.contract)
    assert all(rec.sk is None for rec in state.keys.values())
    # nothing ever published, so no key anyone holds opens a victim's sealed key
    for v in s.victims:
        with pytest.raises(symcrypto.KeyMismatch):
            symcrypto.open(v.ephemeral_sk or b"\x00" * 32, v.sealed_key)


# -- 5 -------------------------------------------------------------------------------

@acceptance(5, "conservation: supply, split sums and escrow balance at every block")
def test_conservation_suite():
    # a mix of the other acceptance scenarios plus faults and partial payment
    for cfg in (
        REFERENCE,
        dataclasses.replace(LIVENESS, pay_probability=0.5, seed=3),
        dataclasses.replace(REFERENCE, fault_underpay_probability=0.5, affiliate_share_bp=3333,
                            ransom_amount=10**18 + 7, seed=9),
        dataclasses.replace(REFERENCE, encrypt_onchain_payloads=True, split_before_sk=True,
                            n_affiliates=30, seed=5),
    ):
        run_checked(cfg)
    assert _conservation_blocks["scenarios"] >= 4
    assert _conservation_blocks["splits"] > 0


# -- 6 -------------------------------------------------------------------------------

PROTECTED = ("set_sample_pk", "set_sample_sk", "split_ransom")


@acceptance(6, "access control: 1,000 fuzzed interleavings, no non-author pk/sk write")
def test_access_control_fuzz():
    rng = np.random.default_rng(20240601)
    attempts = 0
    for seq in range(1000):
        c = Chain(seed=seq)
        users = ["author", "u0", "u1", "u2"]
        for name in users[1:]:
            c.account(name)
        samples: list[bytes] = []
        for _ in range(int(rng.integers(4, 12))):
            for _ in range(int(rng.integers(1, 4))):
                who = users[int(rng.integers(len(users)))]
                op = ("register_affiliate", "request_sample_key", "pay_ransom",
                      *PROTECTED)[int(rng.integers(6))]
                sid = samples[int(rng.integers(len(samples)))] if samples else rng.bytes(32)
                if op in ("register_affiliate", "request_sample_key"):
                    args, value = (), 0
                elif op == "pay_ransom":
                    args, value = (sid, b""), RANSOM
                elif op == "set_sample_pk":
                    args, value = (sid, rng.bytes(32)), 0
                elif op == "set_sample_sk":
                    args, value = (sid, 0, rng.bytes(32)), 0
                else:
                    args, value = (sid,), 0
                tx = c.call(who, op, *args, value=value)
                c.ledger.submit_tx(tx)
            for r in c.ledger.mine_next_block().receipts:
                if r.tx.function == "request_sample_key" and r.succeeded:
                    samples.append(r.tx_hash)
                if r.tx.function in PROTECTED and r.tx.sender != c.author:
                    attempts += 1
                    assert r.status == "reverted" and r.error == "NotAuthor"
                if r.tx.function in ("set_sample_pk", "set_sample_sk") and r.succeeded:
                    assert r.tx.sender == c.author
    assert attempts > 1000


# -- 7 -------------------------------------------------------------------------------

AVAILABILITY = dataclasses.replace(
    REFERENCE, n_affiliates=10, duration_blocks=120, churn=(float("inf"), float("inf")),
    warm_retrievals=1, publisher_offline_after_block=1)


@acceptance(7, "availability: pages outlive the publisher after one cached copy")
def test_pages_survive_publisher():
    served: list[int] = []

    def probe(scenario, block):
        if block.number < 1:
            return
        assert not scenario.store.node(scenario.author_node).online
        for kind in (ContentKind.RegistrationPage, ContentKind.PaymentPage):
            holders = scenario.store.serving_holders(scenario.page_ids[kind])
            assert holders and scenario.author_node not in holders
        served.append(block.number)

    s = Scenario(AVAILABILITY)
    s.block_hooks.append(probe)
    s.block_hooks.append(conservation_hook)
    s.run()
    assert served == list(range(1, AVAILABILITY.duration_blocks + 1))
    # and they really are fetchable by a newcomer at the end of the run
    newcomer = s.store.add_node(b"late-reader")
    for kind in (ContentKind.RegistrationPage, ContentKind.PaymentPage):
        assert s.store.retrieve(newcomer, s.page_ids[kind])
    assert sum(e.kind == EventKind.AffiliateRegistered for e in s.ledger.events) == 10


@acceptance(7, "availability: pages outlive the publisher after one cached copy")
def test_pages_unavailable_without_prior_retrieval():
    cfg = dataclasses.replace(AVAILABILITY, warm_retrievals=0, publisher_offline_after_block=0)
    s = Scenario(cfg)
    s.run()
    newcomer = s.store.add_node(b"late-reader")
    for kind in (ContentKind.RegistrationPage, ContentKind.PaymentPage):
        with pytest.raises(Unavailable):
            s.store.retrieve(newcomer, s.page_ids[kind])
    assert not any(e.kind == EventKind.AffiliateRegistered for e in s.ledger.events)


# -- 8 -------------------------------------------------------------------------------

@acceptance(8, "observer completeness: trace-only forensics matches ground truth")
def test_observer_completeness():
    cfg = dataclasses.replace(REFERENCE, n_affiliates=40, samples_per_affiliate=2,
                              pay_probability=0.6, affiliate_share_bp=2750, seed=17)
    s = run_checked(cfg)
    trace = Trace.from_ndjson(s.trace.to_ndjson())  # nothing but the serialized file
    graph = build_graph(trace)
    cost = cost_report(graph, cfg.gas_price, 175.59)
    revenue = revenue_report(graph)

    state = s.ledger.contract(s.responder.contract)
    truth_rho = sum(a.registered for a in s.affiliates)
    truth_delta = sum(rec.sk is not None for rec in state.keys.values())
    truth_mu = sum(rec.split_done for rec in state.keys.values())
    assert (cost.rho, cost.delta, cost.mu) == (truth_rho, truth_delta, truth_mu)
    assert 0 < truth_mu < cfg.n_affiliates * cfg.samples_per_affiliate

    assert set(graph.with_role("affiliate")) == {a.address.hex() for a in s.affiliates}
    paid = sorted(f.amount for f in graph.flows if f.reason == "ransom")
    truth_paid = sorted(rec.paid_amount for rec in state.keys.values() if rec.paid_by)
    assert paid == truth_paid

    for a in s.affiliates:
        r = revenue.affiliates[a.address.hex()]
        assert r.earned - r.gas_spent == s.ledger.balance(a.address) - AFFILIATE_ENDOWMENT


# -- 9 -------------------------------------------------------------------------------

@acceptance(9, "determinism: byte-identical traces for repeated runs")
def test_determinism():
    rng = np.random.default_rng(99)
    configs = [REFERENCE, dataclasses.replace(LIVENESS, pay_probability=0.5)]
    for _ in range(6):
        configs.append(dataclasses.replace(
            REFERENCE,
            seed=int(rng.integers(2**63)),
            n_affiliates=int(rng.integers(0, 25)),
            samples_per_affiliate=int(rng.integers(1, 3)),
            victims_per_sample=int(rng.integers(1, 3)),
            pay_probability=float(rng.random()),
            churn=(float(rng.uniform(100, 5000)), float(rng.uniform(50, 2000))),
            encrypt_onchain_payloads=bool(rng.integers(2)),
            fault_underpay_probability=float(rng.random() / 2),
            duration_blocks=int(rng.integers(20, 150)),
        ))
    for cfg in configs:
        first = Scenario(cfg).run().to_ndjson().encode()
        second = Scenario(cfg).run().to_ndjson().encode()
        assert first == second
        assert Trace.from_ndjson(first.decode()).digest() == Trace.from_ndjson(second.decode()).digest()


# -- 10 ------------------------------------------------------------------------------

@acceptance(10, "symbolic crypto: diagonal-only matrix; 10,000 adversary searches find nothing")
def test_key_matrix():
    rng = np.random.default_rng(5)
    sks = [rng.bytes(32) for _ in range(100)]
    sealed = [symcrypto.seal(symcrypto.pk_of(sk), b"m%d" % j) for j, sk in enumerate(sks)]
    locked = [symcrypto.lock(k, b"a%d" % j) for j, k in enumerate(sks)]
    opened = np.zeros((100, 100), dtype=bool)
    unlocked = np.zeros((100, 100), dtype=bool)
    for i, sk in enumerate(sks):
        for j in range(100):
            try:
                assert symcrypto.open(sk, sealed[j]) == b"m%d" % j
                opened[i, j] = True
            except symcrypto.KeyMismatch:
                pass
            try:
                assert symcrypto.unlock(sk, locked[j]) == b"a%d" % j
                unlocked[i, j] = True
            except symcrypto.KeyMismatch:
                pass
    assert (opened == np.eye(100, dtype=bool)).all()
    assert (unlocked == np.eye(100, dtype=bool)).all()


@acceptance(10, "symbolic crypto: diagonal-only matrix; 10,000 adversary searches find nothing")
def test_adversary_search():
    """An adversary that can only combine what it knows never reaches the victim's asset.

    Each sequence mirrors one infection: the asset is locked under a fresh key,
    that key is sealed to a sample pk, and the adversary sees the public pieces
    (pk, both ciphertexts) plus a few unrelated keys of its own.
    """
    rng = np.random.default_rng(31337)
    for _ in range(10_000):
        sample_sk = rng.bytes(32)
        key_temp = rng.bytes(32)
        asset = b"asset-" + rng.bytes(8)
        locked = symcrypto.lock(key_temp, asset)
        sealed = symcrypto.seal(symcrypto.pk_of(sample_sk), key_temp)
        known: list[bytes] = [symcrypto.pk_of(sample_sk)] + [rng.bytes(32) for _ in range(3)]
        cts: list = [locked, sealed]
        for _ in range(int(rng.integers(5, 15))):
            op = int(rng.integers(6))
            item = known[int(rng.integers(len(known)))]
            ct = cts[int(rng.integers(len(cts)))]
            if op == 0:
                known.append(symcrypto.pk_of(item))
            elif op == 1:
                known.append(symcrypto.digest(item))
            elif op == 2:
                other = known[int(rng.integers(len(known)))]
                cts.append(symcrypto.seal(other, item))
            elif op == 3:
                cts.append(symcrypto.lock(item, known[int(rng.integers(len(known)))]))
            else:
                try:
                    if isinstance(ct, symcrypto.AsymCiphertext):
                        known.append(symcrypto.open(item, ct))
                    else:
                        known.append(symcrypto.unlock(item, ct))
                except symcrypto.KeyMismatch:
                    pass
            # the only keys that help are the two secrets, and they never leak
            assert sample_sk not in known and key_temp not in known and asset not in known
        for k in known:
            with pytest.raises(symcrypto.KeyMismatch):
                symcrypto.unlock(k, locked)
