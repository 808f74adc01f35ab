from __future__ import annotations

import pytest

from escrowsim import escrow
from escrowsim.ledger import (WEI_PER_ETHER, ContractCall, Deploy, Ledger, Transaction,
                              contract_address)

RANSOM = WEI_PER_ETHER


class Chain:
    """Small scripted fixture: one deployed escrow plus named funded accounts."""

    def __init__(self, share_bp: int = 3000, ransom: int = RANSOM, gas_price: int = 0,
                 encrypt: bool = False, seed: int = 0):
        self.ledger = Ledger(rng=seed)
        self.gas_price = gas_price
        self.accounts: dict[str, bytes] = {}
        self.author = self.account("author", 100 * WEI_PER_ETHER)
        self.contract = contract_address(self.author, 0)
        args = escrow.encode_args("deploy", self.author, ransom, share_bp, int(encrypt))
        self.deploy_receipt = self.mine(self.tx("author", Deploy(args)))[0]

    def account(self, name: str, balance: int = 10 * WEI_PER_ETHER) -> bytes:
        addr = self.ledger.create_account(name.encode(), balance)
        self.accounts[name] = addr
        return addr

    def addr(self, name: str) -> bytes:
        return self.accounts[name]

    def tx(self, who: str, target, value: int = 0) -> Transaction:
        sender = self.accounts[who]
        return Transaction(sender, self.ledger.next_nonce(sender), target, value, self.gas_price)

    def call(self, who: str, function: str, *args, value: int = 0) -> Transaction:
        return self.tx(who, ContractCall(self.contract, function,
                                         escrow.encode_args(function, *args)), value)

    def mine(self, *txs: Transaction):
        for tx in txs:
            self.ledger.submit_tx(tx)
        return self.ledger.mine_next_block().receipts

    def do(self, who: str, function: str, *args, value: int = 0):
        return self.mine(self.call(who, function, *args, value=value))[0]

    @property
    def state(self) -> escrow.EscrowState:
        return self.ledger.contract(self.contract)


@pytest.fixture
def chain() -> Chain:
    return Chain()


@pytest.fixture
def make_chain():
    return Chain


# -- acceptance summary ----------------------------------------------------------------

_criteria: dict[int, tuple[str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    _, outcomes = _criteria.setdefault(number, (title, []))
    outcomes.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes = _criteria[number]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title}")
