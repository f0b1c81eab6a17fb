"""Account ledger, ticket pricing policies, and revenue sharing.

Amounts are integers in minor currency units; shares and any other exact
ratios are fractions, and splitting uses largest-remainder rounding so no
minor unit is ever lost. The provider knows accounts and group *ids* only;
what a group means is none of its business.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

from .clock import SimClock
from .encoding import append_record, read_records
from .errors import InvalidArgument, TicketError, UnknownGroup

PHASE_ACQUISITION = "acquisition"
PHASE_EX_POST = "ex_post"
PHASES = (PHASE_ACQUISITION, PHASE_EX_POST)


class ChargingError(TicketError):
    code = "charging-error"


class UnknownAccount(ChargingError):
    code = "unknown-account"


class InvalidShares(ChargingError):
    code = "invalid-shares"


@dataclass(frozen=True)
class RevenueShares:
    cp: Fraction
    pca: Fraction
    rs: Fraction

    def __post_init__(self):
        parts = (self.cp, self.pca, self.rs)
        if any(not isinstance(p, Fraction) for p in parts):
            raise InvalidShares("shares must be fractions")
        if any(p < 0 for p in parts):
            raise InvalidShares("shares must be non-negative")
        if sum(parts) != 1:
            raise InvalidShares("shares must sum to exactly 1")

    def to_record(self) -> dict:
        return {"cp": str(self.cp), "pca": str(self.pca), "rs": str(self.rs)}

    @classmethod
    def from_record(cls, record: dict) -> "RevenueShares":
        try:
            return cls(Fraction(record["cp"]), Fraction(record["pca"]), Fraction(record["rs"]))
        except (KeyError, ValueError, ZeroDivisionError, TypeError) as exc:
            raise InvalidShares(f"bad shares record: {exc}") from exc


@dataclass(frozen=True)
class PricingPolicy:
    """kind one of free | flat | increasing | reverse | custom.

    flat:        per_group[g] each time
    increasing:  per_group[g] + step * prior_count
    reverse:     -incentive (a credit)
    custom:      hook(group, prior_count) — programmatic only, not wire-encodable
    """

    kind: str
    per_group: dict[int, int] = field(default_factory=dict)
    step: int = 0
    incentive: int = 0
    hook: Callable[[int, int], int] | None = None

    def __post_init__(self):
        if self.kind not in ("free", "flat", "increasing", "reverse", "custom"):
            raise InvalidArgument(f"unknown pricing kind {self.kind!r}")
        if self.kind == "custom" and self.hook is None:
            raise InvalidArgument("custom pricing needs a hook")
        if self.step < 0 or self.incentive < 0:
            raise InvalidArgument("step and incentive must be non-negative")
        if any(p < 0 for p in self.per_group.values()):
            raise InvalidArgument("group prices must be non-negative")

    @classmethod
    def free(cls) -> "PricingPolicy":
        return cls(kind="free")

    @classmethod
    def flat(cls, prices: dict[int, int]) -> "PricingPolicy":
        return cls(kind="flat", per_group=dict(prices))

    @classmethod
    def increasing(cls, base: dict[int, int], step: int) -> "PricingPolicy":
        return cls(kind="increasing", per_group=dict(base), step=step)

    @classmethod
    def reverse(cls, incentive: int) -> "PricingPolicy":
        return cls(kind="reverse", incentive=incentive)

    @classmethod
    def custom(cls, hook: Callable[[int, int], int]) -> "PricingPolicy":
        return cls(kind="custom", hook=hook)

    def to_record(self) -> dict:
        if self.kind == "custom":
            raise InvalidArgument("custom pricing is not wire-encodable")
        return {
            "kind": self.kind,
            "per_group": {str(g): p for g, p in self.per_group.items()},
            "step": self.step,
            "incentive": self.incentive,
        }

    @classmethod
    def from_record(cls, record: dict) -> "PricingPolicy":
        try:
            per_group = {int(g): int(p) for g, p in record.get("per_group", {}).items()}
            return cls(
                kind=record["kind"],
                per_group=per_group,
                step=int(record.get("step", 0)),
                incentive=int(record.get("incentive", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidArgument(f"bad policy record: {exc}") from exc


def price(policy: PricingPolicy, group: int, prior_count: int) -> int:
    """Charge for the next ticket in `group` given how many tickets the
    account has already been charged for. Deterministic; increasing kind is
    monotone non-decreasing in prior_count."""
    if prior_count < 0:
        raise InvalidArgument("prior_count must be non-negative")
    if policy.kind == "free":
        return 0
    if policy.kind == "reverse":
        return -policy.incentive
    if policy.kind == "custom":
        amount = policy.hook(group, prior_count)
        if not isinstance(amount, int) or not math.isfinite(amount):
            raise InvalidArgument("custom pricing must return a finite int")
        return amount
    if group not in policy.per_group:
        raise UnknownGroup(f"group {group} has no configured price")
    if policy.kind == "flat":
        return policy.per_group[group]
    return policy.per_group[group] + policy.step * prior_count


def split_revenue(amount: int, shares: RevenueShares) -> tuple[int, int, int]:
    """Split into (cp, pca, rs) minor units, conserving the total exactly.
    Largest-remainder rounding; ties go to the earlier party."""
    if amount < 0:
        raise InvalidArgument("split amount must be non-negative")
    exact = [amount * shares.cp, amount * shares.pca, amount * shares.rs]
    floors = [int(x) for x in exact]  # int() truncates toward zero; x >= 0 here
    remainder = amount - sum(floors)
    order = sorted(range(3), key=lambda i: (floors[i] - exact[i], i))
    parts = list(floors)
    for i in order[:remainder]:
        parts[i] += 1
    return parts[0], parts[1], parts[2]


@dataclass(frozen=True)
class ChargeReceipt:
    receipt_id: str
    account_id: str
    amount: int
    group: int
    phase: str
    at: int
    balance_after: int


@dataclass(frozen=True)
class Declined:
    reason: str


@dataclass
class LedgerEntry:
    at: int
    amount: int
    phase: str
    group: int
    receipt_id: str

    def to_record(self) -> dict:
        return {
            "at": self.at,
            "amount": self.amount,
            "phase": self.phase,
            "group": self.group,
            "receipt": self.receipt_id,
        }


@dataclass
class Account:
    account_id: str
    balance: int
    opening_balance: int
    history: list[LedgerEntry] = field(default_factory=list)


class ChargingProvider:
    def __init__(
        self,
        clock: SimClock | None = None,
        *,
        policy: PricingPolicy | None = None,
        shares: RevenueShares | None = None,
        credit_limit: int | None = None,
        ledger_log: Path | str | None = None,
    ):
        self._clock = clock or SimClock()
        self._policy = policy or PricingPolicy.free()
        self._shares = shares
        self._credit_limit = credit_limit
        self._accounts: dict[str, Account] = {}
        self._receipt_seq = itertools.count(1)
        self._revenue = {"cp": 0, "pca": 0, "rs": 0}
        self._ledger_log = Path(ledger_log) if ledger_log else None
        if self._ledger_log and self._ledger_log.exists():
            self._replay(read_records(self._ledger_log))

    # -- accounts ------------------------------------------------------------

    def open_account(self, account_id: str, balance: int = 0) -> None:
        if account_id in self._accounts:
            raise ChargingError(f"account {account_id} already open", code="duplicate-account")
        self._accounts[account_id] = Account(account_id, balance, balance)
        self._log({"kind": "open", "account": account_id, "balance": balance})

    def balance(self, account_id: str) -> int:
        return self._account(account_id).balance

    def history(self, account_id: str) -> list[LedgerEntry]:
        return list(self._account(account_id).history)

    # -- policy / shares -----------------------------------------------------

    @property
    def policy(self) -> PricingPolicy:
        return self._policy

    def set_policy(self, policy: PricingPolicy) -> None:
        self._policy = policy

    @property
    def shares(self) -> RevenueShares | None:
        return self._shares

    @property
    def revenue_totals(self) -> dict[str, int]:
        return dict(self._revenue)

    # -- charging ------------------------------------------------------------

    def charge(self, account_id: str, amount: int, *, group: int, phase: str) -> ChargeReceipt | Declined:
        """Move `amount` off the account (negative = incentive credit).
        Positive revenue is immediately split between the parties."""
        if phase not in PHASES:
            raise InvalidArgument(f"unknown charging phase {phase!r}")
        account = self._account(account_id)
        new_balance = account.balance - amount
        if self._credit_limit is not None and new_balance < -self._credit_limit:
            return Declined(reason="limit-exceeded")
        receipt_id = f"rcpt-{next(self._receipt_seq):06d}"
        entry = LedgerEntry(self._clock.now(), amount, phase, group, receipt_id)
        account.balance = new_balance
        account.history.append(entry)
        if amount > 0 and self._shares is not None:
            cp_part, pca_part, rs_part = split_revenue(amount, self._shares)
            self._revenue["cp"] += cp_part
            self._revenue["pca"] += pca_part
            self._revenue["rs"] += rs_part
        self._log({"kind": "charge", "account": account_id, **entry.to_record()})
        return ChargeReceipt(
            receipt_id=receipt_id,
            account_id=account_id,
            amount=amount,
            group=group,
            phase=phase,
            at=entry.at,
            balance_after=account.balance,
        )

    # -- audit ----------------------------------------------------------------

    def export_state(self) -> bytes:
        from .encoding import encode

        return encode(
            {
                "accounts": {
                    a.account_id: {
                        "balance": a.balance,
                        "opening": a.opening_balance,
                        "history": [e.to_record() for e in a.history],
                    }
                    for a in self._accounts.values()
                },
                "revenue": dict(self._revenue),
            }
        )

    def replayed_balance(self, account_id: str) -> int:
        """Opening balance minus the sum of history amounts; must always
        equal the live balance."""
        account = self._account(account_id)
        return account.opening_balance - sum(e.amount for e in account.history)

    # -- internals -------------------------------------------------------------

    def _account(self, account_id: str) -> Account:
        try:
            return self._accounts[account_id]
        except KeyError:
            raise UnknownAccount(f"unknown account {account_id}") from None

    def _log(self, record: dict) -> None:
        if self._ledger_log:
            append_record(self._ledger_log, record)

    def _replay(self, records: list) -> None:
        last_receipt = 0
        for record in records:
            if record["kind"] == "open":
                acct = Account(record["account"], record["balance"], record["balance"])
                self._accounts[acct.account_id] = acct
            elif record["kind"] == "charge":
                last_receipt = max(last_receipt, int(record["receipt"].rsplit("-", 1)[1]))
                acct = self._accounts[record["account"]]
                entry = LedgerEntry(
                    at=record["at"],
                    amount=record["amount"],
                    phase=record["phase"],
                    group=record["group"],
                    receipt_id=record["receipt"],
                )
                acct.history.append(entry)
                acct.balance -= entry.amount
                if entry.amount > 0 and self._shares is not None:
                    cp_part, pca_part, rs_part = split_revenue(entry.amount, self._shares)
                    self._revenue["cp"] += cp_part
                    self._revenue["pca"] += pca_part
                    self._revenue["rs"] += rs_part
        self._receipt_seq = itertools.count(last_receipt + 1)
