"""Reputation service: verifies rating submissions end to end, enforces
one rating per ticket, stores accepted ratings, and aggregates
impact-weighted scores exactly (rational arithmetic).

Check order for a submission is fixed and total — chain validity, payload
binding, target binding, then spend — so every malformed submission maps
to exactly one machine-readable reject reason.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

from . import crypto
from .clock import SimClock
from .crypto import CredentialChain
from .encoding import EncodingError, append_record, encode, read_records
from .errors import InvalidArgument

logger = logging.getLogger(__name__)

REJECT_INVALID_CHAIN = "invalid-chain"
REJECT_WRONG_RS = "wrong-rs"
REJECT_DOUBLE_SPEND = "double-spend"
REJECT_BAD_PAYLOAD = "bad-payload"


@dataclass(frozen=True)
class RatingPayload:
    subject: str
    score: int
    nonce: bytes
    rs_id: str
    comment: str = ""

    def canonical_bytes(self) -> bytes:
        return encode(self.to_record())

    def to_record(self) -> dict:
        return {
            "subject": self.subject,
            "score": self.score,
            "comment": self.comment,
            "nonce": self.nonce,
            "rs_id": self.rs_id,
        }

    @classmethod
    def from_record(cls, record: object) -> "RatingPayload":
        if not isinstance(record, dict) or set(record) != {"subject", "score", "comment", "nonce", "rs_id"}:
            raise EncodingError("bad payload record")
        subject, score, comment = record["subject"], record["score"], record["comment"]
        nonce, rs_id = record["nonce"], record["rs_id"]
        if not (
            isinstance(subject, str)
            and isinstance(score, int)
            and isinstance(comment, str)
            and isinstance(nonce, bytes)
            and isinstance(rs_id, str)
        ):
            raise EncodingError("bad payload field types")
        return cls(subject=subject, score=score, comment=comment, nonce=nonce, rs_id=rs_id)


@dataclass(frozen=True)
class RatingRecord:
    payload: RatingPayload
    group: int
    impact: Fraction
    received: int
    chain_digest: str

    def to_record(self) -> dict:
        return {
            "payload": self.payload.to_record(),
            "group": self.group,
            "impact": str(self.impact),
            "received": self.received,
            "chain_digest": self.chain_digest,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RatingRecord":
        return cls(
            payload=RatingPayload.from_record(record["payload"]),
            group=record["group"],
            impact=Fraction(record["impact"]),
            received=record["received"],
            chain_digest=record["chain_digest"],
        )


@dataclass(frozen=True)
class Ack:
    receipt: str
    subject: str
    group: int


@dataclass(frozen=True)
class Reject:
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class WeightedScore:
    subject: str
    count: int
    score: Fraction | None


class ReputationSystem:
    def __init__(
        self,
        rs_id: str,
        *,
        clock: SimClock | None = None,
        scale: tuple[int, int] = (1, 5),
        none_value: str = "no-score",
        expost_charge: Callable[[str, int], object] | None = None,
        rating_log: Path | str | None = None,
        spent_snapshot: Path | str | None = None,
    ):
        if scale[0] > scale[1]:
            raise InvalidArgument("rating scale is empty")
        self.rs_id = rs_id
        self.scale = (int(scale[0]), int(scale[1]))
        self.none_value = none_value
        self._clock = clock or SimClock()
        self._expost_charge = expost_charge
        self._registry: dict[int, tuple[bytes, Fraction]] = {}
        self._spent: dict[str, int] = {}
        self._records: list[RatingRecord] = []
        self._pending_charges: list[tuple[str, int]] = []
        self._lock = threading.Lock()
        self._rating_log = Path(rating_log) if rating_log else None
        self._spent_snapshot = Path(spent_snapshot) if spent_snapshot else None
        if self._rating_log and self._rating_log.exists():
            self.load_rating_log(self._rating_log)
        if self._spent_snapshot and self._spent_snapshot.exists():
            self._load_spent_snapshot(self._spent_snapshot)

    # -- configuration ---------------------------------------------------------

    def configure_groups(self, registry: dict[int, tuple[bytes, Fraction]]) -> None:
        """Replace the accepted group keys and their aggregation weights."""
        cleaned: dict[int, tuple[bytes, Fraction]] = {}
        for group, (public, impact) in registry.items():
            impact = Fraction(impact)
            if impact <= 0:
                raise InvalidArgument("impact factors must be positive")
            if not isinstance(public, bytes):
                raise InvalidArgument("group keys must be bytes")
            cleaned[int(group)] = (public, impact)
        self._registry = cleaned

    @property
    def group_registry(self) -> dict[int, tuple[bytes, Fraction]]:
        return dict(self._registry)

    # -- submission ----------------------------------------------------------

    def submit_rating(self, payload: RatingPayload, chain: CredentialChain) -> Ack | Reject:
        report = crypto.verify_chain(chain, {g: pub for g, (pub, _) in self._registry.items()})
        if not report.valid:
            return Reject(REJECT_INVALID_CHAIN, detail=report.reason or "")

        problem = self._payload_problem(payload)
        if problem:
            return Reject(REJECT_BAD_PAYLOAD, detail=problem)
        if chain.rating_cred.entity != payload.canonical_bytes():
            return Reject(REJECT_BAD_PAYLOAD, detail="signed bytes do not match payload")
        if payload.rs_id != self.rs_id:
            return Reject(REJECT_WRONG_RS, detail="payload addressed to another system")

        group = report.group
        assert group is not None
        impact = self._registry[group][1]
        aik_digest = chain.aik_digest
        chain_digest = crypto.sha256_hex(chain.to_bytes())

        with self._lock:
            if aik_digest in self._spent:
                return Reject(REJECT_DOUBLE_SPEND, detail="ticket already redeemed")
            self._spent[aik_digest] = self._clock.now()
            record = RatingRecord(
                payload=payload,
                group=group,
                impact=impact,
                received=self._clock.now(),
                chain_digest=chain_digest,
            )
            self._records.append(record)
            if self._rating_log:
                append_record(self._rating_log, {**record.to_record(), "aik_digest": aik_digest})

        if self._expost_charge is not None:
            try:
                self._expost_charge(aik_digest, group)
            except Exception:
                # availability over settlement atomicity: keep the rating,
                # queue the charge for retry
                logger.exception("ex-post charge failed; queued for retry")
                self._pending_charges.append((aik_digest, group))
        return Ack(receipt=chain_digest, subject=payload.subject, group=group)

    def _payload_problem(self, payload: RatingPayload) -> str | None:
        if not isinstance(payload, RatingPayload):
            return "not a rating payload"
        lo, hi = self.scale
        if not isinstance(payload.score, int) or not lo <= payload.score <= hi:
            return f"score outside {lo}..{hi}"
        if not payload.nonce:
            return "empty nonce"
        if not payload.subject:
            return "empty subject"
        return None

    # -- aggregation --------------------------------------------------------------

    def aggregate(self, subject: str) -> WeightedScore:
        """Impact-weighted mean over stored ratings for the subject, exact."""
        matching = [r for r in self._records if r.payload.subject == subject]
        if not matching:
            return WeightedScore(subject=subject, count=0, score=None)
        total_weight = sum((r.impact for r in matching), Fraction(0))
        weighted = sum((r.impact * r.payload.score for r in matching), Fraction(0))
        return WeightedScore(subject=subject, count=len(matching), score=weighted / total_weight)

    # -- charge retry ---------------------------------------------------------------

    def retry_pending_charges(self) -> int:
        """Retry queued ex-post charges; returns how many are still pending."""
        if self._expost_charge is None:
            return len(self._pending_charges)
        still_pending = []
        for aik_digest, group in self._pending_charges:
            try:
                self._expost_charge(aik_digest, group)
            except Exception:
                still_pending.append((aik_digest, group))
        self._pending_charges = still_pending
        return len(still_pending)

    @property
    def pending_charge_count(self) -> int:
        return len(self._pending_charges)

    # -- inspection / persistence ------------------------------------------------------

    @property
    def spent_count(self) -> int:
        return len(self._spent)

    def is_spent(self, aik_digest: str) -> bool:
        return aik_digest in self._spent

    @property
    def records(self) -> list[RatingRecord]:
        return list(self._records)

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for record in self._records:
            seen.setdefault(record.payload.subject, None)
        return list(seen)

    def export_state(self) -> bytes:
        """Full serialization of everything this service stores, for audits."""
        return encode(
            {
                "rs_id": self.rs_id,
                "scale": [self.scale[0], self.scale[1]],
                "registry": {
                    str(g): {"pub": pub, "impact": str(impact)}
                    for g, (pub, impact) in self._registry.items()
                },
                "spent": dict(self._spent),
                "records": [r.to_record() for r in self._records],
            }
        )

    def save_spent_snapshot(self, path: Path | str | None = None) -> None:
        target = Path(path) if path else self._spent_snapshot
        if target is None:
            raise InvalidArgument("no snapshot path configured")
        target.write_bytes(encode({"spent": dict(self._spent)}))

    def _load_spent_snapshot(self, path: Path) -> None:
        from .encoding import decode

        snapshot = decode(path.read_bytes())
        for digest, at in snapshot["spent"].items():
            self._spent.setdefault(digest, at)

    def load_rating_log(self, path: Path | str) -> int:
        """Ingest previously accepted ratings (they were verified before being
        logged); restores spend state for logged tickets as well."""
        count = 0
        for raw in read_records(path):
            digest = raw.pop("aik_digest", None)
            record = RatingRecord.from_record(raw)
            self._records.append(record)
            if digest is not None:
                self._spent.setdefault(digest, record.received)
            count += 1
        return count
