"""Dual private/public ledgers over the block DAG consensus core.

Both ledgers share the same machinery: transactions wait in a pending
pool, sealing drains the pool into a block on top of the current tips,
and the confirmed stream replays sealed transactions in GHOSTDAG order.
They differ in what they admit. The private ledger carries EHR anchors,
rule evaluations, and access changes. The public ledger admits exactly
one kind, AlertEvent, whose body is held to a closed schema so that no
health data can leak through it: the permitted fields are a patient
pseudonym, a rule id, an EHR record hash, a timestamp, and a severity
tag, and anything else is rejected before pooling.
"""

from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .dag import Block, BlockDag, BlockId, GENESIS_TIMESTAMP
from .errors import (
    FormatError,
    KindNotAdmissible,
    PhiLeak,
    Unauthorized,
)
from .ghostdag import GhostdagParams, ghostdag_run
from .hashing import DIGEST_ALG, canonical_json, digest

EntityId = str

PRIVATE = "private"
PUBLIC = "public"

POOL_CAP = 1000


class TxKind(Enum):
    EHR_ANCHOR = "ehr_anchor"
    RULE_EVALUATION = "rule_evaluation"
    ALERT_EVENT = "alert_event"
    ACCESS_CHANGE = "access_change"


@dataclass(frozen=True)
class Transaction:
    """A ledger entry. Identity covers kind, body, and author; the
    submission time is bookkeeping, so a resubmitted transaction keeps
    its id and the confirmed stream can deduplicate retries."""

    kind: TxKind
    body: dict
    submitted_at: float
    author: EntityId
    id: bytes = field(init=False)

    def __post_init__(self):
        ident = canonical_json(
            {"kind": self.kind.value, "body": self.body, "author": self.author}
        )
        object.__setattr__(self, "id", digest(ident))

    def to_wire(self) -> dict:
        return {
            "kind": self.kind.value,
            "body": self.body,
            "submitted_at": self.submitted_at,
            "author": self.author,
            "id": self.id.hex(),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "Transaction":
        try:
            tx = cls(
                kind=TxKind(obj["kind"]),
                body=obj["body"],
                submitted_at=obj["submitted_at"],
                author=obj["author"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad transaction record: {exc}") from None
        if tx.id.hex() != obj.get("id"):
            raise FormatError("transaction id does not match its content")
        return tx


# Closed schema for public alert bodies. The field list is exhaustive;
# values are shape-checked and may not mention any vital kind by name.

ALERT_SEVERITIES = ("advisory", "urgent")
VITAL_KIND_NAMES = ("heart_rate", "systolic_bp", "diastolic_bp", "glucose", "respiration")

_ALERT_FIELDS: dict[str, type | tuple] = {
    "patient": str,
    "rule_id": str,
    "ehr_record_hash": str,
    "occurred_at": (int, float),
    "severity": str,
}
_HEX64 = re.compile(r"^[0-9a-f]{64}$")
_OPAQUE = re.compile(r"^[A-Za-z0-9_.-]+$")


def validate_alert_body(body) -> None:
    """Reject anything but the closed AlertEvent schema. Raises PhiLeak."""
    if not isinstance(body, dict):
        raise PhiLeak("alert body must be a flat field map")
    extra = sorted(set(body) - set(_ALERT_FIELDS))
    if extra:
        raise PhiLeak(f"alert body carries fields outside the schema: {extra}")
    missing = sorted(set(_ALERT_FIELDS) - set(body))
    if missing:
        raise PhiLeak(f"alert body is missing fields: {missing}")
    for name, kind in _ALERT_FIELDS.items():
        value = body[name]
        if isinstance(value, bool) or not isinstance(value, kind):
            raise PhiLeak(f"alert field {name!r} has the wrong shape")
    for name in ("patient", "rule_id"):
        if not _OPAQUE.match(body[name]):
            raise PhiLeak(f"alert field {name!r} must be an opaque token")
        lowered = body[name].lower()
        if any(v in lowered for v in VITAL_KIND_NAMES):
            raise PhiLeak(f"alert field {name!r} names a vital kind")
    if not _HEX64.match(body["ehr_record_hash"]):
        raise PhiLeak("ehr_record_hash must be a 64-char hex digest")
    if not math.isfinite(body["occurred_at"]):
        raise PhiLeak("occurred_at must be a finite time")
    if body["severity"] not in ALERT_SEVERITIES:
        raise PhiLeak(f"severity must be one of {ALERT_SEVERITIES}")


@dataclass(frozen=True)
class SubmitReceipt:
    tx_id: bytes
    position: int  # index in the pending pool at submission time


@dataclass(frozen=True)
class ConfirmedTx:
    tx: Transaction
    block: BlockId
    position: int  # index in the confirmed stream


@dataclass(frozen=True)
class ConfirmedStream:
    entries: tuple[ConfirmedTx, ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def find(self, tx_id: bytes) -> ConfirmedTx | None:
        for entry in self.entries:
            if entry.tx.id == tx_id:
                return entry
        return None


class Ledger:
    """One ledger instance: a DAG of sealed blocks plus a pending pool."""

    def __init__(
        self,
        visibility: str,
        k: int,
        authorized_writers,
        max_block_txs: int = POOL_CAP,
    ):
        if visibility not in (PRIVATE, PUBLIC):
            raise FormatError(f"visibility must be private or public, got {visibility!r}")
        self.visibility = visibility
        self.params = GhostdagParams(k)
        self.authorized_writers = set(authorized_writers)
        self.max_block_txs = max_block_txs
        self.dag = BlockDag()
        # the genesis names the digest algorithm, so verification against
        # this ledger is self-describing
        gen = Block.create((), (), GENESIS_TIMESTAMP, f"genesis:{visibility}:{DIGEST_ALG}")
        self.dag.add(gen)
        self.genesis_id = gen.id
        self.pool: list[Transaction] = []
        self._tx_ids: set[bytes] = set()

    def admissible_kinds(self) -> frozenset[TxKind]:
        if self.visibility == PUBLIC:
            return frozenset({TxKind.ALERT_EVENT})
        return frozenset(TxKind)

    def has_tx(self, tx_id: bytes) -> bool:
        """True if the tx id was ever pooled or sealed here."""
        return tx_id in self._tx_ids

    def submit(self, tx: Transaction, author: EntityId) -> SubmitReceipt:
        if author not in self.authorized_writers:
            raise Unauthorized(f"{author!r} may not write to the {self.visibility} ledger")
        if tx.author != author:
            raise Unauthorized(f"{author!r} cannot submit a transaction authored by {tx.author!r}")
        if tx.kind not in self.admissible_kinds():
            raise KindNotAdmissible(
                f"{tx.kind.value} transactions are not accepted on the {self.visibility} ledger"
            )
        if tx.kind is TxKind.ALERT_EVENT:
            validate_alert_body(tx.body)
        self.pool.append(tx)
        self._tx_ids.add(tx.id)
        return SubmitReceipt(tx_id=tx.id, position=len(self.pool) - 1)

    def seal_block(self, creator: EntityId, now: float) -> Block:
        if creator not in self.authorized_writers:
            raise Unauthorized(f"{creator!r} may not seal blocks on the {self.visibility} ledger")
        payload = tuple(self.pool[: self.max_block_txs])
        del self.pool[: self.max_block_txs]
        block = Block.create(sorted(self.dag.tips), payload, now, creator)
        self.dag.add(block)
        return block

    def confirmed(self) -> ConfirmedStream:
        """Sealed transactions in consensus order.

        Blocks follow the GHOSTDAG total order; within a block the pool
        submission order holds; duplicate tx ids keep only their first
        occurrence.
        """
        ordered = ghostdag_run(self.dag, self.params)
        entries: list[ConfirmedTx] = []
        seen: set[bytes] = set()
        for bid in ordered.order:
            for tx in self.dag.blocks[bid].payload:
                if tx.id in seen:
                    continue
                seen.add(tx.id)
                entries.append(ConfirmedTx(tx=tx, block=bid, position=len(entries)))
        return ConfirmedStream(entries=tuple(entries))

    # Persistence: the DAG text format extended with payload, timestamp,
    # and creator columns. Block ids are re-derived from content on load,
    # so a tampered file fails to parse.

    def save_text(self) -> str:
        writers = ",".join(sorted(self.authorized_writers))
        lines = [
            f"# rpmdag-ledger v1 visibility={self.visibility} k={self.params.k} "
            f"alg={DIGEST_ALG} max={self.max_block_txs} writers={writers}"
        ]
        for bid in self.dag.topological_order():
            block = self.dag.blocks[bid]
            parents = ",".join(sorted(p.hex() for p in block.parents))
            payload = ",".join(
                base64.b64encode(canonical_json(tx.to_wire())).decode() for tx in block.payload
            )
            lines.append(
                f"{bid.hex()}: {parents} | {payload} | {block.timestamp!r} | {block.creator}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.save_text())

    @classmethod
    def load_text(cls, text: str) -> "Ledger":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# rpmdag-ledger v1 "):
            raise FormatError("not a ledger file")
        header = dict(
            part.split("=", 1) for part in lines[0].removeprefix("# rpmdag-ledger v1 ").split()
        )
        try:
            visibility = header["visibility"]
            k = int(header["k"])
            max_txs = int(header["max"])
            writers = [w for w in header.get("writers", "").split(",") if w]
            if header["alg"] != DIGEST_ALG:
                raise FormatError(f"unsupported digest algorithm {header['alg']!r}")
        except KeyError as exc:
            raise FormatError(f"ledger header is missing {exc}") from None

        ledger = cls(visibility, k, writers, max_txs)
        by_hex = {ledger.genesis_id.hex(): ledger.genesis_id}
        for lineno, line in enumerate(lines[1:], start=2):
            cols = line.split(" | ")
            if len(cols) != 4:
                raise FormatError(f"line {lineno}: expected 4 columns")
            head, payload_col, ts_col, creator = cols
            declared, _, parents_col = head.partition(":")
            declared = declared.strip()
            parent_ids = []
            for p in parents_col.split(","):
                p = p.strip()
                if not p:
                    continue
                if p not in by_hex:
                    raise FormatError(f"line {lineno}: unknown parent {p[:12]}")
                parent_ids.append(by_hex[p])
            txs = []
            for chunk in payload_col.split(","):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    obj = json.loads(base64.b64decode(chunk))
                except (ValueError, json.JSONDecodeError) as exc:
                    raise FormatError(f"line {lineno}: bad payload: {exc}") from None
                txs.append(Transaction.from_wire(obj))
            try:
                timestamp = float(ts_col.strip())
            except ValueError:
                raise FormatError(f"line {lineno}: bad timestamp {ts_col!r}") from None
            if not parent_ids:
                # re-derived genesis must already match the constructor's
                if declared != ledger.genesis_id.hex():
                    raise FormatError(f"line {lineno}: genesis does not match the ledger header")
                continue
            block = Block.create(parent_ids, txs, timestamp, creator)
            if block.id.hex() != declared:
                raise FormatError(f"line {lineno}: block content does not match its id")
            ledger.dag.add(block)
            by_hex[block.id.hex()] = block.id
            for tx in txs:
                ledger._tx_ids.add(tx.id)
        return ledger

    @classmethod
    def load(cls, path) -> "Ledger":
        with open(path) as fh:
            return cls.load_text(fh.read())


@dataclass
class DualLedger:
    """The private/public ledger pair used by the monitoring pipeline."""

    private: Ledger
    public: Ledger

    @classmethod
    def create(cls, k: int, private_writers, public_writers) -> "DualLedger":
        return cls(
            private=Ledger(PRIVATE, k, private_writers),
            public=Ledger(PUBLIC, k, public_writers),
        )

    def submit_private(self, tx: Transaction, author: EntityId) -> SubmitReceipt:
        # the private side accepts every kind, except an alert that would
        # duplicate one already on the public ledger
        if tx.kind is TxKind.ALERT_EVENT and self.public.has_tx(tx.id):
            raise KindNotAdmissible("alert already recorded on the public ledger")
        return self.private.submit(tx, author)

    def submit_public(self, tx: Transaction, author: EntityId) -> SubmitReceipt:
        return self.public.submit(tx, author)

    def seal_all(self, creator: EntityId, now: float) -> tuple[Block, Block]:
        return self.private.seal_block(creator, now), self.public.seal_block(creator, now)


def inspect_jsonl(ledger: Ledger) -> str:
    """Confirmed stream as JSON-lines, one entry per line."""
    lines = []
    for entry in ledger.confirmed():
        lines.append(
            json.dumps(
                {
                    "position": entry.position,
                    "block": entry.block.hex(),
                    "tx": entry.tx.to_wire(),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
