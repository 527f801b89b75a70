"""Role-based access control with patient-managed grants.

Entities authenticate with a shared-secret token and receive a session
bounded by a lifetime in simulated time. Only patients grant or revoke
access to their own data; every change is mirrored as an AccessChange
transaction on the private ledger, so folding over that history rebuilds
the grant table. check_access returns a plain boolean: denial is a value,
not an exception.
"""

from __future__ import annotations

import hmac
import time
from dataclasses import dataclass
from enum import Enum

from .errors import (
    AlreadyRevoked,
    BadCredential,
    NotPatient,
    Unauthorized,
    UnknownEntity,
    UnknownGrant,
)
from .hashing import digest
from .ledger import Ledger, Transaction, TxKind

DEFAULT_SESSION_LIFETIME = 3600.0  # one simulated hour


class ManualClock:
    """Callable clock for simulations and tests. Advance via .now."""

    def __init__(self, now: float = 0.0):
        self.now = now

    def __call__(self) -> float:
        return self.now


class Role(Enum):
    PATIENT = "patient"
    HEALTHCARE_PROVIDER = "healthcare_provider"
    INSURER = "insurer"
    DEVICE = "device"
    SEALER_NODE = "sealer_node"


class Scope(Enum):
    EHR_READ = "ehr_read"
    ALERTS_SUBSCRIBE = "alerts_subscribe"
    TREATMENT_HISTORY = "treatment_history"


@dataclass(frozen=True)
class Entity:
    entity_id: str
    role: Role
    credential_hash: bytes


@dataclass(frozen=True)
class Session:
    token: str
    entity: str
    role: Role
    issued_at: float
    expires_at: float


@dataclass
class AccessGrant:
    grant_id: str
    grantor: str  # the patient
    grantee: str
    scope: Scope
    granted_at: float
    revoked_at: float | None = None

    @property
    def active(self) -> bool:
        return self.revoked_at is None


class AccessController:
    """Registry of entities, sessions, and grants.

    When constructed with a ledger, every grant and revoke is mirrored as
    an AccessChange transaction authored by the controller's service
    entity.
    """

    def __init__(
        self,
        clock=time.time,
        session_lifetime: float = DEFAULT_SESSION_LIFETIME,
        ledger: Ledger | None = None,
        author: str = "acl-service",
    ):
        self.clock = clock
        self.session_lifetime = session_lifetime
        self.ledger = ledger
        self.author = author
        self._entities: dict[str, Entity] = {}
        self._sessions: dict[str, Session] = {}
        self._grants: dict[str, AccessGrant] = {}
        self._session_seq = 0
        self._grant_seq = 0

    # Entities and sessions

    def register(self, entity_id: str, role: Role, credential: str) -> Entity:
        entity = Entity(entity_id, role, digest(credential.encode()))
        self._entities[entity_id] = entity
        return entity

    def authenticate(self, entity_id: str, credential: str) -> Session:
        entity = self._entities.get(entity_id)
        if entity is None:
            raise UnknownEntity(f"no entity {entity_id!r}")
        if not hmac.compare_digest(entity.credential_hash, digest(credential.encode())):
            raise BadCredential(f"credential rejected for {entity_id!r}")
        now = self.clock()
        self._session_seq += 1
        session = Session(
            token=f"s{self._session_seq:05d}",
            entity=entity_id,
            role=entity.role,
            issued_at=now,
            expires_at=now + self.session_lifetime,
        )
        self._sessions[session.token] = session
        return session

    def session_valid(self, session: Session) -> bool:
        live = self._sessions.get(session.token)
        return live == session and self.clock() < session.expires_at

    def _require_valid(self, session: Session):
        if not self.session_valid(session):
            raise Unauthorized("session is unknown or expired")

    # Grants

    def grant(self, session: Session, grantee: str, scope: Scope) -> AccessGrant:
        self._require_valid(session)
        if session.role is not Role.PATIENT:
            raise NotPatient(f"{session.entity!r} is not a patient")
        if grantee not in self._entities:
            raise UnknownEntity(f"no entity {grantee!r}")
        now = self.clock()
        self._grant_seq += 1
        grant = AccessGrant(
            grant_id=f"grant-{self._grant_seq:04d}",
            grantor=session.entity,
            grantee=grantee,
            scope=scope,
            granted_at=now,
        )
        self._grants[grant.grant_id] = grant
        self._mirror("grant", grant, now)
        return grant

    def revoke(self, session: Session, grant_id: str) -> AccessGrant:
        self._require_valid(session)
        grant = self._grants.get(grant_id)
        if grant is None:
            raise UnknownGrant(f"no grant {grant_id!r}")
        if session.role is not Role.PATIENT or session.entity != grant.grantor:
            raise NotPatient(f"{session.entity!r} does not own grant {grant_id!r}")
        if not grant.active:
            raise AlreadyRevoked(f"grant {grant_id!r} was already revoked")
        now = self.clock()
        grant.revoked_at = now
        self._mirror("revoke", grant, now)
        return grant

    def check_access(self, session: Session, patient: str, scope: Scope) -> bool:
        """Allow iff the session is live and the entity is the patient
        themselves or holds an active grant from them for this scope."""
        if not self.session_valid(session):
            return False
        if session.entity == patient:
            return True
        return any(
            g.active
            and g.grantor == patient
            and g.grantee == session.entity
            and g.scope is scope
            for g in self._grants.values()
        )

    def grant_table(self) -> dict[str, AccessGrant]:
        return {gid: _copy_grant(g) for gid, g in self._grants.items()}

    def load_grants(self, grants: dict[str, AccessGrant]):
        """Preload state rebuilt from a ledger (see rebuild_grants)."""
        self._grants = {gid: _copy_grant(g) for gid, g in grants.items()}
        numeric = [
            int(gid.split("-")[1]) for gid in grants if gid.startswith("grant-")
        ]
        self._grant_seq = max(numeric, default=0)

    def _mirror(self, action: str, grant: AccessGrant, now: float):
        if self.ledger is None:
            return
        tx = Transaction(
            kind=TxKind.ACCESS_CHANGE,
            body={
                "action": action,
                "grant_id": grant.grant_id,
                "grantor": grant.grantor,
                "grantee": grant.grantee,
                "scope": grant.scope.value,
                "at": now,
            },
            submitted_at=now,
            author=self.author,
        )
        self.ledger.submit(tx, self.author)


def _copy_grant(g: AccessGrant) -> AccessGrant:
    return AccessGrant(g.grant_id, g.grantor, g.grantee, g.scope, g.granted_at, g.revoked_at)


def rebuild_grants(ledger: Ledger) -> dict[str, AccessGrant]:
    """Fold the confirmed AccessChange history into a grant table."""
    grants: dict[str, AccessGrant] = {}
    for entry in ledger.confirmed():
        if entry.tx.kind is not TxKind.ACCESS_CHANGE:
            continue
        body = entry.tx.body
        if body["action"] == "grant":
            grants[body["grant_id"]] = AccessGrant(
                grant_id=body["grant_id"],
                grantor=body["grantor"],
                grantee=body["grantee"],
                scope=Scope(body["scope"]),
                granted_at=body["at"],
            )
        elif body["action"] == "revoke" and body["grant_id"] in grants:
            grants[body["grant_id"]].revoked_at = body["at"]
    return grants
