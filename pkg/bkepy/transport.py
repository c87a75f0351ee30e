from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Deque, Dict, Iterable, List, Optional

from .curve_math import CurveParams
from .errors import MalformedEncoding, UnexpectedMessage
from .wire import ByteReader, ByteWriter

LOGGER = logging.getLogger(__name__)

ENVELOPE_MAGIC = b"BKE1"


class Role(str, Enum):
    RCA = "rca"
    ECA = "eca"
    PCA = "pca"
    RA = "ra"
    DEVICE = "device"
    HOSPITAL = "hospital"


class MessageKind(str, Enum):
    ENROLL_REQUEST = "enroll-request"
    ENROLL_RESPONSE = "enroll-response"
    PSEUDONYM_REQUEST = "pseudonym-request"
    COCOON_REQUEST = "cocoon-request"
    BUTTERFLY_BATCH = "butterfly-batch"
    PSEUDONYM_BATCH = "pseudonym-batch"
    EXPANSION_VALUE = "expansion-value"
    READING = "reading"


Decoder = Callable[[bytes, CurveParams], Any]
Tamper = Callable[[bytes, CurveParams], bytes]


@dataclass(frozen=True)
class MessageSchema:
    kind: MessageKind
    decoder: Decoder


class MessageSchemas:
    _SCHEMAS: Dict[MessageKind, MessageSchema] = {}

    @classmethod
    def register(cls, schema: MessageSchema) -> None:
        cls._SCHEMAS[schema.kind] = schema

    @classmethod
    def get(cls, kind: MessageKind) -> Optional[MessageSchema]:
        return cls._SCHEMAS.get(MessageKind(kind))

    @classmethod
    def decode(cls, kind: MessageKind, payload: bytes, curve: CurveParams) -> Any:
        schema = cls.get(kind)
        if schema is None:
            raise UnexpectedMessage(f"No schema registered for message kind '{kind}'")
        return schema.decoder(payload, curve)


@dataclass(frozen=True)
class Envelope:
    from_role: Role
    to_role: Role
    msg_kind: MessageKind
    payload: bytes
    seq: int
    out_of_band: bool = False

    def encode(self) -> bytes:
        return (
            ByteWriter()
            .raw(ENVELOPE_MAGIC)
            .u64(self.seq)
            .blob16(self.from_role.value.encode("ascii"))
            .blob16(self.to_role.value.encode("ascii"))
            .blob16(self.msg_kind.value.encode("ascii"))
            .u8(1 if self.out_of_band else 0)
            .blob32(self.payload)
            .getvalue()
        )

    @classmethod
    def decode(cls, data: bytes) -> "Envelope":
        reader = ByteReader(data, what="envelope")
        reader.expect(ENVELOPE_MAGIC)
        seq = reader.u64()
        try:
            from_role = Role(reader.blob16().decode("ascii"))
            to_role = Role(reader.blob16().decode("ascii"))
            kind = MessageKind(reader.blob16().decode("ascii"))
        except (UnicodeDecodeError, ValueError) as err:
            raise MalformedEncoding(f"Unknown envelope header field: {err}", reader.pos) from err
        out_of_band = reader.u8() == 1
        payload = reader.blob32()
        reader.expect_end()
        return cls(from_role, to_role, kind, payload, seq, out_of_band)

    def header(self, observer: Role) -> str:
        flags = " out-of-band" if self.out_of_band else ""
        return (
            f"role={observer.value} seq={self.seq} kind={self.msg_kind.value} "
            f"{self.from_role.value}->{self.to_role.value}{flags}"
        )


class Transcript:
    """Append-only record of the envelopes one role has seen."""

    def __init__(self, role: Role) -> None:
        self.role = role
        self._envelopes: List[Envelope] = []

    def append(self, envelope: Envelope) -> None:
        if self._envelopes and envelope.seq <= self._envelopes[-1].seq:
            raise ValueError(
                f"Transcript for {self.role.value} requires increasing seq, "
                f"got {envelope.seq} after {self._envelopes[-1].seq}"
            )
        self._envelopes.append(envelope)

    @property
    def envelopes(self) -> List[Envelope]:
        return list(self._envelopes)

    def __len__(self) -> int:
        return len(self._envelopes)

    def __iter__(self):
        return iter(self._envelopes)

    def dump(self) -> str:
        return "".join(f"{env.header(self.role)} {env.encode().hex()}\n" for env in self._envelopes)

    def raw_bytes(self) -> bytes:
        return b"".join(env.encode() for env in self._envelopes)


class Bus:
    """Synchronous in-process message bus with per-recipient FIFO delivery."""

    def __init__(self, curve: CurveParams, *, roles: Iterable[Role] = tuple(Role)) -> None:
        self.curve = curve
        self._seq = 0
        self._lock = threading.Lock()
        self._inboxes: Dict[Role, Deque[Envelope]] = {role: deque() for role in roles}
        self._transcripts: Dict[Role, Transcript] = {role: Transcript(role) for role in roles}
        self._tampers: Dict[MessageKind, Tamper] = {}

    def transcript(self, role: Role) -> Transcript:
        return self._transcripts[Role(role)]

    @property
    def transcripts(self) -> Dict[Role, Transcript]:
        return dict(self._transcripts)

    def add_tamper(self, kind: MessageKind, tamper: Tamper) -> None:
        self._tampers[MessageKind(kind)] = tamper

    def send(
        self,
        from_role: Role,
        to_role: Role,
        kind: MessageKind,
        payload: bytes,
        *,
        out_of_band: bool = False,
    ) -> Envelope:
        MessageSchemas.decode(kind, payload, self.curve)
        delivered = payload
        tamper = self._tampers.get(kind)
        if tamper is not None:
            delivered = tamper(payload, self.curve)
            LOGGER.warning("Tampering with %s in transit from %s to %s", kind.value, from_role.value, to_role.value)
        with self._lock:
            self._seq += 1
            sent = Envelope(from_role, to_role, kind, payload, self._seq, out_of_band)
            received = sent if delivered == payload else Envelope(
                from_role, to_role, kind, delivered, self._seq, out_of_band
            )
            self._transcripts[from_role].append(sent)
            self._transcripts[to_role].append(received)
            self._inboxes[to_role].append(received)
        LOGGER.debug(
            "seq=%d %s %s->%s (%d bytes)", sent.seq, kind.value, from_role.value, to_role.value, len(payload)
        )
        return sent

    def receive(self, role: Role, kind: MessageKind) -> Envelope:
        with self._lock:
            inbox = self._inboxes[role]
            if not inbox:
                raise UnexpectedMessage(f"{role.value} expected {kind.value} but its inbox is empty")
            envelope = inbox.popleft()
        if envelope.msg_kind is not kind:
            raise UnexpectedMessage(
                f"{role.value} expected {kind.value} but received {envelope.msg_kind.value}"
            )
        return envelope

    def pending(self, role: Role) -> int:
        return len(self._inboxes[role])
