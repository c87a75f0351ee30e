"""Protocol roles and the healthcare pseudonym flow.

Each role owns its keys and random source and talks to the others only
through serialized envelopes on a :class:`~bkepy.transport.Bus`. The module
level functions (``bootstrap``, ``enroll_device``, ``request_pseudonyms``,
``negotiate_t``, ``hospital_expand``, ``device_expand_hospital_pub``,
``send_reading``, ``hospital_receive``) drive one step of the flow each.
"""

from __future__ import annotations

import logging
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import bke, certs, curve_math, primitives
from .certs import CertChain, Certificate, SubjectKind
from .config import PkiPolicy
from .curve_math import CurveParams, KeyPair, Point, Scalar
from .errors import (
    BadChain,
    BadSignature,
    DegenerateKey,
    KeyMismatch,
    MacMismatch,
    MalformedEncoding,
    NotEnrolled,
    OffCurveInput,
    PkiError,
    RngFailure,
    UnexpectedMessage,
)
from .primitives import SealedMessage, Signature
from .rng import RandomSource, SystemRandomSource, draw_bytes
from .transport import Bus, MessageKind, MessageSchema, MessageSchemas, Role
from .wire import ByteReader, ByteWriter

LOGGER = logging.getLogger(__name__)

RA_VALIDATE_ENROLLMENT = "ra_validate_enrollment"
DEVICE_VERIFY_PSEUDONYM = "device_verify_pseudonym"
DEVICE_UNWRAP_BUTTERFLY = "device_unwrap_butterfly"
HOSPITAL_VERIFY_CHAIN = "hospital_verify_chain"
HOSPITAL_VERIFY_SIGNATURE = "hospital_verify_signature"
HOSPITAL_DECRYPT = "hospital_decrypt"

CHECKPOINTS: Tuple[str, ...] = (
    RA_VALIDATE_ENROLLMENT,
    DEVICE_VERIFY_PSEUDONYM,
    DEVICE_UNWRAP_BUTTERFLY,
    HOSPITAL_VERIFY_CHAIN,
    HOSPITAL_VERIFY_SIGNATURE,
    HOSPITAL_DECRYPT,
)

REQUEST_ID_SIZE = 16
_MAX_T_DRAWS = 64


# Messages
# #########################################################


@dataclass(frozen=True)
class ExpansionValue:
    t: Scalar = field(repr=False)

    def encode(self, curve: CurveParams) -> bytes:
        return curve_math.encode_scalar(self.t, curve)

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "ExpansionValue":
        t = curve_math.decode_scalar(data, curve)
        if t == 0:
            raise MalformedEncoding("Expansion value must be non-zero", 0)
        return cls(t)


@dataclass(frozen=True)
class EnrollRequest:
    subject_kind: SubjectKind
    subject_pub: Point

    def encode(self, curve: CurveParams) -> bytes:
        return (
            ByteWriter()
            .blob16(self.subject_kind.value.encode("ascii"))
            .blob16(curve_math.encode_point(self.subject_pub, curve))
            .getvalue()
        )

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "EnrollRequest":
        reader = ByteReader(data, what="enrollment request")
        offset = reader.pos
        try:
            kind = SubjectKind(reader.blob16().decode("ascii"))
        except (UnicodeDecodeError, ValueError) as err:
            raise MalformedEncoding("Unknown subject kind in enrollment request", offset) from err
        subject_pub = curve_math.decode_point(reader.blob16(), curve)
        reader.expect_end()
        return cls(kind, subject_pub)


def _decode_cert_payload(data: bytes, curve: CurveParams) -> Certificate:
    return Certificate.decode(data)


@dataclass(frozen=True)
class PseudonymRequest:
    """Device to RA: enrollment certificate, caterpillar share, index range, proof of possession."""

    enrollment_cert: Certificate
    caterpillar: bke.CaterpillarPublic
    start: int
    count: int
    pop_signature: Signature

    def body_bytes(self, curve: CurveParams) -> bytes:
        return _pseudonym_request_body(self.enrollment_cert, self.caterpillar, self.start, self.count, curve)

    def encode(self, curve: CurveParams) -> bytes:
        return self.body_bytes(curve) + self.pop_signature.encode(curve)

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "PseudonymRequest":
        reader = ByteReader(data, what="pseudonym request")
        cert = Certificate.decode(reader.blob32())
        caterpillar = bke.CaterpillarPublic.decode(reader.blob16(), curve)
        start = reader.u32()
        count = reader.u32()
        signature = Signature.decode(reader.take(2 * curve.order_size), curve)
        reader.expect_end()
        return cls(cert, caterpillar, start, count, signature)


def _pseudonym_request_body(
    cert: Certificate,
    caterpillar: bke.CaterpillarPublic,
    start: int,
    count: int,
    curve: CurveParams,
) -> bytes:
    return (
        ByteWriter()
        .blob32(cert.encode())
        .blob16(caterpillar.encode(curve))
        .u32(start)
        .u32(count)
        .getvalue()
    )


@dataclass(frozen=True)
class CocoonRequest:
    request_id: bytes
    cocoons: Tuple[bke.CocoonPublic, ...]

    def encode(self, curve: CurveParams) -> bytes:
        writer = ByteWriter().blob16(self.request_id).u32(len(self.cocoons))
        for cocoon in self.cocoons:
            writer.raw(cocoon.encode(curve))
        return writer.getvalue()

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "CocoonRequest":
        reader = ByteReader(data, what="cocoon request")
        request_id = reader.blob16()
        count = reader.u32()
        cocoons = tuple(bke.CocoonPublic.decode_from(reader, curve) for _ in range(count))
        reader.expect_end()
        return cls(request_id, cocoons)


BatchItem = Tuple[bke.ButterflyResponse, Certificate]


def _write_items(writer: ByteWriter, items: Sequence[BatchItem], curve: CurveParams) -> ByteWriter:
    writer.u32(len(items))
    for response, cert in items:
        writer.raw(response.encode(curve)).blob32(cert.encode())
    return writer


def _read_items(reader: ByteReader, curve: CurveParams) -> Tuple[BatchItem, ...]:
    count = reader.u32()
    items = []
    for _ in range(count):
        response = bke.ButterflyResponse.decode_from(reader, curve)
        items.append((response, Certificate.decode(reader.blob32())))
    return tuple(items)


@dataclass(frozen=True)
class ButterflyBatch:
    """PCA to RA: butterfly responses with their pseudonym certificates."""

    request_id: bytes
    items: Tuple[BatchItem, ...]

    def encode(self, curve: CurveParams) -> bytes:
        return _write_items(ByteWriter().blob16(self.request_id), self.items, curve).getvalue()

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "ButterflyBatch":
        reader = ByteReader(data, what="butterfly batch")
        request_id = reader.blob16()
        items = _read_items(reader, curve)
        reader.expect_end()
        return cls(request_id, items)


@dataclass(frozen=True)
class PseudonymBatch:
    items: Tuple[BatchItem, ...]

    def encode(self, curve: CurveParams) -> bytes:
        return _write_items(ByteWriter(), self.items, curve).getvalue()

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "PseudonymBatch":
        reader = ByteReader(data, what="pseudonym batch")
        items = _read_items(reader, curve)
        reader.expect_end()
        return cls(items)


@dataclass(frozen=True)
class ReadingMessage:
    pseudonym_cert: Certificate
    sealed: SealedMessage
    signature: Signature

    def encode(self, curve: CurveParams) -> bytes:
        return (
            ByteWriter()
            .blob32(self.pseudonym_cert.encode())
            .blob32(self.sealed.encode())
            .raw(self.signature.encode(curve))
            .getvalue()
        )

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "ReadingMessage":
        reader = ByteReader(data, what="reading message")
        cert = Certificate.decode(reader.blob32())
        sealed = SealedMessage.decode(reader.blob32())
        signature = Signature.decode(reader.take(2 * curve.order_size), curve)
        reader.expect_end()
        return cls(cert, sealed, signature)


def _register_message_schemas() -> None:
    for kind, decoder in (
        (MessageKind.ENROLL_REQUEST, EnrollRequest.decode),
        (MessageKind.ENROLL_RESPONSE, _decode_cert_payload),
        (MessageKind.PSEUDONYM_REQUEST, PseudonymRequest.decode),
        (MessageKind.COCOON_REQUEST, CocoonRequest.decode),
        (MessageKind.BUTTERFLY_BATCH, ButterflyBatch.decode),
        (MessageKind.PSEUDONYM_BATCH, PseudonymBatch.decode),
        (MessageKind.EXPANSION_VALUE, ExpansionValue.decode),
        (MessageKind.READING, ReadingMessage.decode),
    ):
        MessageSchemas.register(MessageSchema(kind, decoder))


_register_message_schemas()


# Shared simulation state
# #########################################################


@dataclass
class LogicalClock:
    now: int

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("Logical time cannot run backwards")
        self.now += seconds
        return self.now


class CheckpointLog:
    def __init__(self) -> None:
        self._passed: List[str] = []

    def record(self, name: str) -> None:
        LOGGER.debug("Checkpoint passed: %s", name)
        self._passed.append(name)

    @property
    def passed(self) -> List[str]:
        return list(self._passed)

    def __contains__(self, name: object) -> bool:
        return name in self._passed


@dataclass
class SimulationContext:
    curve: CurveParams
    bus: Bus
    clock: LogicalClock
    policy: PkiPolicy = field(default_factory=PkiPolicy)
    checkpoints: CheckpointLog = field(default_factory=CheckpointLog)


@dataclass(frozen=True)
class AuthorityDirectory:
    """Authority certificates every participant learns at bootstrap."""

    root: Certificate
    eca: Certificate
    pca: Certificate
    ra: Certificate

    def by_serial(self, serial: bytes) -> Optional[Certificate]:
        for cert in (self.root, self.eca, self.pca, self.ra):
            if cert.serial == serial:
                return cert
        return None

    def chain_for(self, leaf: Certificate) -> CertChain:
        chain = [leaf]
        current = leaf
        while not current.is_self_signed and len(chain) < 4:
            issuer = self.by_serial(current.issuer_serial)
            if issuer is None:
                break
            chain.append(issuer)
            current = issuer
        if chain[-1].serial != self.root.serial:
            chain.append(self.root)
        return tuple(chain)


@dataclass(frozen=True)
class PseudonymCredential:
    priv: Scalar = field(repr=False)
    cert: Certificate

    @property
    def pub(self) -> Point:
        return self.cert.subject_pub


@dataclass(frozen=True)
class Episode:
    t: ExpansionValue
    z: Scalar = field(repr=False)
    Z: Point


# Roles
# #########################################################


class Entity:
    role: Role

    def __init__(self, context: SimulationContext, rng: RandomSource) -> None:
        self.context = context
        self.rng = rng

    @property
    def curve(self) -> CurveParams:
        return self.context.curve

    @property
    def bus(self) -> Bus:
        return self.context.bus

    @property
    def now(self) -> int:
        return self.context.clock.now

    @property
    def policy(self) -> PkiPolicy:
        return self.context.policy

    def _send(self, to_role: Role, kind: MessageKind, payload: bytes, *, out_of_band: bool = False) -> None:
        self.bus.send(self.role, to_role, kind, payload, out_of_band=out_of_band)

    def _checkpoint(self, name: str) -> None:
        self.context.checkpoints.record(name)


class Authority(Entity):
    kind: SubjectKind

    def __init__(self, context: SimulationContext, rng: RandomSource) -> None:
        super().__init__(context, rng)
        self.keys: KeyPair = curve_math.keygen(context.curve, rng)
        self.cert: Optional[Certificate] = None
        self.directory: Optional[AuthorityDirectory] = None

    def _require_directory(self) -> AuthorityDirectory:
        if self.directory is None:
            raise UnexpectedMessage(f"{self.role.value} has not been bootstrapped")
        return self.directory


class RootAuthority(Authority):
    role = Role.RCA
    kind = SubjectKind.RCA

    def __init__(self, context: SimulationContext, rng: RandomSource) -> None:
        super().__init__(context, rng)
        self.cert = certs.issue_root(
            self.keys.priv,
            self.keys.pub,
            b"rca",
            context.policy.authority_validity(),
            context.curve,
            rng,
        )

    def certify(self, authority: Authority) -> Certificate:
        authority.cert = certs.issue(
            self.cert,
            self.keys.priv,
            authority.keys.pub,
            authority.kind,
            authority.kind.value.encode("ascii"),
            self.policy.authority_validity(),
            self.rng,
        )
        return authority.cert


class EnrollmentAuthority(Authority):
    role = Role.ECA
    kind = SubjectKind.ECA

    def handle_enrollment(self) -> Certificate:
        envelope = self.bus.receive(self.role, MessageKind.ENROLL_REQUEST)
        request = EnrollRequest.decode(envelope.payload, self.curve)
        directory = self._require_directory()
        verdict = certs.verify_chain((self.cert, directory.root), directory.root, self.now)
        if not verdict:
            raise BadChain(
                f"Enrollment authority certificate no longer chains to the root: {verdict.detail}",
                verdict.reason,
            )
        cert = certs.issue(
            self.cert,
            self.keys.priv,
            request.subject_pub,
            request.subject_kind,
            draw_bytes(self.rng, certs.SUBJECT_ID_SIZE),
            self.policy.enrollment_validity(self.now),
            self.rng,
        )
        self._send(envelope.from_role, MessageKind.ENROLL_RESPONSE, cert.encode())
        LOGGER.debug("Enrolled %s %s", request.subject_kind.value, cert.serial.hex())
        return cert


class RegistrationAuthority(Authority):
    role = Role.RA
    kind = SubjectKind.RA

    def __init__(self, context: SimulationContext, rng: RandomSource) -> None:
        super().__init__(context, rng)
        self._pending: Dict[bytes, Role] = {}

    def _validate(self, request: PseudonymRequest) -> None:
        directory = self._require_directory()
        leaf = request.enrollment_cert
        verdict = certs.verify_chain((leaf, directory.eca, directory.root), directory.root, self.now)
        if not verdict:
            raise NotEnrolled(f"Enrollment chain rejected ({verdict.reason.value}): {verdict.detail}")
        if leaf.subject_kind is not SubjectKind.DEVICE:
            raise NotEnrolled(f"Enrollment certificate is for a {leaf.subject_kind.value}, not a device")
        if leaf.subject_pub != request.caterpillar.A:
            raise NotEnrolled("Caterpillar signing key does not match the enrolled key")
        if request.count < 1:
            raise NotEnrolled("Pseudonym request asks for no certificates")
        if not primitives.ecdsa_verify(leaf.subject_pub, request.body_bytes(self.curve), request.pop_signature, self.curve):
            raise NotEnrolled("Proof of possession does not verify under the enrolled key")

    def process_pseudonym_request(self) -> bytes:
        envelope = self.bus.receive(self.role, MessageKind.PSEUDONYM_REQUEST)
        try:
            request = PseudonymRequest.decode(envelope.payload, self.curve)
            self._validate(request)
        except (MalformedEncoding, OffCurveInput) as err:
            raise NotEnrolled(f"Unreadable pseudonym request: {err}", step=RA_VALIDATE_ENROLLMENT) from err
        except NotEnrolled as err:
            LOGGER.warning("Rejecting pseudonym request: %s", err)
            raise err.with_context(step=RA_VALIDATE_ENROLLMENT)
        self._checkpoint(RA_VALIDATE_ENROLLMENT)

        cocoons: List[bke.CocoonPublic] = []
        for i in range(request.start, request.start + request.count):
            try:
                cocoons.append(bke.cocoon_public(request.caterpillar, i, self.curve))
            except PkiError as err:
                raise err.with_context(index=i)
        random.Random(draw_bytes(self.rng, 16)).shuffle(cocoons)
        request_id = draw_bytes(self.rng, REQUEST_ID_SIZE)
        self._pending[request_id] = envelope.from_role
        self._send(Role.PCA, MessageKind.COCOON_REQUEST, CocoonRequest(request_id, tuple(cocoons)).encode(self.curve))
        LOGGER.debug("Forwarded %d cocoon keys under request %s", len(cocoons), request_id.hex())
        return request_id

    def relay_butterfly_batch(self) -> None:
        envelope = self.bus.receive(self.role, MessageKind.BUTTERFLY_BATCH)
        batch = ButterflyBatch.decode(envelope.payload, self.curve)
        requester = self._pending.pop(batch.request_id, None)
        if requester is None:
            raise UnexpectedMessage(f"No pending pseudonym request {batch.request_id.hex()}")
        items = tuple(sorted(batch.items, key=lambda item: item[0].index))
        self._send(requester, MessageKind.PSEUDONYM_BATCH, PseudonymBatch(items).encode(self.curve))


class PseudonymAuthority(Authority):
    role = Role.PCA
    kind = SubjectKind.PCA

    def process_cocoon_request(self) -> int:
        envelope = self.bus.receive(self.role, MessageKind.COCOON_REQUEST)
        request = CocoonRequest.decode(envelope.payload, self.curve)
        validity = self.policy.pseudonym_validity(self.now)
        items: List[BatchItem] = []
        for cocoon in request.cocoons:
            try:
                response = bke.butterfly_public(
                    cocoon, self.keys, self.curve, self.rng, split_length=self.policy.split_length
                )
            except PkiError as err:
                raise err.with_context(index=cocoon.index)
            cert = certs.issue(
                self.cert,
                self.keys.priv,
                response.butterfly_pub,
                SubjectKind.PSEUDONYM,
                draw_bytes(self.rng, certs.SUBJECT_ID_SIZE),
                validity,
                self.rng,
            )
            items.append((response, cert))
        self._send(envelope.from_role, MessageKind.BUTTERFLY_BATCH, ButterflyBatch(request.request_id, tuple(items)).encode(self.curve))
        LOGGER.debug("Issued %d pseudonym certificates", len(items))
        return len(items)


class EndEntity(Entity, ABC):
    subject_kind: SubjectKind

    def __init__(self, context: SimulationContext, rng: RandomSource, directory: AuthorityDirectory) -> None:
        super().__init__(context, rng)
        self.directory = directory
        self.enrollment_cert: Optional[Certificate] = None

    @property
    @abstractmethod
    def enrollment_pub(self) -> Point: ...

    def enroll(self, eca: EnrollmentAuthority) -> Certificate:
        self.enrollment_cert = enroll_device(eca, self.enrollment_pub, self.subject_kind)
        return self.enrollment_cert


class Device(EndEntity):
    role = Role.DEVICE
    subject_kind = SubjectKind.DEVICE

    def __init__(self, context: SimulationContext, rng: RandomSource, directory: AuthorityDirectory) -> None:
        super().__init__(context, rng, directory)
        self.material = bke.gen_caterpillar(context.curve, rng)
        self.pseudonyms: List[PseudonymCredential] = []
        self.expansion_values: List[ExpansionValue] = []
        self.next_index = 0
        self._requested: Optional[range] = None

    @property
    def enrollment_pub(self) -> Point:
        return self.material.sign_pair.pub

    def send_pseudonym_request(self, count: int) -> None:
        if self.enrollment_cert is None:
            raise NotEnrolled("Device holds no enrollment certificate", step=RA_VALIDATE_ENROLLMENT)
        if count < 1:
            raise ValueError(f"Pseudonym count must be at least 1, got {count}")
        caterpillar = self.material.public()
        start = self.next_index
        body = _pseudonym_request_body(self.enrollment_cert, caterpillar, start, count, self.curve)
        signature = primitives.ecdsa_sign(self.material.sign_pair.priv, body, self.curve, self.rng)
        request = PseudonymRequest(self.enrollment_cert, caterpillar, start, count, signature)
        self._requested = range(start, start + count)
        self.next_index = start + count
        self._send(Role.RA, MessageKind.PSEUDONYM_REQUEST, request.encode(self.curve))

    def accept_pseudonym_batch(self) -> List[PseudonymCredential]:
        envelope = self.bus.receive(self.role, MessageKind.PSEUDONYM_BATCH)
        batch = PseudonymBatch.decode(envelope.payload, self.curve)
        curve = self.curve
        pca_cert = self.directory.pca
        root = self.directory.root

        indices = [response.index for response, _ in batch.items]
        if self._requested is None or sorted(indices) != list(self._requested):
            raise KeyMismatch(
                f"Pseudonym batch covers indices {indices}, expected {self._requested}",
                step=DEVICE_VERIFY_PSEUDONYM,
            )
        for response, cert in batch.items:
            verdict = certs.verify_chain((cert, pca_cert, root), root, self.now)
            if not verdict or cert.subject_kind is not SubjectKind.PSEUDONYM:
                raise BadChain(
                    f"Pseudonym certificate for index {response.index} rejected: {verdict.detail or 'not a pseudonym'}",
                    verdict.reason,
                    step=DEVICE_VERIFY_PSEUDONYM,
                    index=response.index,
                )
            if cert.subject_pub != response.butterfly_pub:
                raise KeyMismatch(
                    f"Pseudonym certificate for index {response.index} names a different key",
                    step=DEVICE_VERIFY_PSEUDONYM,
                    index=response.index,
                )
        self._checkpoint(DEVICE_VERIFY_PSEUDONYM)

        credentials: List[PseudonymCredential] = []
        for response, cert in batch.items:
            try:
                cocoon = bke.cocoon_private(self.material, response.index, curve)
                priv = bke.butterfly_private(
                    cocoon, response, pca_cert.subject_pub, curve, split_length=self.policy.split_length
                )
            except PkiError as err:
                raise err.with_context(step=DEVICE_UNWRAP_BUTTERFLY, index=response.index)
            credentials.append(PseudonymCredential(priv, cert))
        self._checkpoint(DEVICE_UNWRAP_BUTTERFLY)
        self._requested = None
        self.pseudonyms.extend(credentials)
        return credentials

    def accept_expansion_value(self) -> ExpansionValue:
        envelope = self.bus.receive(self.role, MessageKind.EXPANSION_VALUE)
        value = ExpansionValue.decode(envelope.payload, self.curve)
        self.expansion_values.append(value)
        return value


class Hospital(EndEntity):
    role = Role.HOSPITAL
    subject_kind = SubjectKind.HOSPITAL

    def __init__(self, context: SimulationContext, rng: RandomSource, directory: AuthorityDirectory) -> None:
        super().__init__(context, rng, directory)
        self.keys: KeyPair = curve_math.keygen(context.curve, rng)
        self.episodes: List[Episode] = []

    @property
    def enrollment_pub(self) -> Point:
        return self.keys.pub

    def open_episode(self, rng: Optional[RandomSource] = None) -> Episode:
        """Draw a fresh expansion value t, redrawing while t + h is zero."""
        rng = rng or self.rng
        for _ in range(_MAX_T_DRAWS):
            t = ExpansionValue(curve_math.random_scalar(self.curve, rng))
            try:
                z, Z = hospital_expand(t, self.keys, self.curve)
            except DegenerateKey:
                LOGGER.debug("Expansion value cancels the hospital key; redrawing")
                continue
            episode = Episode(t=t, z=z, Z=Z)
            self.episodes.append(episode)
            return episode
        raise RngFailure(f"No usable expansion value after {_MAX_T_DRAWS} draws")

    def receive_reading(self) -> bytes:
        envelope = self.bus.receive(self.role, MessageKind.READING)
        msg = ReadingMessage.decode(envelope.payload, self.curve)
        if not self.episodes:
            raise MacMismatch("Hospital has no open episode to decrypt with", step=HOSPITAL_DECRYPT)
        failure: Optional[MacMismatch] = None
        for episode in reversed(self.episodes):
            try:
                return hospital_receive(self, msg, episode.z, self.directory.root)
            except MacMismatch as err:
                failure = err
        raise failure


# System assembly
# #########################################################


@dataclass
class PkiSystem:
    context: SimulationContext
    rng: RandomSource
    rca: RootAuthority
    eca: EnrollmentAuthority
    pca: PseudonymAuthority
    ra: RegistrationAuthority
    _spawned: int = 0

    @property
    def curve(self) -> CurveParams:
        return self.context.curve

    @property
    def trusted_root(self) -> Certificate:
        return self.rca.cert

    @property
    def directory(self) -> AuthorityDirectory:
        return AuthorityDirectory(root=self.rca.cert, eca=self.eca.cert, pca=self.pca.cert, ra=self.ra.cert)

    def _child_rng(self, label: str) -> RandomSource:
        self._spawned += 1
        return self.rng.fork(f"{label}-{self._spawned}")

    def new_device(self, rng: Optional[RandomSource] = None) -> Device:
        return Device(self.context, rng or self._child_rng("device"), self.directory)

    def new_hospital(self, rng: Optional[RandomSource] = None) -> Hospital:
        return Hospital(self.context, rng or self._child_rng("hospital"), self.directory)


def bootstrap(
    curve: CurveParams,
    *,
    rng: Optional[RandomSource] = None,
    policy: Optional[PkiPolicy] = None,
    bus: Optional[Bus] = None,
    clock: Optional[LogicalClock] = None,
) -> PkiSystem:
    """Create the root and the three subordinate authorities on ``curve``."""
    rng = rng or SystemRandomSource()
    policy = policy or PkiPolicy()
    context = SimulationContext(
        curve=curve,
        bus=bus or Bus(curve),
        clock=clock or LogicalClock(policy.start_time),
        policy=policy,
    )
    rca = RootAuthority(context, rng.fork("rca"))
    eca = EnrollmentAuthority(context, rng.fork("eca"))
    pca = PseudonymAuthority(context, rng.fork("pca"))
    ra = RegistrationAuthority(context, rng.fork("ra"))
    for authority in (eca, pca, ra):
        rca.certify(authority)
    system = PkiSystem(context=context, rng=rng, rca=rca, eca=eca, pca=pca, ra=ra)
    directory = system.directory
    for authority in (rca, eca, pca, ra):
        authority.directory = directory
        chain = directory.chain_for(authority.cert)
        verdict = certs.verify_chain(chain, directory.root, context.clock.now)
        if not verdict:
            raise BadChain(f"{authority.role.value} certificate does not verify: {verdict.detail}", verdict.reason)
    LOGGER.info("Bootstrapped PKI on %s", curve.name)
    return system


# Flow operations
# #########################################################


def enroll_device(eca: EnrollmentAuthority, device_pub: Point, kind: SubjectKind) -> Certificate:
    """Enroll an end entity's public key with the ECA over the bus."""
    kind = SubjectKind(kind)
    requester = Role.HOSPITAL if kind is SubjectKind.HOSPITAL else Role.DEVICE
    eca.bus.send(requester, Role.ECA, MessageKind.ENROLL_REQUEST, EnrollRequest(kind, device_pub).encode(eca.curve))
    eca.handle_enrollment()
    envelope = eca.bus.receive(requester, MessageKind.ENROLL_RESPONSE)
    return Certificate.decode(envelope.payload)


def request_pseudonyms(
    device: Device,
    ra: RegistrationAuthority,
    pca: PseudonymAuthority,
    count: int,
) -> List[Tuple[Certificate, Scalar]]:
    device.send_pseudonym_request(count)
    ra.process_pseudonym_request()
    pca.process_cocoon_request()
    ra.relay_butterfly_batch()
    credentials = device.accept_pseudonym_batch()
    return [(credential.cert, credential.priv) for credential in credentials]


def negotiate_t(hospital: Hospital, device: Device, rng: Optional[RandomSource] = None) -> ExpansionValue:
    episode = hospital.open_episode(rng)
    hospital.bus.send(
        Role.HOSPITAL,
        Role.DEVICE,
        MessageKind.EXPANSION_VALUE,
        episode.t.encode(hospital.curve),
        out_of_band=True,
    )
    device.accept_expansion_value()
    return episode.t


def _t_value(t: Union[ExpansionValue, int], curve: CurveParams) -> Scalar:
    value = t.t if isinstance(t, ExpansionValue) else int(t)
    if not 1 <= value < curve.n:
        raise ValueError(f"Expansion value must lie in [1, n) on {curve.name}")
    return value


def hospital_expand(
    t: Union[ExpansionValue, int],
    hospital_pair: Union[KeyPair, Tuple[Scalar, Point]],
    curve: CurveParams,
) -> Tuple[Scalar, Point]:
    h, H = (hospital_pair.priv, hospital_pair.pub) if isinstance(hospital_pair, KeyPair) else hospital_pair
    t_value = _t_value(t, curve)
    z = (t_value + h) % curve.n
    if z == 0:
        raise DegenerateKey("Expanded hospital key is zero")
    Z = curve_math.point_add(curve_math.base_mul(t_value, curve), H, curve)
    if curve_math.base_mul(z, curve) != Z:
        raise KeyMismatch("Expanded hospital private key does not match the expanded public key")
    return z, Z


def device_expand_hospital_pub(t: Union[ExpansionValue, int], H: Point, curve: CurveParams) -> Point:
    if H.is_infinity or not curve.contains(H):
        raise OffCurveInput(f"Hospital key {H!r} is not a usable point on {curve.name}")
    Z = curve_math.point_add(curve_math.base_mul(_t_value(t, curve), curve), H, curve)
    if Z.is_infinity:
        raise DegenerateKey("Expanded hospital key is the point at infinity")
    return Z


PseudonymPair = Union[PseudonymCredential, Tuple[Scalar, Point, Certificate]]


def send_reading(device: Device, reading: bytes, pseudonym_pair: PseudonymPair, Z: Point) -> ReadingMessage:
    """Encrypt ``reading`` to Z, sign the sealed bytes with s and send it to the hospital."""
    if isinstance(pseudonym_pair, PseudonymCredential):
        s, S, cert = pseudonym_pair.priv, pseudonym_pair.pub, pseudonym_pair.cert
    else:
        s, S, cert = pseudonym_pair
    curve = device.curve
    if Z.is_infinity or not curve.contains(Z):
        raise OffCurveInput(f"Hospital encryption key {Z!r} is not a usable point on {curve.name}")
    sealed = primitives.ecies_encrypt(s, Z, reading, curve, split_length=device.policy.split_length, sender_pub=S)
    signature = primitives.ecdsa_sign(s, sealed.encode(), curve, device.rng)
    msg = ReadingMessage(pseudonym_cert=cert, sealed=sealed, signature=signature)
    device.bus.send(Role.DEVICE, Role.HOSPITAL, MessageKind.READING, msg.encode(curve))
    return msg


def hospital_receive(hospital: Hospital, msg: ReadingMessage, z: Scalar, trusted_root: Certificate) -> bytes:
    curve = hospital.curve
    cert = msg.pseudonym_cert
    chain = hospital.directory.chain_for(cert)
    verdict = certs.verify_chain(chain, trusted_root, hospital.now)
    if not verdict or cert.subject_kind is not SubjectKind.PSEUDONYM:
        LOGGER.warning("Rejecting reading: pseudonym chain %s", verdict.reason.value if verdict.reason else "not a pseudonym")
        raise BadChain(
            f"Pseudonym certificate rejected: {verdict.detail or 'not a pseudonym certificate'}",
            verdict.reason,
            step=HOSPITAL_VERIFY_CHAIN,
        )
    hospital._checkpoint(HOSPITAL_VERIFY_CHAIN)

    if not primitives.ecdsa_verify(cert.subject_pub, msg.sealed.encode(), msg.signature, curve):
        LOGGER.warning("Rejecting reading: signature does not verify")
        raise BadSignature("Reading signature does not verify under the pseudonym key", step=HOSPITAL_VERIFY_SIGNATURE)
    hospital._checkpoint(HOSPITAL_VERIFY_SIGNATURE)

    try:
        reading = primitives.ecies_decrypt(
            z, cert.subject_pub, msg.sealed, curve, split_length=hospital.policy.split_length
        )
    except PkiError as err:
        raise err.with_context(step=HOSPITAL_DECRYPT)
    hospital._checkpoint(HOSPITAL_DECRYPT)
    return reading
