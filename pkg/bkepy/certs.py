from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from . import curve_math, primitives
from .curve_math import CurveParams, CurveRegistry, Point, Scalar
from .errors import InvalidValidity, MalformedEncoding, OffCurveInput, UnauthorizedIssuer
from .primitives import Signature
from .rng import RandomSource, draw_bytes
from .wire import ByteReader, ByteWriter

LOGGER = logging.getLogger(__name__)

CERT_MAGIC = b"BKC1"
SERIAL_SIZE = 16
SUBJECT_ID_SIZE = 16


class SubjectKind(str, Enum):
    RCA = "rca"
    ECA = "eca"
    PCA = "pca"
    RA = "ra"
    DEVICE = "device"
    HOSPITAL = "hospital"
    PSEUDONYM = "pseudonym"


_KIND_CODES: Dict[SubjectKind, int] = {kind: code for code, kind in enumerate(SubjectKind, start=1)}
_KINDS_BY_CODE: Dict[int, SubjectKind] = {code: kind for kind, code in _KIND_CODES.items()}

ISSUANCE_POLICY: Dict[SubjectKind, FrozenSet[SubjectKind]] = {
    SubjectKind.RCA: frozenset({SubjectKind.ECA, SubjectKind.PCA, SubjectKind.RA}),
    SubjectKind.ECA: frozenset({SubjectKind.DEVICE, SubjectKind.HOSPITAL}),
    SubjectKind.PCA: frozenset({SubjectKind.PSEUDONYM}),
}


def may_issue(issuer_kind: SubjectKind, subject_kind: SubjectKind) -> bool:
    return subject_kind in ISSUANCE_POLICY.get(issuer_kind, frozenset())


@dataclass(frozen=True)
class Validity:
    not_before: int
    not_after: int

    def __post_init__(self) -> None:
        if self.not_before >= self.not_after:
            raise InvalidValidity(
                f"Validity window [{self.not_before}, {self.not_after}] is empty"
            )

    def contains(self, now: int) -> bool:
        return self.not_before <= now <= self.not_after


def as_validity(value: "Validity | Tuple[int, int]") -> Validity:
    if isinstance(value, Validity):
        return value
    not_before, not_after = value
    return Validity(int(not_before), int(not_after))


@dataclass(frozen=True)
class Certificate:
    serial: bytes
    subject_kind: SubjectKind
    subject_id: bytes
    subject_pub: Point
    issuer_serial: bytes
    validity: Validity
    curve_name: str
    signature: Signature

    @property
    def curve(self) -> CurveParams:
        return CurveRegistry.get(self.curve_name)

    @property
    def is_self_signed(self) -> bool:
        return self.serial == self.issuer_serial

    def tbs_bytes(self) -> bytes:
        return _tbs_bytes(
            self.serial,
            self.subject_kind,
            self.subject_id,
            self.subject_pub,
            self.issuer_serial,
            self.validity,
            self.curve,
        )

    def encode(self) -> bytes:
        return ByteWriter().raw(self.tbs_bytes()).blob16(self.signature.encode(self.curve)).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        reader = ByteReader(data, what="certificate")
        cert = cls.decode_from(reader)
        reader.expect_end()
        return cert

    @classmethod
    def decode_from(cls, reader: ByteReader) -> "Certificate":
        reader.expect(CERT_MAGIC)
        name_offset = reader.pos
        curve_name = reader.blob16().decode("ascii", errors="replace")
        try:
            curve = CurveRegistry.get(curve_name)
        except KeyError as err:
            raise MalformedEncoding(f"Unknown curve '{curve_name}' in certificate", name_offset) from err
        kind_offset = reader.pos
        kind = _KINDS_BY_CODE.get(reader.u8())
        if kind is None:
            raise MalformedEncoding("Unknown subject kind in certificate", kind_offset)
        serial = reader.blob16()
        subject_id = reader.blob16()
        pub_offset = reader.pos
        try:
            subject_pub = curve_math.decode_point(reader.blob16(), curve)
        except OffCurveInput as err:
            raise MalformedEncoding(f"Certificate subject key is not on {curve.name}", pub_offset) from err
        issuer_serial = reader.blob16()
        validity_offset = reader.pos
        try:
            validity = Validity(reader.u64(), reader.u64())
        except InvalidValidity as err:
            raise MalformedEncoding(str(err), validity_offset) from err
        signature = Signature.decode(reader.blob16(), curve)
        return cls(
            serial=serial,
            subject_kind=kind,
            subject_id=subject_id,
            subject_pub=subject_pub,
            issuer_serial=issuer_serial,
            validity=validity,
            curve_name=curve.name,
            signature=signature,
        )


CertChain = Tuple[Certificate, ...]


def _tbs_bytes(
    serial: bytes,
    kind: SubjectKind,
    subject_id: bytes,
    subject_pub: Point,
    issuer_serial: bytes,
    validity: Validity,
    curve: CurveParams,
) -> bytes:
    return (
        ByteWriter()
        .raw(CERT_MAGIC)
        .blob16(curve.name.encode("ascii"))
        .u8(_KIND_CODES[kind])
        .blob16(serial)
        .blob16(subject_id)
        .blob16(curve_math.encode_point(subject_pub, curve))
        .blob16(issuer_serial)
        .u64(validity.not_before)
        .u64(validity.not_after)
        .getvalue()
    )


def _check_subject_key(subject_pub: Point, curve: CurveParams) -> None:
    if subject_pub.is_infinity or not curve.contains(subject_pub):
        raise OffCurveInput(f"Subject key {subject_pub!r} is not a valid point on {curve.name}")


def _sign(
    signer_priv: Scalar,
    serial: bytes,
    kind: SubjectKind,
    subject_id: bytes,
    subject_pub: Point,
    issuer_serial: bytes,
    validity: Validity,
    curve: CurveParams,
    rng: RandomSource,
) -> Certificate:
    tbs = _tbs_bytes(serial, kind, subject_id, subject_pub, issuer_serial, validity, curve)
    return Certificate(
        serial=serial,
        subject_kind=kind,
        subject_id=subject_id,
        subject_pub=subject_pub,
        issuer_serial=issuer_serial,
        validity=validity,
        curve_name=curve.name,
        signature=primitives.ecdsa_sign(signer_priv, tbs, curve, rng),
    )


def issue_root(
    root_priv: Scalar,
    root_pub: Point,
    subject_id: bytes,
    validity: Validity,
    curve: CurveParams,
    rng: RandomSource,
) -> Certificate:
    validity = as_validity(validity)
    _check_subject_key(root_pub, curve)
    serial = draw_bytes(rng, SERIAL_SIZE)
    cert = _sign(root_priv, serial, SubjectKind.RCA, subject_id, root_pub, serial, validity, curve, rng)
    LOGGER.debug("Issued self-signed root %s on %s", serial.hex(), curve.name)
    return cert


def issue(
    issuer_cert: Certificate,
    issuer_priv: Scalar,
    subject_pub: Point,
    subject_kind: SubjectKind,
    subject_id: bytes,
    validity: Validity,
    rng: RandomSource,
) -> Certificate:
    subject_kind = SubjectKind(subject_kind)
    validity = as_validity(validity)
    if not may_issue(issuer_cert.subject_kind, subject_kind):
        raise UnauthorizedIssuer(
            f"A {issuer_cert.subject_kind.value} may not issue {subject_kind.value} certificates"
        )
    curve = issuer_cert.curve
    _check_subject_key(subject_pub, curve)
    serial = draw_bytes(rng, SERIAL_SIZE)
    cert = _sign(
        issuer_priv,
        serial,
        subject_kind,
        subject_id,
        subject_pub,
        issuer_cert.serial,
        validity,
        curve,
        rng,
    )
    LOGGER.debug(
        "%s %s issued %s certificate %s",
        issuer_cert.subject_kind.value,
        issuer_cert.serial.hex(),
        subject_kind.value,
        serial.hex(),
    )
    return cert


# Chain verification
# #########################################################


class ChainRejection(str, Enum):
    EMPTY = "empty"
    BAD_SIGNATURE = "bad-signature"
    EXPIRED = "expired"
    NOT_YET_VALID = "not-yet-valid"
    POLICY = "policy"
    ISSUER_MISMATCH = "issuer-mismatch"
    UNTRUSTED_ROOT = "untrusted-root"


@dataclass(frozen=True)
class ChainVerdict:
    accepted: bool
    reason: Optional[ChainRejection] = None
    position: Optional[int] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted

    @classmethod
    def reject(cls, reason: ChainRejection, position: Optional[int], detail: str) -> "ChainVerdict":
        return cls(accepted=False, reason=reason, position=position, detail=detail)


ACCEPTED = ChainVerdict(accepted=True)


def verify_chain(chain: Sequence[Certificate], trusted_root: Certificate, now: int) -> ChainVerdict:
    """Check a leaf-to-root chain against ``trusted_root`` at logical time ``now``."""
    if not chain:
        return ChainVerdict.reject(ChainRejection.EMPTY, None, "chain has no certificates")
    last = len(chain) - 1
    if chain[last].encode() != trusted_root.encode():
        return ChainVerdict.reject(ChainRejection.UNTRUSTED_ROOT, last, "chain does not end at the trusted root")
    for position, cert in enumerate(chain):
        issuer = chain[position + 1] if position < last else cert
        if cert.issuer_serial != issuer.serial:
            return ChainVerdict.reject(
                ChainRejection.ISSUER_MISMATCH,
                position,
                f"certificate {cert.serial.hex()} names issuer {cert.issuer_serial.hex()}",
            )
        if position == last:
            allowed = cert.subject_kind is SubjectKind.RCA
        else:
            allowed = may_issue(issuer.subject_kind, cert.subject_kind)
        if not allowed:
            return ChainVerdict.reject(
                ChainRejection.POLICY,
                position,
                f"{issuer.subject_kind.value} cannot vouch for {cert.subject_kind.value}",
            )
        if not primitives.ecdsa_verify(issuer.subject_pub, cert.tbs_bytes(), cert.signature, issuer.curve):
            return ChainVerdict.reject(
                ChainRejection.BAD_SIGNATURE, position, f"signature on {cert.serial.hex()} does not verify"
            )
        if now < cert.validity.not_before:
            return ChainVerdict.reject(ChainRejection.NOT_YET_VALID, position, f"{cert.serial.hex()} not valid until {cert.validity.not_before}")
        if now > cert.validity.not_after:
            return ChainVerdict.reject(ChainRejection.EXPIRED, position, f"{cert.serial.hex()} expired at {cert.validity.not_after}")
    return ACCEPTED


# Files and text dumps
# #########################################################


def encode(cert: Certificate) -> bytes:
    return cert.encode()


def decode(data: bytes) -> Certificate:
    return Certificate.decode(data)


def encode_chain(chain: Sequence[Certificate]) -> bytes:
    writer = ByteWriter()
    for cert in chain:
        writer.blob32(cert.encode())
    return writer.getvalue()


def decode_chain(data: bytes) -> CertChain:
    reader = ByteReader(data, what="certificate chain")
    certs: List[Certificate] = []
    while reader.remaining:
        certs.append(Certificate.decode(reader.blob32()))
    return tuple(certs)


def dump_text(cert: Certificate) -> str:
    curve = cert.curve
    lines = [
        "Certificate",
        f"  serial:        {cert.serial.hex()}",
        f"  subject kind:  {cert.subject_kind.value}",
        f"  subject id:    {cert.subject_id.hex()}",
        f"  subject key:   {curve_math.encode_point(cert.subject_pub, curve).hex()}",
        f"  issuer serial: {cert.issuer_serial.hex()}" + ("  (self-signed)" if cert.is_self_signed else ""),
        f"  curve:         {curve.name}",
        f"  not before:    {cert.validity.not_before}",
        f"  not after:     {cert.validity.not_after}",
        f"  signature r:   {cert.signature.r:x}",
        f"  signature s:   {cert.signature.s:x}",
    ]
    return "\n".join(lines) + "\n"
