"""Butterfly key expansion.

Device generates caterpillar material; the registration authority turns the
public share into cocoon public keys; the pseudonym authority adds a fresh
key per cocoon to form butterfly public keys and wraps the fresh scalar to
the cocoon encryption key; the device rebuilds cocoon and butterfly private
keys.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

from . import curve_math, primitives
from .curve_math import CurveParams, KeyPair, Point, Scalar
from .errors import (
    BadPcaSignature,
    DegenerateKey,
    KeyMismatch,
    MalformedEncoding,
    PkiError,
)
from .primitives import ExpansionKey, SealedMessage, Signature
from .rng import RandomSource
from .wire import ByteReader, ByteWriter

LOGGER = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 20
_MAX_BUTTERFLY_DRAWS = 16


@dataclass(frozen=True)
class CaterpillarPublic:
    """What the device hands to the registration authority: (ck, ek, A, P)."""

    ck: ExpansionKey
    ek: ExpansionKey
    A: Point
    P: Point

    def encode(self, curve: CurveParams) -> bytes:
        return (
            ByteWriter()
            .raw(self.ck.key)
            .raw(self.ek.key)
            .raw(curve_math.encode_point(self.A, curve))
            .raw(curve_math.encode_point(self.P, curve))
            .getvalue()
        )

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "CaterpillarPublic":
        reader = ByteReader(data, what="caterpillar public share")
        ck = ExpansionKey(reader.take(primitives.EXPANSION_KEY_SIZE))
        ek = ExpansionKey(reader.take(primitives.EXPANSION_KEY_SIZE))
        A = curve_math.decode_point(reader.take(curve.point_size), curve)
        P = curve_math.decode_point(reader.take(curve.point_size), curve)
        reader.expect_end()
        return cls(ck=ck, ek=ek, A=A, P=P)


@dataclass(frozen=True)
class CaterpillarMaterial:
    ck: ExpansionKey
    ek: ExpansionKey
    sign_pair: KeyPair = field(repr=False)
    enc_pair: KeyPair = field(repr=False)

    def public(self) -> CaterpillarPublic:
        return CaterpillarPublic(ck=self.ck, ek=self.ek, A=self.sign_pair.pub, P=self.enc_pair.pub)


@dataclass(frozen=True)
class CocoonPublic:
    index: int
    B: Point
    Q: Point

    def encode(self, curve: CurveParams) -> bytes:
        return (
            ByteWriter()
            .u32(self.index)
            .raw(curve_math.encode_point(self.B, curve))
            .raw(curve_math.encode_point(self.Q, curve))
            .getvalue()
        )

    @classmethod
    def decode_from(cls, reader: ByteReader, curve: CurveParams) -> "CocoonPublic":
        index = reader.u32()
        B = curve_math.decode_point(reader.take(curve.point_size), curve)
        Q = curve_math.decode_point(reader.take(curve.point_size), curve)
        if B.is_infinity or Q.is_infinity:
            raise MalformedEncoding(f"Cocoon {index} carries the point at infinity", reader.pos)
        return cls(index=index, B=B, Q=Q)

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "CocoonPublic":
        reader = ByteReader(data, what="cocoon public key")
        cocoon = cls.decode_from(reader, curve)
        reader.expect_end()
        return cocoon


@dataclass(frozen=True)
class ButterflyResponse:
    index: int
    butterfly_pub: Point
    wrapped_c: SealedMessage
    pca_signature: Signature

    def signed_payload(self, curve: CurveParams) -> bytes:
        return _signed_payload(self.index, self.butterfly_pub, self.wrapped_c, curve)

    def encode(self, curve: CurveParams) -> bytes:
        return (
            ByteWriter()
            .raw(self.signed_payload(curve))
            .raw(self.pca_signature.encode(curve))
            .getvalue()
        )

    @classmethod
    def decode_from(cls, reader: ByteReader, curve: CurveParams) -> "ButterflyResponse":
        index = reader.u32()
        butterfly_pub = curve_math.decode_point(reader.take(curve.point_size), curve)
        wrapped_c = SealedMessage.decode(reader.blob32())
        signature = Signature.decode(reader.take(2 * curve.order_size), curve)
        return cls(index=index, butterfly_pub=butterfly_pub, wrapped_c=wrapped_c, pca_signature=signature)

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "ButterflyResponse":
        reader = ByteReader(data, what="butterfly response")
        response = cls.decode_from(reader, curve)
        reader.expect_end()
        return response


@dataclass(frozen=True)
class CocoonPrivate:
    index: int
    b: Scalar = field(repr=False)
    q: Scalar = field(repr=False)


def _signed_payload(index: int, butterfly_pub: Point, wrapped_c: SealedMessage, curve: CurveParams) -> bytes:
    return (
        ByteWriter()
        .u32(index)
        .raw(curve_math.encode_point(butterfly_pub, curve))
        .blob32(wrapped_c.encode())
        .getvalue()
    )


def gen_caterpillar(curve: CurveParams, rng: RandomSource) -> CaterpillarMaterial:
    ck = primitives.new_expansion_key(rng)
    ek = primitives.new_expansion_key(rng)
    while ek == ck:
        ek = primitives.new_expansion_key(rng)
    sign_pair = curve_math.keygen(curve, rng)
    enc_pair = curve_math.keygen(curve, rng)
    return CaterpillarMaterial(ck=ck, ek=ek, sign_pair=sign_pair, enc_pair=enc_pair)


def _check_index(i: int) -> None:
    if not 0 <= i < primitives.INDEX_LIMIT:
        raise MalformedEncoding(f"Cocoon index {i} does not fit the 4-byte index field", index=i)


def cocoon_public(material_pub: CaterpillarPublic, i: int, curve: CurveParams) -> CocoonPublic:
    _check_index(i)
    B =curve_math.point_add(
        material_pub.A,
        curve_math.base_mul(primitives.expand_f(material_pub.ck, i, curve.n), curve),
        curve,
    )
    Q = curve_math.point_add(
        material_pub.P,
        curve_math.base_mul(primitives.expand_f(material_pub.ek, i, curve.n), curve),
        curve,
    )
    if B.is_infinity or Q.is_infinity:
        raise DegenerateKey(f"Cocoon key {i} is the point at infinity", index=i)
    return CocoonPublic(index=i, B=B, Q=Q)


def butterfly_public(
    cocoon: CocoonPublic,
    pca_keys: KeyPair,
    curve: CurveParams,
    rng: RandomSource,
    *,
    split_length: int = primitives.DEFAULT_SPLIT_LENGTH,
) -> ButterflyResponse:
    for _ in range(_MAX_BUTTERFLY_DRAWS):
        c_pair = curve_math.keygen(curve, rng)
        butterfly_pub = curve_math.point_add(cocoon.B, c_pair.pub, curve)
        if not butterfly_pub.is_infinity:
            break
    else:
        raise DegenerateKey(f"Could not draw a usable butterfly key for cocoon {cocoon.index}", index=cocoon.index)
    wrapped_c = primitives.ecies_encrypt(
        pca_keys.priv,
        cocoon.Q,
        curve_math.encode_scalar(c_pair.priv, curve),
        curve,
        split_length=split_length,
        sender_pub=pca_keys.pub,
    )
    payload = _signed_payload(cocoon.index, butterfly_pub, wrapped_c, curve)
    signature = primitives.ecdsa_sign(pca_keys.priv, payload, curve, rng)
    return ButterflyResponse(
        index=cocoon.index,
        butterfly_pub=butterfly_pub,
        wrapped_c=wrapped_c,
        pca_signature=signature,
    )


def cocoon_private(material: CaterpillarMaterial, i: int, curve: CurveParams) -> CocoonPrivate:
    _check_index(i)
    n = curve.n
    b = (material.sign_pair.priv + primitives.expand_f(material.ck, i, n)) % n
    q = (material.enc_pair.priv + primitives.expand_f(material.ek, i, n)) % n
    return CocoonPrivate(index=i, b=b, q=q)


def butterfly_private(
    cocoon_priv: CocoonPrivate,
    response: ButterflyResponse,
    pca_pub: Point,
    curve: CurveParams,
    *,
    split_length: int = primitives.DEFAULT_SPLIT_LENGTH,
) -> Scalar:
    if response.index != cocoon_priv.index:
        raise KeyMismatch(
            f"Response for index {response.index} cannot be opened with cocoon key {cocoon_priv.index}",
            index=response.index,
        )
    if not primitives.ecdsa_verify(pca_pub, response.signed_payload(curve), response.pca_signature, curve):
        raise BadPcaSignature(
            f"Pseudonym authority signature on response {response.index} does not verify",
            index=response.index,
        )
    try:
        c = curve_math.decode_scalar(
            primitives.ecies_decrypt(
                cocoon_priv.q,
                pca_pub,
                response.wrapped_c,
                curve,
                split_length=split_length,
            ),
            curve,
        )
    except MalformedEncoding as err:
        raise KeyMismatch(f"Unwrapped value for index {response.index} is not a scalar", index=response.index) from err
    except PkiError as err:
        raise err.with_context(index=response.index)
    if c == 0:
        raise KeyMismatch(f"Unwrapped scalar for index {response.index} is zero", index=response.index)
    butterfly_priv = (cocoon_priv.b + c) % curve.n
    if curve_math.base_mul(butterfly_priv, curve) != response.butterfly_pub:
        raise KeyMismatch(
            f"Reconstructed butterfly key for index {response.index} does not match the response",
            index=response.index,
        )
    return butterfly_priv


def expand_batch(
    material_pub: CaterpillarPublic,
    i_range: Tuple[int, int],
    curve: CurveParams,
    rng: RandomSource,
    pca_keys: KeyPair,
) -> List[Tuple[CocoonPublic, ButterflyResponse]]:
    start, count = i_range
    if count < 1:
        raise ValueError(f"Batch count must be at least 1, got {count}")
    results: List[Tuple[CocoonPublic, ButterflyResponse]] = []
    for i in range(start, start + count):
        try:
            cocoon = cocoon_public(material_pub, i, curve)
            results.append((cocoon, butterfly_public(cocoon, pca_keys, curve, rng)))
        except PkiError as err:
            raise err.with_context(index=i)
    LOGGER.debug("Expanded %d butterfly keys from index %d on %s", count, start, curve.name)
    return results
