from __future__ import annotations

import hmac
import logging
from dataclasses import dataclass, field
from typing import Optional

from Crypto.Cipher import AES
from Crypto.Hash import HMAC, SHA256, SHA384, SHA512

from . import curve_math
from .curve_math import CurveParams, Point, Scalar
from .errors import (
    DegenerateKey,
    DegenerateNonce,
    DegenerateSharedPoint,
    InsufficientMaterial,
    MacMismatch,
    MalformedEncoding,
    OffCurveInput,
    PkiError,
    RngFailure,
)
from .rng import RandomSource, draw_bytes
from .wire import ByteReader, ByteWriter

LOGGER = logging.getLogger(__name__)

DEFAULT_SPLIT_LENGTH = 16
CIPHER_KEY_SIZE = 16
TAG_SIZE = 32
EXPANSION_KEY_SIZE = 16
# Indices travel as 4-byte big-endian fields.
INDEX_LIMIT = 1 << 32
_MAX_NONCE_DRAWS = 64
_KDF_LABEL = b"bkepy/ecies-kdf/v1\x00"


@dataclass(frozen=True)
class Signature:
    r: Scalar
    s: Scalar

    def encode(self, curve: CurveParams) -> bytes:
        return curve_math.encode_scalar(self.r, curve) + curve_math.encode_scalar(self.s, curve)

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams) -> "Signature":
        width = curve.order_size
        if len(data) != 2 * width:
            raise MalformedEncoding(
                f"Expected a {2 * width}-byte signature for {curve.name}, got {len(data)} bytes", 0
            )
        return cls(
            r=int.from_bytes(data[:width], "big"),
            s=int.from_bytes(data[width:], "big"),
        )


@dataclass(frozen=True)
class DerivedKeys:
    mac_key: bytes = field(repr=False)
    enc_key: bytes = field(repr=False)
    split_index: int = DEFAULT_SPLIT_LENGTH


@dataclass(frozen=True)
class SealedMessage:
    ciphertext: bytes
    tag: bytes
    # Identifies the (sender, recipient) key pair in memory; not part of the wire form.
    context: bytes = field(default=b"", compare=False)

    def encode(self) -> bytes:
        return ByteWriter().blob32(self.ciphertext).raw(self.tag).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "SealedMessage":
        reader = ByteReader(data, what="sealed message")
        ciphertext = reader.blob32()
        tag = reader.take(TAG_SIZE)
        reader.expect_end()
        return cls(ciphertext=ciphertext, tag=tag)


@dataclass(frozen=True)
class ExpansionKey:
    key: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.key) != EXPANSION_KEY_SIZE:
            raise ValueError(f"Expansion keys are {EXPANSION_KEY_SIZE} bytes, got {len(self.key)}")


def new_expansion_key(rng: RandomSource) -> ExpansionKey:
    return ExpansionKey(draw_bytes(rng, EXPANSION_KEY_SIZE))


# Digests
# #########################################################


def digest_module(curve: CurveParams):
    strength = curve.strength_bits or 0
    if strength >= 256:
        return SHA512
    if strength >= 192:
        return SHA384
    return SHA256


def message_digest(message: bytes, curve: CurveParams) -> int:
    """Strength-matched hash, truncated to the leftmost order-length bits."""
    digest = digest_module(curve).new(message).digest()
    value = int.from_bytes(digest, "big")
    excess = len(digest) * 8 - curve.order_bits
    if excess > 0:
        value >>= excess
    return value % curve.n


# ECDSA
# #########################################################


def ecdsa_sign_with_nonce(priv: Scalar, e: int, k: Scalar, curve: CurveParams) -> Signature:
    n = curve.n
    K = curve_math.base_mul(k, curve)
    if K.is_infinity:
        raise DegenerateNonce("Nonce is a multiple of the group order")
    r = K.x % n
    if r == 0:
        raise DegenerateNonce("Nonce gives r = 0")
    s = (e + priv * r) * pow(k, -1, n) % n
    if s == 0:
        raise DegenerateNonce("Nonce gives s = 0")
    return Signature(r=r, s=s)


def ecdsa_sign_digest(priv: Scalar, e: int, curve: CurveParams, rng: RandomSource) -> Signature:
    if not 1 <= priv < curve.n:
        raise DegenerateKey(f"Signing key is outside [1, n) for {curve.name}")
    for _ in range(_MAX_NONCE_DRAWS):
        k = curve_math.random_scalar(curve, rng)
        try:
            return ecdsa_sign_with_nonce(priv, e, k, curve)
        except DegenerateNonce:
            LOGGER.debug("Discarding degenerate ECDSA nonce on %s", curve.name)
    raise RngFailure(f"No usable ECDSA nonce after {_MAX_NONCE_DRAWS} draws")


def ecdsa_sign(priv: Scalar, message: bytes, curve: CurveParams, rng: RandomSource) -> Signature:
    return ecdsa_sign_digest(priv, message_digest(message, curve), curve, rng)


def ecdsa_verify_digest(pub: Point, e: int, sig: Signature, curve: CurveParams) -> bool:
    n = curve.n
    if not (1 <= sig.r < n and 1 <= sig.s < n):
        return False
    if pub.is_infinity or not curve.contains(pub):
        return False
    try:
        w = pow(sig.s, -1, n)
        u = e * w % n
        v = sig.r * w % n
        D = curve_math.point_add(
            curve_math.base_mul(u, curve),
            curve_math.scalar_mul(v, pub, curve),
            curve,
        )
    except PkiError:
        return False
    if D.is_infinity:
        return False
    return D.x % n == sig.r


def ecdsa_verify(pub: Point, message: bytes, sig: Signature, curve: CurveParams) -> bool:
    return ecdsa_verify_digest(pub, message_digest(message, curve), sig, curve)


# ECDH / ECIES
# #########################################################


def ecdh_shared(priv: Scalar, peer_pub: Point, curve: CurveParams) -> int:
    if peer_pub.is_infinity:
        raise OffCurveInput("Peer public key is the point at infinity")
    shared = curve_math.scalar_mul(priv, peer_pub, curve)
    if shared.is_infinity:
        raise DegenerateSharedPoint(f"Shared point on {curve.name} is the point at infinity")
    return shared.x


def kdf_split(
    x_M: int,
    l: int = DEFAULT_SPLIT_LENGTH,
    *,
    curve: CurveParams,
    context: bytes = b"",
) -> DerivedKeys:
    """Derive the MAC key (first l bytes) and cipher key (next 16 bytes).

    The shared x-coordinate is run through HMAC in counter mode, keyed by the
    label and the context, before it is split.
    """
    encoded = curve_math.encode_field_element(x_M, curve)
    if l < 1 or len(encoded) <= l:
        raise InsufficientMaterial(
            f"A {len(encoded)}-byte shared secret cannot be split at l={l} on {curve.name}"
        )
    hash_module = digest_module(curve)
    needed = l + CIPHER_KEY_SIZE
    stream = b""
    counter = 1
    while len(stream) < needed:
        mac = HMAC.new(_KDF_LABEL + context, digestmod=hash_module)
        mac.update(counter.to_bytes(4, "big"))
        mac.update(encoded)
        stream += mac.digest()
        counter += 1
    return DerivedKeys(mac_key=stream[:l], enc_key=stream[l:needed], split_index=l)


def ecies_context(sender_pub: Point, recipient_pub: Point, curve: CurveParams) -> bytes:
    return curve_math.encode_point(sender_pub, curve) + curve_math.encode_point(recipient_pub, curve)


def _pair_id(context: bytes) -> bytes:
    return SHA256.new(context).digest()[:8]


def _mac(keys: DerivedKeys, ciphertext: bytes, curve: CurveParams) -> bytes:
    return HMAC.new(keys.mac_key, ciphertext, digestmod=digest_module(curve)).digest()[:TAG_SIZE]


def _keystream_cipher(keys: DerivedKeys):
    # Keys are fresh per message, so a fixed zero counter block is safe here.
    return AES.new(keys.enc_key, AES.MODE_CTR, nonce=b"", initial_value=0)


def ecies_encrypt(
    sender_priv: Scalar,
    recipient_pub: Point,
    plaintext: bytes,
    curve: CurveParams,
    *,
    split_length: int = DEFAULT_SPLIT_LENGTH,
    sender_pub: Optional[Point] = None,
) -> SealedMessage:
    if sender_pub is None:
        sender_pub = curve_math.base_mul(sender_priv, curve)
    x_M = ecdh_shared(sender_priv, recipient_pub, curve)
    context = ecies_context(sender_pub, recipient_pub, curve)
    keys = kdf_split(x_M, split_length, curve=curve, context=context)
    ciphertext = _keystream_cipher(keys).encrypt(plaintext)
    return SealedMessage(ciphertext=ciphertext, tag=_mac(keys, ciphertext, curve), context=_pair_id(context))


def ecies_decrypt(
    recipient_priv: Scalar,
    sender_pub: Point,
    sealed: SealedMessage,
    curve: CurveParams,
    *,
    split_length: int = DEFAULT_SPLIT_LENGTH,
    recipient_pub: Optional[Point] = None,
) -> bytes:
    if recipient_pub is None:
        recipient_pub = curve_math.base_mul(recipient_priv, curve)
    x_M = ecdh_shared(recipient_priv, sender_pub, curve)
    context = ecies_context(sender_pub, recipient_pub, curve)
    if sealed.context and sealed.context != _pair_id(context):
        raise MacMismatch("Sealed message was produced for a different key pair")
    keys = kdf_split(x_M, split_length, curve=curve, context=context)
    if not hmac.compare_digest(_mac(keys, sealed.ciphertext, curve), sealed.tag):
        raise MacMismatch("ECIES tag does not verify")
    return _keystream_cipher(keys).decrypt(sealed.ciphertext)


# Expansion function
# #########################################################


def expand_f(key: ExpansionKey, i: int, n: int) -> Scalar:
    """AES-ECB over blocks (i || j), j = 0, 1, ..., reduced modulo n.

    ``i`` and ``j`` each occupy 8 big-endian bytes of the 16-byte block; the
    stream is extended to the order length plus 8 bytes before reduction.
    """
    if not 0 <= i < INDEX_LIMIT:
        raise ValueError(f"Expansion index {i} is outside [0, 2^32)")
    needed = (n.bit_length() + 7) // 8 + 8
    cipher = AES.new(key.key, AES.MODE_ECB)
    prefix = i.to_bytes(8, "big")
    blocks = b"".join(prefix + j.to_bytes(8, "big") for j in range(-(-needed // 16)))
    stream = cipher.encrypt(blocks)
    return int.from_bytes(stream[:needed], "big") % n
