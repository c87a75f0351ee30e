"""Prime-field short-Weierstrass arithmetic (y^2 = x^3 + alpha*x + beta mod p).

Public functions exchange affine ``Point`` values; scalar multiplication runs
in Jacobian coordinates internally and converts back once at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

from .errors import (
    DivisionByZero,
    MalformedEncoding,
    OffCurveInput,
    RngFailure,
    UnknownStrength,
)
from .rng import RandomSource, draw_bytes

LOGGER = logging.getLogger(__name__)

Scalar = int
SUPPORTED_STRENGTHS: Tuple[int, ...] = (80, 112, 128, 192, 256)
TOY_CURVE_NAME = "TOY-17"

_POINT_TAG_INFINITY = b"\x00"
_POINT_TAG_UNCOMPRESSED = b"\x04"
_MAX_SCALAR_DRAWS = 128


@dataclass(frozen=True)
class Point:
    x: Optional[int] = None
    y: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.x is None) != (self.y is None):
            raise ValueError("A point needs both coordinates or neither")

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __repr__(self) -> str:
        if self.is_infinity:
            return "Point(infinity)"
        return f"Point(x={self.x:#x}, y={self.y:#x})"


INFINITY = Point()


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    alpha: int
    beta: int
    gx: int
    gy: int
    n: int
    strength_bits: Optional[int] = None

    def __post_init__(self) -> None:
        if (4 * pow(self.alpha, 3, self.p) + 27 * pow(self.beta, 2, self.p)) % self.p == 0:
            raise OffCurveInput(f"Curve {self.name} is singular")
        if not self.contains(self.G):
            raise OffCurveInput(f"Generator of {self.name} does not satisfy the curve equation")

    @property
    def G(self) -> Point:
        return Point(self.gx, self.gy)

    @property
    def field_size(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def order_size(self) -> int:
        return (self.n.bit_length() + 7) // 8

    @property
    def order_bits(self) -> int:
        return self.n.bit_length()

    @property
    def point_size(self) -> int:
        return 1 + 2 * self.field_size

    def contains(self, point: Point) -> bool:
        if point.is_infinity:
            return True
        x, y = point.x, point.y
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - (x * x * x + self.alpha * x + self.beta)) % self.p == 0

    def __repr__(self) -> str:
        return f"<CurveParams {self.name}>"


@dataclass(frozen=True)
class KeyPair:
    priv: Scalar
    pub: Point


class CurveRegistry:
    _CURVES: Dict[str, CurveParams] = {}
    _ALIASES: Dict[str, str] = {}
    _BY_STRENGTH: Dict[int, str] = {}

    @classmethod
    def register(cls, curve: CurveParams, *, aliases: Iterable[str] = ()) -> None:
        cls._CURVES[curve.name] = curve
        cls._ALIASES[curve.name.lower()] = curve.name
        for alias in aliases:
            cls._ALIASES[alias.lower()] = curve.name
        if curve.strength_bits is not None:
            cls._BY_STRENGTH[curve.strength_bits] = curve.name

    @classmethod
    def get(cls, name: str) -> CurveParams:
        key = cls._ALIASES.get(name.lower())
        if key is None:
            raise KeyError(f"Unknown curve '{name}'")
        return cls._CURVES[key]

    @classmethod
    def for_strength(cls, strength_bits: int) -> CurveParams:
        name = cls._BY_STRENGTH.get(strength_bits)
        if name is None:
            raise UnknownStrength(
                f"No curve registered for security strength {strength_bits}; "
                f"expected one of {', '.join(str(s) for s in SUPPORTED_STRENGTHS)}"
            )
        return cls._CURVES[name]

    @classmethod
    def registered(cls) -> Tuple[CurveParams, ...]:
        return tuple(cls._CURVES[cls._BY_STRENGTH[s]] for s in sorted(cls._BY_STRENGTH))


def curve_for_strength(strength_bits: int) -> CurveParams:
    return CurveRegistry.for_strength(strength_bits)


def toy_curve() -> CurveParams:
    return CurveRegistry.get(TOY_CURVE_NAME)


# Affine group law
# #########################################################


def _require_on_curve(point: Point, curve: CurveParams, label: str = "point") -> None:
    if not curve.contains(point):
        raise OffCurveInput(f"{label} {point!r} is not on {curve.name}")


def point_neg(P: Point, curve: CurveParams) -> Point:
    _require_on_curve(P, curve)
    if P.is_infinity:
        return P
    return Point(P.x, (-P.y) % curve.p)


def point_add(P: Point, Q: Point, curve: CurveParams) -> Point:
    _require_on_curve(P, curve, "left operand")
    _require_on_curve(Q, curve, "right operand")
    return _affine_add(P, Q, curve)


def point_sub(P: Point, Q: Point, curve: CurveParams) -> Point:
    return point_add(P, point_neg(Q, curve), curve)


def _affine_add(P: Point, Q: Point, curve: CurveParams) -> Point:
    if P.is_infinity:
        return Q
    if Q.is_infinity:
        return P
    p = curve.p
    if P.x == Q.x:
        if (P.y + Q.y) % p == 0:
            return INFINITY
        slope = (3 * P.x * P.x + curve.alpha) * pow(2 * P.y, -1, p) % p
    else:
        slope = (Q.y - P.y) * pow(Q.x - P.x, -1, p) % p
    x3 = (slope * slope - P.x - Q.x) % p
    y3 = (slope * (P.x - x3) - P.y) % p
    return Point(x3, y3)


# Jacobian internals: (X, Y, Z) represents (X/Z^2, Y/Z^3); Z == 0 is infinity.
# #########################################################

_Jacobian = Tuple[int, int, int]
_JACOBIAN_INFINITY: _Jacobian = (1, 1, 0)


def _jacobian_double(point: _Jacobian, curve: CurveParams) -> _Jacobian:
    X, Y, Z = point
    if Z == 0 or Y == 0:
        return _JACOBIAN_INFINITY
    p = curve.p
    yy = Y * Y % p
    s = 4 * X * yy % p
    zz = Z * Z % p
    m = (3 * X * X + curve.alpha * zz * zz) % p
    x3 = (m * m - 2 * s) % p
    y3 = (m * (s - x3) - 8 * yy * yy) % p
    z3 = 2 * Y * Z % p
    return (x3, y3, z3)


def _jacobian_add_affine(point: _Jacobian, x2: int, y2: int, curve: CurveParams) -> _Jacobian:
    X1, Y1, Z1 = point
    if Z1 == 0:
        return (x2, y2, 1)
    p = curve.p
    z1z1 = Z1 * Z1 % p
    u2 = x2 * z1z1 % p
    s2 = y2 * Z1 * z1z1 % p
    h = (u2 - X1) % p
    r = (s2 - Y1) % p
    if h == 0:
        if r == 0:
            return _jacobian_double(point, curve)
        return _JACOBIAN_INFINITY
    hh = h * h % p
    hhh = h * hh % p
    v = X1 * hh % p
    x3 = (r * r - hhh - 2 * v) % p
    y3 = (r * (v - x3) - Y1 * hhh) % p
    z3 = Z1 * h % p
    return (x3, y3, z3)


def _to_affine(point: _Jacobian, curve: CurveParams) -> Point:
    X, Y, Z = point
    if Z == 0:
        return INFINITY
    p = curve.p
    z_inv = pow(Z, -1, p)
    z_inv2 = z_inv * z_inv % p
    return Point(X * z_inv2 % p, Y * z_inv2 * z_inv % p)


def scalar_mul(k: Scalar, P: Point, curve: CurveParams) -> Point:
    """Left-to-right double-and-add."""
    _require_on_curve(P, curve)
    if k == 0 or P.is_infinity:
        return INFINITY
    if k < 0:
        k = -k
        P = Point(P.x, (-P.y) % curve.p)
    acc = _JACOBIAN_INFINITY
    for bit in bin(k)[2:]:
        acc = _jacobian_double(acc, curve)
        if bit == "1":
            acc = _jacobian_add_affine(acc, P.x, P.y, curve)
    return _to_affine(acc, curve)


def base_mul(k: Scalar, curve: CurveParams) -> Point:
    return scalar_mul(k, curve.G, curve)


# Scalars and keys
# #########################################################


class ScalarOp(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    INV = "inv"
    NEG = "neg"


def scalar_arith(op: ScalarOp | str, a: Scalar, b: Optional[Scalar], curve: CurveParams) -> Scalar:
    n = curve.n
    operation = ScalarOp(op)
    if operation is ScalarOp.INV:
        if a % n == 0:
            raise DivisionByZero(f"Scalar 0 has no inverse modulo the order of {curve.name}")
        return pow(a, -1, n)
    if operation is ScalarOp.NEG:
        return (-a) % n
    if b is None:
        raise TypeError(f"Scalar operation '{operation.value}' needs two operands")
    if operation is ScalarOp.ADD:
        return (a + b) % n
    if operation is ScalarOp.SUB:
        return (a - b) % n
    return (a * b) % n


def random_scalar(curve: CurveParams, rng: RandomSource) -> Scalar:
    """Uniform scalar in [1, n) by masking and rejection."""
    nbytes = curve.order_size
    mask = (1 << curve.order_bits) - 1
    for _ in range(_MAX_SCALAR_DRAWS):
        candidate = int.from_bytes(draw_bytes(rng, nbytes), "big") & mask
        if 1 <= candidate < curve.n:
            return candidate
    raise RngFailure(
        f"No scalar in [1, n) after {_MAX_SCALAR_DRAWS} draws on {curve.name}; random source is stuck"
    )


def keygen(curve: CurveParams, rng: RandomSource) -> KeyPair:
    priv = random_scalar(curve, rng)
    return KeyPair(priv=priv, pub=base_mul(priv, curve))


# Encodings
# #########################################################


def encode_point(point: Point, curve: CurveParams) -> bytes:
    if point.is_infinity:
        return _POINT_TAG_INFINITY
    width = curve.field_size
    return _POINT_TAG_UNCOMPRESSED + point.x.to_bytes(width, "big") + point.y.to_bytes(width, "big")


def decode_point(data: bytes, curve: CurveParams) -> Point:
    if data == _POINT_TAG_INFINITY:
        return INFINITY
    if len(data) != curve.point_size or data[:1] != _POINT_TAG_UNCOMPRESSED:
        raise MalformedEncoding(
            f"Expected a {curve.point_size}-byte uncompressed point for {curve.name}, got {len(data)} bytes",
            0,
        )
    width = curve.field_size
    point = Point(
        int.from_bytes(data[1 : 1 + width], "big"),
        int.from_bytes(data[1 + width :], "big"),
    )
    _require_on_curve(point, curve, "decoded point")
    return point


def encode_scalar(value: Scalar, curve: CurveParams) -> bytes:
    return (value % curve.n).to_bytes(curve.order_size, "big")


def decode_scalar(data: bytes, curve: CurveParams) -> Scalar:
    if len(data) != curve.order_size:
        raise MalformedEncoding(
            f"Expected a {curve.order_size}-byte scalar for {curve.name}, got {len(data)} bytes", 0
        )
    value = int.from_bytes(data, "big")
    if value >= curve.n:
        raise MalformedEncoding(f"Scalar is not reduced modulo the order of {curve.name}", 0)
    return value


def encode_field_element(value: int, curve: CurveParams) -> bytes:
    return value.to_bytes(curve.field_size, "big")


# Registered curves (NIST SP 800-186 parameters)
# #########################################################

_NIST_CURVES = (
    (
        "P-192",
        80,
        ("secp192r1", "nistp192"),
        "fffffffffffffffffffffffffffffffeffffffffffffffff",
        "fffffffffffffffffffffffffffffffefffffffffffffffc",
        "64210519e59c80e70fa7e9ab72243049feb8deecc146b9b1",
        "188da80eb03090f67cbf20eb43a18800f4ff0afd82ff1012",
        "07192b95ffc8da78631011ed6b24cdd573f977a11e794811",
        "ffffffffffffffffffffffff99def836146bc9b1b4d22831",
    ),
    (
        "P-224",
        112,
        ("secp224r1", "nistp224"),
        "ffffffffffffffffffffffffffffffff000000000000000000000001",
        "fffffffffffffffffffffffffffffffefffffffffffffffffffffffe",
        "b4050a850c04b3abf54132565044b0b7d7bfd8ba270b39432355ffb4",
        "b70e0cbd6bb4bf7f321390b94a03c1d356c21122343280d6115c1d21",
        "bd376388b5f723fb4c22dfe6cd4375a05a07476444d5819985007e34",
        "ffffffffffffffffffffffffffff16a2e0b8f03e13dd29455c5c2a3d",
    ),
    (
        "P-256",
        128,
        ("secp256r1", "nistp256", "prime256v1"),
        "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff",
        "ffffffff00000001000000000000000000000000fffffffffffffffffffffffc",
        "5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b",
        "6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296",
        "4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5",
        "ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551",
    ),
    (
        "P-384",
        192,
        ("secp384r1", "nistp384"),
        "fffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffe"
        "ffffffff0000000000000000ffffffff",
        "fffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffe"
        "ffffffff0000000000000000fffffffc",
        "b3312fa7e23ee7e4988e056be3f82d19181d9c6efe8141120314088f5013875a"
        "c656398d8a2ed19d2a85c8edd3ec2aef",
        "aa87ca22be8b05378eb1c71ef320ad746e1d3b628ba79b9859f741e082542a38"
        "5502f25dbf55296c3a545e3872760ab7",
        "3617de4a96262c6f5d9e98bf9292dc29f8f41dbd289a147ce9da3113b5f0b8c0"
        "0a60b1ce1d7e819d7a431d7c90ea0e5f",
        "ffffffffffffffffffffffffffffffffffffffffffffffffc7634d81f4372ddf"
        "581a0db248b0a77aecec196accc52973",
    ),
    (
        "P-521",
        256,
        ("secp521r1", "nistp521"),
        "01ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
        "ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
        "ffffffff",
        "01ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
        "ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
        "fffffffc",
        "0051953eb9618e1c9a1f929a21a0b68540eea2da725b99b315f3b8b489918ef1"
        "09e156193951ec7e937b1652c0bd3bb1bf073573df883d2c34f1ef451fd4"
        "6b503f00",
        "00c6858e06b70404e9cd9e3ecb662395b4429c648139053fb521f828af606b4d"
        "3dbaa14b5e77efe75928fe1dc127a2ffa8de3348b3c1856a429bf97e7e31"
        "c2e5bd66",
        "011839296a789a3bc0045c8a5fb42c7d1bd998f54449579b446817afbd17273e"
        "662c97ee72995ef42640c550b9013fad0761353c7086a272c24088be9476"
        "9fd16650",
        "01ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
        "fffa51868783bf2f966b7fcc0148f709a5d03bb5c9b8899c47aebb6fb71e"
        "91386409",
    ),
)


def _register_builtin_curves() -> None:
    for name, strength, aliases, p, a, b, gx, gy, n in _NIST_CURVES:
        CurveRegistry.register(
            CurveParams(
                name=name,
                p=int(p, 16),
                alpha=int(a, 16),
                beta=int(b, 16),
                gx=int(gx, 16),
                gy=int(gy, 16),
                n=int(n, 16),
                strength_bits=strength,
            ),
            aliases=aliases,
        )
    # 19-element group used by the exhaustive oracle tests; never a strength.
    CurveRegistry.register(
        CurveParams(name=TOY_CURVE_NAME, p=17, alpha=2, beta=2, gx=5, gy=1, n=19),
        aliases=("toy",),
    )


_register_builtin_curves()
