import pytest

from bkepy import curve_math
from bkepy.curve_math import (
    INFINITY,
    CurveParams,
    CurveRegistry,
    Point,
    ScalarOp,
    base_mul,
    point_add,
    point_neg,
    point_sub,
    scalar_arith,
    scalar_mul,
)
from bkepy.errors import DivisionByZero, MalformedEncoding, OffCurveInput, RngFailure, UnknownStrength
from bkepy.rng import DeterministicRandomSource


def _repeated_addition(k, P, curve):
    acc = INFINITY
    for _ in range(k):
        acc = point_add(acc, P, curve)
    return acc


def test_toy_multiples_match_the_reference_table(toy, toy_multiples):
    for k, (x, y) in toy_multiples.items():
        assert base_mul(k, toy) == Point(x, y)
    assert base_mul(19, toy).is_infinity


def test_toy_scalar_mul_agrees_with_repeated_addition(toy):
    for k in range(19):
        assert scalar_mul(k, toy.G, toy) == _repeated_addition(k, toy.G, toy)


def test_doubling_the_toy_generator(toy):
    assert point_add(toy.G, toy.G, toy) == Point(6, 3)


def test_toy_group_laws_hold_for_every_pair(toy):
    points = [base_mul(k, toy) for k in range(19)]
    for P in points:
        assert point_add(P, INFINITY, toy) == P
        assert point_add(P, point_neg(P, toy), toy).is_infinity
        for Q in points:
            assert point_add(P, Q, toy) == point_add(Q, P, toy)
    a, b, c = points[3], points[7], points[11]
    assert point_add(point_add(a, b, toy), c, toy) == point_add(a, point_add(b, c, toy), toy)


def test_negative_scalar_mul_is_the_negated_point(toy):
    assert scalar_mul(-3, toy.G, toy) == point_neg(base_mul(3, toy), toy)
    assert point_sub(base_mul(5, toy), base_mul(2, toy), toy) == base_mul(3, toy)


def test_point_add_rejects_off_curve_operands(toy):
    with pytest.raises(OffCurveInput):
        point_add(toy.G, Point(1, 1), toy)
    with pytest.raises(OffCurveInput):
        scalar_mul(2, Point(1, 1), toy)


def test_scalar_inverse_on_toy_order(toy):
    assert scalar_arith(ScalarOp.INV, 2, None, toy) == 10
    assert scalar_arith("mul", 2, 10, toy) == 1
    assert scalar_arith("neg", 5, None, toy) == 14
    assert scalar_arith("sub", 3, 5, toy) == 17
    with pytest.raises(DivisionByZero):
        scalar_arith(ScalarOp.INV, 0, None, toy)
    with pytest.raises(ZeroDivisionError):
        scalar_arith(ScalarOp.INV, 19, None, toy)


def test_order_times_generator_is_infinity(nist_curve):
    curve = nist_curve
    assert base_mul(curve.n, curve).is_infinity
    assert base_mul(curve.n - 1, curve) == point_neg(curve.G, curve)


def test_scalar_mul_distributes_over_addition(nist_curve):
    curve = nist_curve
    rng = DeterministicRandomSource(curve.name)
    a = curve_math.random_scalar(curve, rng)
    b = curve_math.random_scalar(curve, rng)
    assert base_mul((a + b) % curve.n, curve) == point_add(base_mul(a, curve), base_mul(b, curve), curve)


def test_strength_lookup():
    assert curve_math.curve_for_strength(80).name == "P-192"
    assert curve_math.curve_for_strength(112).name == "P-224"
    assert curve_math.curve_for_strength(128).name == "P-256"
    assert curve_math.curve_for_strength(192).name == "P-384"
    assert curve_math.curve_for_strength(256).name == "P-521"
    with pytest.raises(UnknownStrength):
        curve_math.curve_for_strength(100)


def test_registry_aliases_and_toy_curve_has_no_strength():
    assert CurveRegistry.get("secp256r1") is CurveRegistry.get("P-256")
    assert curve_math.toy_curve().strength_bits is None
    assert curve_math.TOY_CURVE_NAME not in {curve.name for curve in CurveRegistry.registered()}
    with pytest.raises(KeyError):
        CurveRegistry.get("P-999")


def test_curve_params_validate_the_generator():
    with pytest.raises(OffCurveInput):
        CurveParams(name="broken", p=17, alpha=2, beta=2, gx=1, gy=1, n=19)
    with pytest.raises(OffCurveInput):
        CurveParams(name="singular", p=17, alpha=0, beta=0, gx=0, gy=0, n=1)


def test_random_scalar_stays_in_range(toy, rng):
    draws = {curve_math.random_scalar(toy, rng) for _ in range(200)}
    assert draws <= set(range(1, 19))
    assert len(draws) > 10


def test_random_scalar_fails_on_a_stuck_source(toy, fixed_bytes):
    with pytest.raises(RngFailure):
        curve_math.random_scalar(toy, fixed_bytes(b"\x00" * 4096))


def test_random_scalar_fails_on_a_short_source(p192, fixed_bytes):
    with pytest.raises(RngFailure):
        curve_math.random_scalar(p192, fixed_bytes(b"\x01\x02"))


def test_point_encoding(p192, rng):
    pair = curve_math.keygen(p192, rng)
    encoded = curve_math.encode_point(pair.pub, p192)
    assert len(encoded) == p192.point_size
    assert curve_math.decode_point(encoded, p192) == pair.pub
    assert curve_math.decode_point(curve_math.encode_point(INFINITY, p192), p192) is INFINITY

    flipped = encoded[:-1] + bytes([encoded[-1] ^ 1])
    with pytest.raises(OffCurveInput):
        curve_math.decode_point(flipped, p192)
    with pytest.raises(MalformedEncoding):
        curve_math.decode_point(encoded[:-1], p192)


def test_scalar_encoding_rejects_unreduced_values(toy):
    assert curve_math.decode_scalar(curve_math.encode_scalar(7, toy), toy) == 7
    with pytest.raises(MalformedEncoding):
        curve_math.decode_scalar(bytes([19]), toy)
