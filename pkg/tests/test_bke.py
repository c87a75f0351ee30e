from dataclasses import replace

import pytest

from bkepy import bke, curve_math, primitives
from bkepy.curve_math import base_mul
from bkepy.errors import BadPcaSignature, DegenerateKey, KeyMismatch, MacMismatch, MalformedEncoding
from bkepy.primitives import SealedMessage
from bkepy.rng import DeterministicRandomSource


def _resign(response, pca_keys, curve, rng):
    return replace(
        response,
        pca_signature=primitives.ecdsa_sign(pca_keys.priv, response.signed_payload(curve), curve, rng),
    )


@pytest.fixture
def setup(p192, rng):
    material = bke.gen_caterpillar(p192, rng)
    pca_keys = curve_math.keygen(p192, rng)
    return p192, rng, material, pca_keys


def test_caterpillar_material_is_well_formed(setup):
    curve, _, material, _ = setup
    public = material.public()
    assert public.ck != public.ek
    assert public.A == base_mul(material.sign_pair.priv, curve)
    assert public.P == base_mul(material.enc_pair.priv, curve)
    assert bke.CaterpillarPublic.decode(public.encode(curve), curve) == public


def test_cocoon_keys_match_on_both_sides(setup):
    curve, _, material, _ = setup
    for i in (0, 1, 7, primitives.INDEX_LIMIT - 1):
        cocoon = bke.cocoon_public(material.public(), i, curve)
        private = bke.cocoon_private(material, i, curve)
        assert cocoon.index == i == private.index
        assert cocoon.B == base_mul(private.b, curve)
        assert cocoon.Q == base_mul(private.q, curve)


def test_cocoon_indices_must_fit_the_index_field(setup):
    curve, _, material, _ = setup
    for i in (-1, primitives.INDEX_LIMIT):
        with pytest.raises(MalformedEncoding) as excinfo:
            bke.cocoon_public(material.public(), i, curve)
        assert excinfo.value.index == i
        with pytest.raises(MalformedEncoding):
            bke.cocoon_private(material, i, curve)


def test_expand_batch_running_past_the_index_field_names_the_index(setup):
    curve, rng, material, pca_keys = setup
    last = primitives.INDEX_LIMIT - 1
    with pytest.raises(MalformedEncoding) as excinfo:
        bke.expand_batch(material.public(), (last, 2), curve, rng, pca_keys)
    assert excinfo.value.index == primitives.INDEX_LIMIT
    [(_, response)] = bke.expand_batch(material.public(), (last, 1), curve, rng, pca_keys)
    assert bke.ButterflyResponse.decode(response.encode(curve), curve).index == last


def test_toy_cocoons_are_degenerate_only_for_zero_privates(toy):
    rng = DeterministicRandomSource("toy-cocoons")
    material = bke.gen_caterpillar(toy, rng)
    for i in range(40):
        private = bke.cocoon_private(material, i, toy)
        try:
            cocoon = bke.cocoon_public(material.public(), i, toy)
        except DegenerateKey as err:
            assert private.b == 0 or private.q == 0
            assert err.index == i
        else:
            assert cocoon.B == base_mul(private.b, toy)
            assert cocoon.Q == base_mul(private.q, toy)


def test_cocoon_at_infinity_is_degenerate(setup, monkeypatch):
    curve, _, material, _ = setup
    a = material.sign_pair.priv
    monkeypatch.setattr(primitives, "expand_f", lambda key, i, n: (n - a) % n)
    with pytest.raises(DegenerateKey):
        bke.cocoon_public(material.public(), 0, curve)


def test_butterfly_roundtrip(setup):
    curve, rng, material, pca_keys = setup
    cocoon = bke.cocoon_public(material.public(), 3, curve)
    response = bke.butterfly_public(cocoon, pca_keys, curve, rng)
    assert bke.ButterflyResponse.decode(response.encode(curve), curve) == response
    priv = bke.butterfly_private(bke.cocoon_private(material, 3, curve), response, pca_keys.pub, curve)
    assert base_mul(priv, curve) == response.butterfly_pub
    assert response.butterfly_pub != cocoon.B


def test_butterfly_keys_differ_per_call(setup):
    curve, rng, material, pca_keys = setup
    cocoon = bke.cocoon_public(material.public(), 0, curve)
    first = bke.butterfly_public(cocoon, pca_keys, curve, rng)
    second = bke.butterfly_public(cocoon, pca_keys, curve, rng)
    assert first.butterfly_pub != second.butterfly_pub


def test_butterfly_index_mismatch(setup):
    curve, rng, material, pca_keys = setup
    response = bke.butterfly_public(bke.cocoon_public(material.public(), 1, curve), pca_keys, curve, rng)
    with pytest.raises(KeyMismatch):
        bke.butterfly_private(bke.cocoon_private(material, 2, curve), response, pca_keys.pub, curve)


def test_butterfly_rejects_bad_pca_signature(setup):
    curve, rng, material, pca_keys = setup
    response = bke.butterfly_public(bke.cocoon_public(material.public(), 1, curve), pca_keys, curve, rng)
    forged = replace(response, pca_signature=replace(response.pca_signature, s=response.pca_signature.s ^ 1))
    with pytest.raises(BadPcaSignature):
        bke.butterfly_private(bke.cocoon_private(material, 1, curve), forged, pca_keys.pub, curve)

    other_pca = curve_math.keygen(curve, rng)
    with pytest.raises(BadPcaSignature):
        bke.butterfly_private(bke.cocoon_private(material, 1, curve), response, other_pca.pub, curve)


def test_tampered_wrapped_value_fails_signature_then_mac(setup):
    curve, rng, material, pca_keys = setup
    response = bke.butterfly_public(bke.cocoon_public(material.public(), 5, curve), pca_keys, curve, rng)
    ciphertext = response.wrapped_c.ciphertext
    corrupted = replace(
        response,
        wrapped_c=SealedMessage(bytes([ciphertext[0] ^ 0x80]) + ciphertext[1:], response.wrapped_c.tag),
    )
    cocoon_priv = bke.cocoon_private(material, 5, curve)
    with pytest.raises(BadPcaSignature):
        bke.butterfly_private(cocoon_priv, corrupted, pca_keys.pub, curve)
    with pytest.raises(MacMismatch) as excinfo:
        bke.butterfly_private(cocoon_priv, _resign(corrupted, pca_keys, curve, rng), pca_keys.pub, curve)
    assert excinfo.value.index == 5


def test_butterfly_key_assertion(setup):
    curve, rng, material, pca_keys = setup
    response = bke.butterfly_public(bke.cocoon_public(material.public(), 2, curve), pca_keys, curve, rng)
    swapped = _resign(replace(response, butterfly_pub=curve.G), pca_keys, curve, rng)
    with pytest.raises(KeyMismatch):
        bke.butterfly_private(bke.cocoon_private(material, 2, curve), swapped, pca_keys.pub, curve)


def test_cocoon_decode_rejects_short_point_fields(setup):
    curve, _, material, _ = setup
    cocoon = bke.cocoon_public(material.public(), 0, curve)
    encoded = (0).to_bytes(4, "big") + b"\x00" + curve_math.encode_point(cocoon.Q, curve)
    with pytest.raises(MalformedEncoding):
        bke.CocoonPublic.decode(encoded, curve)
    assert bke.CocoonPublic.decode(cocoon.encode(curve), curve) == cocoon


def test_expand_batch(setup):
    curve, rng, material, pca_keys = setup
    pairs = bke.expand_batch(material.public(), (10, 4), curve, rng, pca_keys)
    assert [cocoon.index for cocoon, _ in pairs] == [10, 11, 12, 13]
    for cocoon, response in pairs:
        priv = bke.butterfly_private(bke.cocoon_private(material, cocoon.index, curve), response, pca_keys.pub, curve)
        assert base_mul(priv, curve) == response.butterfly_pub
    with pytest.raises(ValueError):
        bke.expand_batch(material.public(), (0, 0), curve, rng, pca_keys)


def test_expand_batch_names_the_failing_index(setup, monkeypatch):
    curve, rng, material, pca_keys = setup
    a = material.sign_pair.priv
    real_expand = primitives.expand_f

    def expand(key, i, n):
        if i == 3 and key == material.ck:
            return (n - a) % n
        return real_expand(key, i, n)

    monkeypatch.setattr(primitives, "expand_f", expand)
    with pytest.raises(DegenerateKey) as excinfo:
        bke.expand_batch(material.public(), (0, 6), curve, rng, pca_keys)
    assert excinfo.value.index == 3



@pytest.mark.slow
def test_butterfly_keys_are_distinct_from_everything_the_device_published(setup):
    curve, rng, material, pca_keys = setup
    pairs = bke.expand_batch(material.public(), (0, 1000), curve, rng, pca_keys)
    butterflies = [response.butterfly_pub for _, response in pairs]
    assert len(set(butterflies)) == 1000
    published = {material.sign_pair.pub, material.enc_pair.pub}
    for cocoon, _ in pairs:
        published.update((cocoon.B, cocoon.Q))
    assert not published & set(butterflies)
