from __future__ import annotations

import logging
from typing import Protocol, Union, runtime_checkable

from Crypto.Cipher import AES
from Crypto.Hash import SHA256
from Crypto.Random import get_random_bytes

from .errors import RngFailure

LOGGER = logging.getLogger(__name__)

Seed = Union[int, bytes, str]


@runtime_checkable
class RandomSource(Protocol):
    def random_bytes(self, num_bytes: int) -> bytes: ...

    def fork(self, label: str) -> "RandomSource": ...


class SystemRandomSource:
    """Operating-system entropy."""

    def random_bytes(self, num_bytes: int) -> bytes:
        return get_random_bytes(num_bytes)

    def fork(self, label: str) -> "SystemRandomSource":
        return SystemRandomSource()

    def __repr__(self) -> str:
        return "SystemRandomSource()"


class DeterministicRandomSource:
    """AES-256 counter-mode DRBG.

    After every request the key and counter are replaced with fresh output,
    so earlier outputs cannot be recomputed from the current state. Forks are
    derived from the seed and the label only, never from how much of the
    parent stream has been consumed.
    """

    _SEED_LENGTH = 48

    def __init__(self, seed: Seed) -> None:
        self._seed_material = _seed_bytes(seed)
        digest = SHA256.new(b"bkepy-drbg\x00" + self._seed_material).digest()
        self._key = digest
        self._ctr = b"\x00" * 16

    def _increment_ctr(self) -> None:
        value = (int.from_bytes(self._ctr, "big") + 1) % (1 << 128)
        self._ctr = value.to_bytes(16, "big")

    def _generate(self, num_bytes: int) -> bytes:
        cipher = AES.new(self._key, AES.MODE_ECB)
        out = bytearray()
        while len(out) < num_bytes:
            self._increment_ctr()
            out += cipher.encrypt(self._ctr)
        return bytes(out[:num_bytes])

    def random_bytes(self, num_bytes: int) -> bytes:
        if num_bytes < 0:
            raise RngFailure(f"Cannot draw a negative number of bytes ({num_bytes})")
        output = self._generate(num_bytes)
        update = self._generate(self._SEED_LENGTH)
        self._key = update[:32]
        self._ctr = update[32:]
        return output

    def fork(self, label: str) -> "DeterministicRandomSource":
        LOGGER.debug("Forking deterministic random source for %r", label)
        return DeterministicRandomSource(self._seed_material + b"/" + label.encode("utf-8"))

    def __repr__(self) -> str:
        return f"DeterministicRandomSource(seed={self._seed_material.hex()[:16]}...)"


def _seed_bytes(seed: Seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, str):
        return seed.encode("utf-8")
    if isinstance(seed, int):
        length = max(1, (seed.bit_length() + 8) // 8)
        return seed.to_bytes(length, "big", signed=True)
    raise TypeError(f"Unsupported seed type {type(seed).__name__}")


def draw_bytes(rng: RandomSource, num_bytes: int) -> bytes:
    """Read exactly ``num_bytes`` from ``rng`` or raise RngFailure."""
    try:
        data = rng.random_bytes(num_bytes)
    except RngFailure:
        raise
    except Exception as err:
        raise RngFailure(f"Random source failed: {err}", original=err) from err
    if not isinstance(data, (bytes, bytearray)) or len(data) != num_bytes:
        got = len(data) if isinstance(data, (bytes, bytearray)) else type(data).__name__
        raise RngFailure(f"Random source returned {got} instead of {num_bytes} bytes")
    return bytes(data)
