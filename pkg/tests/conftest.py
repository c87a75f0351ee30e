import json
from pathlib import Path

import pytest

from bkepy.config import PkiPolicy
from bkepy.curve_math import CurveRegistry, curve_for_strength, toy_curve
from bkepy.entities import bootstrap
from bkepy.rng import DeterministicRandomSource

FIXTURES_DIR = Path(__file__).parent / "fixtures"


class FixedBytesSource:
    """Replays a fixed byte string, then fails like an exhausted source."""

    def __init__(self, data: bytes) -> None:
        self._data = data

    def random_bytes(self, num_bytes: int) -> bytes:
        chunk, self._data = self._data[:num_bytes], self._data[num_bytes:]
        return chunk

    def fork(self, label: str) -> "FixedBytesSource":
        return FixedBytesSource(self._data)


@pytest.fixture(params=[curve.name for curve in CurveRegistry.registered()])
def nist_curve(request):
    return CurveRegistry.get(request.param)


@pytest.fixture
def fixed_bytes():
    return FixedBytesSource


@pytest.fixture
def rng():
    return DeterministicRandomSource("bkepy-tests")


@pytest.fixture
def toy():
    return toy_curve()


@pytest.fixture
def p192():
    return curve_for_strength(80)


@pytest.fixture
def toy_multiples():
    data = json.loads((FIXTURES_DIR / "toy_curve_multiples.json").read_text())
    return {int(k): tuple(v) for k, v in data["multiples"].items()}


@pytest.fixture
def pki(p192):
    return bootstrap(p192, rng=DeterministicRandomSource("pki"), policy=PkiPolicy())


@pytest.fixture
def enrolled(pki):
    device = pki.new_device()
    hospital = pki.new_hospital()
    device.enroll(pki.eca)
    hospital.enroll(pki.eca)
    return pki, device, hospital
