from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, List, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .curve_math import SUPPORTED_STRENGTHS

LOGGER = logging.getLogger(__name__)

ENV_STRENGTH = "BKEPY_STRENGTH"
ENV_OUT_DIR = "BKEPY_OUT_DIR"

DEFAULT_STRENGTH = 128
DEFAULT_OUT_DIR = Path("bkepy-out")
DEFAULT_READING = b'{"patient": "episode-1", "heart_rate": 72, "spo2": 98}'

LOGICAL_DAY = 86_400
LOGICAL_YEAR = 365 * LOGICAL_DAY

EXPERIMENTS = (1, 2, 3, 4)


class TamperPoint(str, Enum):
    ENROLLMENT_CERT = "enrollment-cert"
    PSEUDONYM_CERT = "pseudonym-cert"
    WRAPPED_C = "wrapped-c"
    READING_CIPHERTEXT = "reading-ciphertext"
    READING_SIGNATURE = "reading-signature"
    WRONG_T = "wrong-t"


def _check_strength(value: int) -> int:
    if value not in SUPPORTED_STRENGTHS:
        supported = ", ".join(str(s) for s in SUPPORTED_STRENGTHS)
        raise ValueError(f"strength {value} is not one of {supported}")
    return value


class PkiPolicy(BaseModel):
    """Validity periods (logical seconds) and ECIES parameters for one PKI."""

    model_config = ConfigDict(frozen=True)

    start_time: int = Field(default=1_700_000_000, ge=0)
    authority_lifetime: int = Field(default=10 * LOGICAL_YEAR, gt=0)
    enrollment_lifetime: int = Field(default=LOGICAL_YEAR, gt=0)
    pseudonym_lifetime: int = Field(default=LOGICAL_DAY, gt=0)
    split_length: int = Field(default=16, ge=1, le=64)

    def authority_validity(self) -> tuple[int, int]:
        return self.start_time, self.start_time + self.authority_lifetime

    def enrollment_validity(self, now: int) -> tuple[int, int]:
        return now, now + self.enrollment_lifetime

    def pseudonym_validity(self, now: int) -> tuple[int, int]:
        return now, now + self.pseudonym_lifetime


class BenchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strengths: List[int] = Field(default_factory=lambda: list(SUPPORTED_STRENGTHS))
    iterations: int = Field(default=1000, ge=1)
    batch_size: int = Field(default=20, ge=1)
    experiments: List[int] = Field(default_factory=lambda: list(EXPERIMENTS))
    seed: int = 0
    warmup: int = Field(default=10, ge=0)

    @field_validator("strengths")
    @classmethod
    def _known_strengths(cls, value: List[int]) -> List[int]:
        seen: List[int] = []
        for strength in value:
            _check_strength(strength)
            if strength not in seen:
                seen.append(strength)
        return seen

    @field_validator("experiments")
    @classmethod
    def _known_experiments(cls, value: List[int]) -> List[int]:
        unknown = [e for e in value if e not in EXPERIMENTS]
        if unknown:
            raise ValueError(f"unknown experiments {unknown}; choose from 1, 2, 3, 4")
        return sorted(set(value))


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strength: int = DEFAULT_STRENGTH
    seed: int = 0
    out_dir: Path = DEFAULT_OUT_DIR
    reading: bytes = DEFAULT_READING
    pseudonym_count: int = Field(default=20, ge=1)
    tamper: Optional[TamperPoint] = None
    policy: PkiPolicy = Field(default_factory=PkiPolicy)

    @field_validator("strength")
    @classmethod
    def _known_strength(cls, value: int) -> int:
        return _check_strength(value)

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None, **overrides: Any) -> "ScenarioConfig":
        """Build a config where explicit overrides beat the environment, which beats defaults."""
        values = {key: value for key, value in overrides.items() if value is not None}
        values.setdefault("strength", default_strength(environ))
        values.setdefault("out_dir", default_out_dir(environ))
        return cls(**values)


def default_strength(environ: Optional[Mapping[str, str]] = None) -> int:
    env = os.environ if environ is None else environ
    raw = env.get(ENV_STRENGTH)
    if not raw:
        return DEFAULT_STRENGTH
    try:
        return int(raw)
    except ValueError as err:
        raise ValueError(f"{ENV_STRENGTH}={raw!r} is not an integer") from err


def default_out_dir(environ: Optional[Mapping[str, str]] = None) -> Path:
    env = os.environ if environ is None else environ
    raw = env.get(ENV_OUT_DIR)
    return Path(raw) if raw else DEFAULT_OUT_DIR
