"""Scenario runner and expansion benchmark."""

from __future__ import annotations

import logging
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import Crypto
import pandas as pd

from . import bke, certs, curve_math
from .config import BenchConfig, ScenarioConfig, TamperPoint
from .curve_math import CurveParams, KeyPair
from .entities import (
    CHECKPOINTS,
    DEVICE_UNWRAP_BUTTERFLY,
    HOSPITAL_DECRYPT,
    HOSPITAL_VERIFY_CHAIN,
    HOSPITAL_VERIFY_SIGNATURE,
    RA_VALIDATE_ENROLLMENT,
    ButterflyBatch,
    Device,
    ExpansionValue,
    Hospital,
    PkiSystem,
    PseudonymRequest,
    ReadingMessage,
    bootstrap,
    device_expand_hospital_pub,
    negotiate_t,
    request_pseudonyms,
    send_reading,
)
from .errors import PkiError
from .formats import CELL_COLUMNS, ReportFormats
from .primitives import SealedMessage, Signature
from .rng import DeterministicRandomSource, RandomSource
from .transport import Bus, MessageKind, Tamper

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROTOCOL_FAILURE = 1
EXIT_USAGE = 2


# Tamper points
# #########################################################


def _corrupt_signature(signature: Signature) -> Signature:
    return Signature(signature.r, signature.s ^ 1)


def _corrupt_cert(cert: certs.Certificate) -> certs.Certificate:
    return replace(cert, signature=_corrupt_signature(cert.signature))


def _flip_first_bit(data: bytes) -> bytes:
    if not data:
        return b"\x01"
    return bytes([data[0] ^ 0x01]) + data[1:]


def _tamper_enrollment_cert(payload: bytes, curve: CurveParams) -> bytes:
    request = PseudonymRequest.decode(payload, curve)
    return replace(request, enrollment_cert=_corrupt_cert(request.enrollment_cert)).encode(curve)


def _tamper_wrapped_c(payload: bytes, curve: CurveParams) -> bytes:
    batch = ButterflyBatch.decode(payload, curve)
    (response, cert), *rest = batch.items
    sealed = SealedMessage(_flip_first_bit(response.wrapped_c.ciphertext), response.wrapped_c.tag)
    return replace(batch, items=((replace(response, wrapped_c=sealed), cert), *rest)).encode(curve)


def _tamper_pseudonym_cert(payload: bytes, curve: CurveParams) -> bytes:
    msg = ReadingMessage.decode(payload, curve)
    return replace(msg, pseudonym_cert=_corrupt_cert(msg.pseudonym_cert)).encode(curve)


def _tamper_reading_ciphertext(payload: bytes, curve: CurveParams) -> bytes:
    msg = ReadingMessage.decode(payload, curve)
    sealed = SealedMessage(_flip_first_bit(msg.sealed.ciphertext), msg.sealed.tag)
    return replace(msg, sealed=sealed).encode(curve)


def _tamper_reading_signature(payload: bytes, curve: CurveParams) -> bytes:
    msg = ReadingMessage.decode(payload, curve)
    return replace(msg, signature=_corrupt_signature(msg.signature)).encode(curve)


def _tamper_expansion_value(payload: bytes, curve: CurveParams) -> bytes:
    t = ExpansionValue.decode(payload, curve).t
    return ExpansionValue(t + 1 if t + 1 < curve.n else 1).encode(curve)


@dataclass(frozen=True)
class TamperSpec:
    kind: MessageKind
    tamper: Tamper
    failing_operation: str
    failing_checkpoint: str


TAMPERS: Dict[TamperPoint, TamperSpec] = {
    TamperPoint.ENROLLMENT_CERT: TamperSpec(
        MessageKind.PSEUDONYM_REQUEST, _tamper_enrollment_cert, "request_pseudonyms", RA_VALIDATE_ENROLLMENT
    ),
    TamperPoint.WRAPPED_C: TamperSpec(
        MessageKind.BUTTERFLY_BATCH, _tamper_wrapped_c, "request_pseudonyms", DEVICE_UNWRAP_BUTTERFLY
    ),
    TamperPoint.PSEUDONYM_CERT: TamperSpec(
        MessageKind.READING, _tamper_pseudonym_cert, "hospital_receive", HOSPITAL_VERIFY_CHAIN
    ),
    TamperPoint.READING_CIPHERTEXT: TamperSpec(
        MessageKind.READING, _tamper_reading_ciphertext, "hospital_receive", HOSPITAL_VERIFY_SIGNATURE
    ),
    TamperPoint.READING_SIGNATURE: TamperSpec(
        MessageKind.READING, _tamper_reading_signature, "hospital_receive", HOSPITAL_VERIFY_SIGNATURE
    ),
    TamperPoint.WRONG_T: TamperSpec(
        MessageKind.EXPANSION_VALUE, _tamper_expansion_value, "hospital_receive", HOSPITAL_DECRYPT
    ),
}


# Scenario
# #########################################################


@dataclass
class ScenarioResult:
    exit_code: int
    checkpoints: List[str]
    failed_operation: Optional[str] = None
    failed_checkpoint: Optional[str] = None
    error: Optional[PkiError] = None
    message: str = ""
    recovered: Optional[bytes] = field(default=None, repr=False)
    transcript_paths: Dict[str, Path] = field(default_factory=dict)
    cert_paths: Dict[str, Path] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


@dataclass
class _ScenarioState:
    system: Optional[PkiSystem] = None
    device: Optional[Device] = None
    hospital: Optional[Hospital] = None


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Bootstrap, enroll, issue pseudonyms, negotiate t and deliver one reading.

    Transcripts and certificates are written to ``config.out_dir`` whether or
    not the run succeeds.
    """
    curve = curve_math.curve_for_strength(config.strength)
    root_rng = DeterministicRandomSource(config.seed)
    bus = Bus(curve)
    if config.tamper is not None:
        spec = TAMPERS[TamperPoint(config.tamper)]
        bus.add_tamper(spec.kind, spec.tamper)
    state = _ScenarioState()
    operation = "bootstrap"
    recovered: Optional[bytes] = None
    error: Optional[PkiError] = None
    try:
        state.system = bootstrap(curve, rng=root_rng.fork("pki"), policy=config.policy, bus=bus)
        system = state.system
        state.device = device = system.new_device()
        state.hospital = hospital = system.new_hospital()

        operation = "enroll_device"
        device.enroll(system.eca)
        hospital.enroll(system.eca)

        operation = "request_pseudonyms"
        request_pseudonyms(device, system.ra, system.pca, config.pseudonym_count)

        operation = "negotiate_t"
        negotiate_t(hospital, device)

        operation = "device_expand_hospital_pub"
        Z = device_expand_hospital_pub(device.expansion_values[-1], hospital.enrollment_cert.subject_pub, curve)

        operation = "send_reading"
        send_reading(device, config.reading, device.pseudonyms[0], Z)

        operation = "hospital_receive"
        recovered = hospital.receive_reading()
    except PkiError as err:
        error = err

    checkpoints = state.system.context.checkpoints.passed if state.system else []
    result = ScenarioResult(exit_code=EXIT_OK, checkpoints=checkpoints, recovered=recovered)
    if error is not None:
        result.exit_code = EXIT_PROTOCOL_FAILURE
        result.failed_operation = operation
        result.failed_checkpoint = error.step
        result.error = error
        step = f"{error.step}: " if error.step else ""
        result.message = f"{operation}: {step}{type(error).__name__}: {error}"
        LOGGER.warning("Scenario failed in %s", result.message)
    elif recovered != config.reading:
        result.exit_code = EXIT_PROTOCOL_FAILURE
        result.failed_operation = "hospital_receive"
        result.message = "hospital_receive: recovered reading differs from the reading sent"
    else:
        result.message = f"hospital recovered {len(recovered)} reading bytes on {curve.name}"
        LOGGER.info("Scenario succeeded on %s", curve.name)

    result.transcript_paths = _write_transcripts(config.out_dir, bus)
    result.cert_paths = _write_certs(config.out_dir / "certs", state)
    return result


def _write_transcripts(out_dir: Path, bus: Bus) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    for role, transcript in bus.transcripts.items():
        path = out_dir / f"{role.value}.transcript"
        path.write_text(transcript.dump(), encoding="ascii")
        paths[role.value] = path
    return paths


def _write_certs(cert_dir: Path, state: _ScenarioState) -> Dict[str, Path]:
    if state.system is None:
        return {}
    cert_dir.mkdir(parents=True, exist_ok=True)
    system = state.system
    named: List[Tuple[str, Optional[certs.Certificate]]] = [
        ("rca", system.rca.cert),
        ("eca", system.eca.cert),
        ("pca", system.pca.cert),
        ("ra", system.ra.cert),
    ]
    if state.device is not None:
        named.append(("device-enrollment", state.device.enrollment_cert))
    if state.hospital is not None:
        named.append(("hospital-enrollment", state.hospital.enrollment_cert))
    pseudonym = state.device.pseudonyms[0].cert if state.device and state.device.pseudonyms else None
    named.append(("pseudonym-0", pseudonym))

    paths: Dict[str, Path] = {}
    for name, cert in named:
        if cert is None:
            continue
        path = cert_dir / f"{name}.cert"
        path.write_bytes(cert.encode())
        paths[name] = path
    if pseudonym is not None:
        path = cert_dir / "pseudonym-0.chain"
        path.write_bytes(certs.encode_chain(system.directory.chain_for(pseudonym)))
        paths["pseudonym-0.chain"] = path
    return paths


# Benchmark
# #########################################################

SAMPLE_COLUMNS = ["strength", "experiment", "iteration", "micros"]

# experiment -> (operation, uses the configured batch size)
EXPERIMENT_LAYOUT: Dict[int, Tuple[str, bool]] = {
    1: ("cocoon", False),
    2: ("butterfly", False),
    3: ("cocoon", True),
    4: ("butterfly", True),
}


@dataclass(frozen=True)
class HostInfo:
    cpu: str
    machine: str
    system: str
    python: str
    build_profile: str

    def describe(self) -> List[str]:
        return [
            f"host: {self.cpu} ({self.machine}, {self.system})",
            f"python: {self.python}",
            f"build: {self.build_profile}",
        ]


def collect_host_info() -> HostInfo:
    profile = "optimized" if sys.flags.optimize else "assertions enabled"
    return HostInfo(
        cpu=platform.processor() or platform.machine() or "unknown",
        machine=platform.machine() or "unknown",
        system=f"{platform.system()} {platform.release()}".strip(),
        python=f"{platform.python_implementation()} {platform.python_version()}",
        build_profile=f"{profile}, pycryptodome {Crypto.__version__}",
    )


@dataclass(frozen=True, eq=False)
class BenchReport:
    config: BenchConfig
    cells: pd.DataFrame
    samples: pd.DataFrame
    host: HostInfo

    def cell(self, strength: int, experiment: int) -> pd.Series:
        match = self.cells[(self.cells["strength"] == strength) & (self.cells["experiment"] == experiment)]
        if match.empty:
            raise KeyError((strength, experiment))
        return match.iloc[0]

    def header_lines(self) -> List[str]:
        return self.host.describe() + [
            f"iterations: {self.config.iterations}, batch size: {self.config.batch_size}, "
            f"warm-up: {self.config.warmup}, seed: {self.config.seed}",
            "cells: mean (sd) microseconds per expanded key",
        ]


def _experiment_runner(
    experiment: int,
    material: bke.CaterpillarPublic,
    cocoons: List[bke.CocoonPublic],
    pca_keys: KeyPair,
    curve: CurveParams,
    rng: RandomSource,
    batch_size: int,
) -> Tuple[Callable[[int], None], int]:
    operation, batched = EXPERIMENT_LAYOUT[experiment]
    keys = batch_size if batched else 1
    if operation == "cocoon":

        def run(iteration: int) -> None:
            for j in range(keys):
                bke.cocoon_public(material, iteration * keys + j, curve)

    else:

        def run(iteration: int) -> None:
            for j in range(keys):
                cocoon = cocoons[(iteration * keys + j) % len(cocoons)]
                bke.butterfly_public(cocoon, pca_keys, curve, rng)

    return run, keys


def summarize(samples: pd.DataFrame) -> pd.DataFrame:
    if samples.empty:
        return pd.DataFrame(columns=CELL_COLUMNS)
    grouped = samples.groupby(["strength", "experiment"], sort=False)["micros"]
    cells = grouped.agg(mean_us="mean", sd_us="std", samples="count").reset_index()
    cells["sd_us"] = cells["sd_us"].fillna(0.0)
    cells["keys_per_second"] = 1_000_000.0 / cells["mean_us"]
    return cells[CELL_COLUMNS]


def bench(config: BenchConfig, *, timer: Callable[[], int] = time.perf_counter_ns) -> BenchReport:
    """Time cocoon and butterfly expansion per strength; cells are microseconds per key."""
    root_rng = DeterministicRandomSource(config.seed)
    records: List[Dict[str, float]] = []
    for strength in config.strengths:
        curve = curve_math.curve_for_strength(strength)
        rng = root_rng.fork(f"bench-{strength}")
        material = bke.gen_caterpillar(curve, rng).public()
        pca_keys = curve_math.keygen(curve, rng)
        cocoons = [bke.cocoon_public(material, i, curve) for i in range(config.batch_size)]
        for experiment in config.experiments:
            run, keys = _experiment_runner(experiment, material, cocoons, pca_keys, curve, rng, config.batch_size)
            for iteration in range(config.warmup):
                run(iteration)
            for iteration in range(config.iterations):
                started = timer()
                run(iteration)
                elapsed = timer() - started
                records.append(
                    {
                        "strength": strength,
                        "experiment": experiment,
                        "iteration": iteration,
                        "micros": elapsed / 1000.0 / keys,
                    }
                )
            LOGGER.info("Benchmarked strength %d experiment %d", strength, experiment)
    samples = pd.DataFrame.from_records(records, columns=SAMPLE_COLUMNS)
    return BenchReport(config=config, cells=summarize(samples), samples=samples, host=collect_host_info())


def emit_report(report: BenchReport, fmt: str = "table") -> bytes:
    return ReportFormats.write(report, fmt).encode("utf-8")


__all__ = [
    "CHECKPOINTS",
    "EXIT_OK",
    "EXIT_PROTOCOL_FAILURE",
    "EXIT_USAGE",
    "TAMPERS",
    "BenchReport",
    "HostInfo",
    "ScenarioResult",
    "bench",
    "collect_host_info",
    "emit_report",
    "run_scenario",
    "summarize",
]
