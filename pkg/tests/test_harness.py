import itertools
import math
from functools import partial

import pandas as pd
import pytest
from pydantic import ValidationError

from bkepy import certs, curve_math
from bkepy.config import BenchConfig, PkiPolicy, ScenarioConfig, TamperPoint
from bkepy.entities import CHECKPOINTS
from bkepy.errors import PkiError
from bkepy.formats import CELL_COLUMNS, FormatError, ReportFormats
from bkepy.harness import (
    EXIT_OK,
    EXIT_PROTOCOL_FAILURE,
    TAMPERS,
    bench,
    emit_report,
    run_scenario,
    summarize,
)
from bkepy.transport import Role


def _scenario(tmp_path, **overrides):
    values = {"strength": 80, "seed": 7, "out_dir": tmp_path, "pseudonym_count": 3}
    values.update(overrides)
    return ScenarioConfig(**values)


def _stepping_timer(step_ns=1000):
    return partial(next, itertools.count(0, step_ns))


# Scenario
# #########################################################


def test_default_scenario_recovers_the_reading(tmp_path):
    config = _scenario(tmp_path)
    result = run_scenario(config)
    assert result.ok
    assert result.exit_code == EXIT_OK
    assert result.recovered == config.reading
    assert result.checkpoints == list(CHECKPOINTS)
    assert result.failed_operation is None
    assert "P-192" in result.message


@pytest.mark.parametrize("point", list(TamperPoint))
def test_tampering_fails_closed_at_the_expected_checkpoint(tmp_path, point):
    spec = TAMPERS[point]
    result = run_scenario(_scenario(tmp_path, tamper=point))
    assert result.exit_code == EXIT_PROTOCOL_FAILURE
    assert result.recovered is None
    assert result.failed_operation == spec.failing_operation
    assert result.failed_checkpoint == spec.failing_checkpoint
    assert isinstance(result.error, PkiError)
    expected = list(CHECKPOINTS[: CHECKPOINTS.index(spec.failing_checkpoint)])
    assert result.checkpoints == expected
    assert result.message.startswith(f"{spec.failing_operation}: {spec.failing_checkpoint}: ")


def test_tamper_matrix_covers_every_point():
    assert set(TAMPERS) == set(TamperPoint)


def test_same_seed_gives_identical_transcripts(tmp_path):
    first = run_scenario(_scenario(tmp_path / "a"))
    second = run_scenario(_scenario(tmp_path / "b"))
    third = run_scenario(_scenario(tmp_path / "c", seed=8))
    for role, path in first.transcript_paths.items():
        assert path.read_text() == second.transcript_paths[role].read_text()
    assert first.transcript_paths["ra"].read_text() != third.transcript_paths["ra"].read_text()


def test_scenario_writes_transcripts_and_certificates(tmp_path):
    result = run_scenario(_scenario(tmp_path))
    assert set(result.transcript_paths) == {role.value for role in Role}
    for path in result.transcript_paths.values():
        assert path.parent == tmp_path
        assert path.suffix == ".transcript"
    hospital_lines = result.transcript_paths["hospital"].read_text().splitlines()
    assert any("kind=reading device->hospital" in line for line in hospital_lines)
    assert result.transcript_paths["rca"].read_text() == ""

    expected = {"rca", "eca", "pca", "ra", "device-enrollment", "hospital-enrollment", "pseudonym-0"}
    assert expected <= set(result.cert_paths)
    root = certs.decode(result.cert_paths["rca"].read_bytes())
    chain = certs.decode_chain(result.cert_paths["pseudonym-0.chain"].read_bytes())
    assert chain[0] == certs.decode(result.cert_paths["pseudonym-0"].read_bytes())
    assert certs.verify_chain(chain, root, PkiPolicy().start_time)


def test_failed_scenario_still_writes_transcripts(tmp_path):
    result = run_scenario(_scenario(tmp_path, tamper=TamperPoint.ENROLLMENT_CERT))
    assert not result.ok
    assert len(result.transcript_paths) == len(Role)
    assert "pseudonym-0" not in result.cert_paths
    assert "device-enrollment" in result.cert_paths


# Configuration
# #########################################################


def test_scenario_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        ScenarioConfig(strength=100)
    with pytest.raises(ValidationError):
        ScenarioConfig(pseudonym_count=0)
    with pytest.raises(ValidationError):
        ScenarioConfig(tamper="nonsense")
    assert ScenarioConfig(tamper="wrong-t").tamper is TamperPoint.WRONG_T


def test_scenario_config_from_env(tmp_path):
    environ = {"BKEPY_STRENGTH": "112", "BKEPY_OUT_DIR": str(tmp_path)}
    config = ScenarioConfig.from_env(environ)
    assert config.strength == 112
    assert config.out_dir == tmp_path
    assert ScenarioConfig.from_env(environ, strength=192, seed=None).strength == 192
    assert ScenarioConfig.from_env({}).strength == 128
    with pytest.raises(ValueError):
        ScenarioConfig.from_env({"BKEPY_STRENGTH": "strong"})


def test_policy_bounds():
    policy = PkiPolicy()
    not_before, not_after = policy.pseudonym_validity(100)
    assert (not_before, not_after) == (100, 100 + policy.pseudonym_lifetime)
    with pytest.raises(ValidationError):
        PkiPolicy(split_length=0)
    with pytest.raises(ValidationError):
        PkiPolicy(split_length=65)


def test_bench_config_normalizes_lists():
    config = BenchConfig(strengths=[128, 80, 128], experiments=[4, 1, 4])
    assert config.strengths == [128, 80]
    assert config.experiments == [1, 4]
    with pytest.raises(ValidationError):
        BenchConfig(strengths=[81])
    with pytest.raises(ValidationError):
        BenchConfig(experiments=[5])
    with pytest.raises(ValidationError):
        BenchConfig(iterations=0)


# Benchmark
# #########################################################


def test_bench_reports_one_cell_per_strength_and_experiment():
    config = BenchConfig(strengths=[80, 112], iterations=3, batch_size=2, warmup=1)
    report = bench(config, timer=_stepping_timer())
    assert list(report.cells.columns) == CELL_COLUMNS
    assert len(report.cells) == 8
    assert len(report.samples) == 24
    single = report.cell(80, 1)
    batched = report.cell(80, 3)
    assert single["mean_us"] == pytest.approx(1.0)
    assert batched["mean_us"] == pytest.approx(0.5)
    assert batched["keys_per_second"] == pytest.approx(2_000_000.0)
    assert single["samples"] == 3
    with pytest.raises(KeyError):
        report.cell(128, 1)


def test_single_iteration_has_zero_spread():
    config = BenchConfig(strengths=[80], iterations=1, batch_size=1, experiments=[2], warmup=0)
    report = bench(config)
    assert report.cell(80, 2)["sd_us"] == 0.0


def test_summarize_empty_samples():
    cells = summarize(pd.DataFrame(columns=["strength", "experiment", "iteration", "micros"]))
    assert cells.empty
    assert list(cells.columns) == CELL_COLUMNS


def test_table_report_layout():
    config = BenchConfig(strengths=[80], iterations=2, batch_size=2, warmup=0)
    text = emit_report(bench(config, timer=_stepping_timer()), "table").decode("utf-8")
    lines = text.splitlines()
    header_lines = [line for line in lines if line.startswith("# ")]
    assert any(line.startswith("# host: ") for line in header_lines)
    assert any("iterations: 2, batch size: 2" in line for line in header_lines)
    body = lines[len(header_lines) :]
    assert body[0].startswith("strength | experiment 1")
    assert body[0].endswith("min keys/s")
    assert set(body[1]) <= {"-", "+"}
    assert body[2].startswith("80")
    assert "1.000 (0.000)" in body[2]
    assert "0.500 (0.000)" in body[2]
    assert body[2].endswith("1000000.0")


def test_table_report_with_no_strengths_is_header_only():
    text = emit_report(bench(BenchConfig(strengths=[], iterations=1)), "table").decode("utf-8")
    body = [line for line in text.splitlines() if not line.startswith("# ")]
    assert len(body) == 2
    assert body[0].startswith("strength")


def test_csv_report_reads_back():
    config = BenchConfig(strengths=[80], iterations=2, batch_size=2, experiments=[1, 3], warmup=0)
    report = bench(config, timer=_stepping_timer())
    frame = ReportFormats.read(emit_report(report, "csv"), "csv")
    assert list(frame.columns) == CELL_COLUMNS
    assert frame["experiment"].tolist() == [1, 3]
    assert frame["mean_us"].tolist() == pytest.approx([1.0, 0.5])


def test_unknown_report_format():
    report = bench(BenchConfig(strengths=[], iterations=1))
    with pytest.raises(FormatError):
        emit_report(report, "xml")
    assert ReportFormats.get("text/csv").id == "csv"


@pytest.mark.slow
def test_full_bench_covers_every_strength_and_experiment():
    config = BenchConfig(iterations=3, batch_size=2, warmup=1)
    report = bench(config)
    assert len(report.cells) == 20
    for column in ("mean_us", "sd_us"):
        assert all(math.isfinite(value) for value in report.cells[column])
    assert report.cell(256, 2)["keys_per_second"] >= 1.0
    assert report.cell(256, 1)["mean_us"] >= report.cell(80, 1)["mean_us"]

    body = [line for line in emit_report(report, "table").decode("utf-8").splitlines() if not line.startswith("# ")]
    assert [row.split("|")[0].strip() for row in body[2:]] == ["80", "112", "128", "192", "256"]


@pytest.mark.slow
def test_enrollment_key_never_reaches_the_pca_or_the_hospital(tmp_path):
    for seed in range(20):
        result = run_scenario(_scenario(tmp_path / str(seed), seed=seed))
        assert result.ok
        enrollment = certs.decode(result.cert_paths["device-enrollment"].read_bytes())
        A = curve_math.encode_point(enrollment.subject_pub, enrollment.curve).hex()
        assert A not in result.transcript_paths["pca"].read_text()
        readings = [
            line for line in result.transcript_paths["hospital"].read_text().splitlines() if "kind=reading" in line
        ]
        assert readings
        assert not any(A in line for line in readings)
        assert A in result.transcript_paths["ra"].read_text()
