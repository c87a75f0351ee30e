from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional

import pandas as pd


class FormatError(ValueError):
    pass


Reader = Callable[[Any, Dict[str, Any]], Any]
Writer = Callable[[Any, Dict[str, Any]], str]

CELL_COLUMNS: List[str] = ["strength", "experiment", "mean_us", "sd_us", "samples", "keys_per_second"]


@dataclass(frozen=True)
class ReportFormat:
    id: str
    mime_type: str
    reader: Optional[Reader]
    writer: Optional[Writer]


class ReportFormats:
    _FORMATS: Dict[str, ReportFormat] = {}
    _ALIASES: Dict[str, str] = {}

    @classmethod
    def register(cls, definition: ReportFormat, *, aliases: Optional[Iterable[str]] = None) -> None:
        cls._FORMATS[definition.id] = definition
        cls._ALIASES[definition.id.lower()] = definition.id
        cls._ALIASES[definition.mime_type.lower()] = definition.id
        for alias in aliases or ():
            cls._ALIASES[alias.lower()] = definition.id

    @classmethod
    def get(cls, name: Optional[str]) -> Optional[ReportFormat]:
        if not name:
            return None
        key = cls._ALIASES.get(name.lower())
        if key is None:
            return None
        return cls._FORMATS.get(key)

    @classmethod
    def names(cls) -> List[str]:
        return sorted(cls._FORMATS)

    @classmethod
    def read(cls, value: Any, format_name: str, options: Optional[Dict[str, Any]] = None) -> Any:
        definition = cls.get(format_name)
        if definition is None or definition.reader is None:
            raise FormatError(f"Unsupported report input format '{format_name}'")
        try:
            return definition.reader(value, options or {})
        except Exception as err:
            raise FormatError(f"Failed to parse report as {definition.id}: {err}") from err

    @classmethod
    def write(cls, report: Any, format_name: str, options: Optional[Dict[str, Any]] = None) -> str:
        definition = cls.get(format_name)
        if definition is None or definition.writer is None:
            raise FormatError(f"Unsupported report format '{format_name}'")
        try:
            return definition.writer(report, options or {})
        except Exception as err:
            raise FormatError(f"Failed to render report as {definition.id}: {err}") from err


def _register_builtin_formats() -> None:
    ReportFormats.register(
        ReportFormat(
            id="table",
            mime_type="text/plain",
            reader=None,
            writer=_table_writer,
        ),
        aliases=["text-table", "text"],
    )
    ReportFormats.register(
        ReportFormat(
            id="csv",
            mime_type="text/csv",
            reader=_csv_reader,
            writer=_csv_writer,
        ),
        aliases=["application/csv"],
    )


def _ensure_text(value: Any, options: Dict[str, Any]) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).decode(options.get("encoding", "utf-8"))
    raise FormatError("Expected textual report input")


def _cell_text(mean: float, sd: float) -> str:
    return f"{mean:.3f} ({sd:.3f})"


def _table_writer(report: Any, options: Dict[str, Any]) -> str:
    """Strengths as rows, experiments as columns, ``mean (sd)`` microsecond cells."""
    experiments = list(report.config.experiments)
    header = ["strength"] + [f"experiment {e}" for e in experiments] + ["min keys/s"]
    cells: pd.DataFrame = report.cells
    rows: List[List[str]] = []
    for strength in report.config.strengths:
        subset = cells[cells["strength"] == strength]
        if subset.empty:
            continue
        row = [str(strength)]
        for experiment in experiments:
            match = subset[subset["experiment"] == experiment]
            if match.empty:
                row.append("-")
            else:
                cell = match.iloc[0]
                row.append(_cell_text(float(cell["mean_us"]), float(cell["sd_us"])))
        row.append(f"{float(subset['keys_per_second'].min()):.1f}")
        rows.append(row)

    widths = [max(len(line[i]) for line in [header, *rows]) for i in range(len(header))]
    lines = [f"# {text}" for text in report.header_lines()]
    lines.append(" | ".join(text.ljust(width) for text, width in zip(header, widths)).rstrip())
    lines.append("-+-".join("-" * width for width in widths))
    for row in rows:
        lines.append(" | ".join(text.ljust(width) for text, width in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _csv_writer(report: Any, options: Dict[str, Any]) -> str:
    frame = report.cells.reindex(columns=CELL_COLUMNS)
    return frame.to_csv(index=False, lineterminator="\n")


def _csv_reader(value: Any, options: Dict[str, Any]) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(_ensure_text(value, options)))


_register_builtin_formats()
