"""Sweep result tables and their CSV/JSON files.

CSV layout::

    # experiment: ad-advantage
    # <note lines>
    p,n,F_n,Fprime_n,diff,method,seed,budget[,extra...]
    0.05,2,0.9812,0.9813,9.999999999998899e-05,brute,,

Fidelities carry 12 significant digits; ``diff`` is the exact difference
of the stored values, printed in shortest round-trip form.
"""
import csv
import io
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger
from pydantic import BaseModel, root_validator, validator

from kraus_feedback.errors import OutputError

FIXED_COLUMNS = ("n", "F_n", "Fprime_n", "diff", "method", "seed", "budget")
_COMMENT = "#"


def round_sig(value: float) -> float:
    """Round to 12 significant digits."""
    return float(f"{value:.12g}")


def _fmt(value: float) -> str:
    return f"{value:.12g}"


class SweepRow(BaseModel):
    """One grid point and step count."""

    params: Tuple[float, ...]
    n: int
    f_markovian: float
    f_bayesian: float
    diff: float = 0.0
    method: str = "brute"
    seed: Optional[int] = None
    budget: Optional[int] = None
    extras: Tuple[float, ...] = ()

    class Config:
        """Config class."""

        allow_mutation = False

    @validator("params", "extras", pre=True)
    def round_tuple(cls, v: Sequence[float]) -> Tuple[float, ...]:
        """Values stored as written."""
        return tuple(round_sig(float(x)) for x in v)

    @validator("f_markovian", "f_bayesian")
    def round_value(cls, v: float) -> float:
        """Fidelities stored as written."""
        return round_sig(v)

    @validator("n")
    def check_steps(cls, v: int) -> int:
        """Step count is positive."""
        if v < 1:
            raise ValueError("n must be >= 1")
        return v

    @root_validator(skip_on_failure=True)
    def exact_difference(cls, values: Dict) -> Dict:
        """``diff`` is derived from the stored fidelities."""
        values["diff"] = values["f_bayesian"] - values["f_markovian"]
        return values


class SweepTable(BaseModel):
    """Rows of one experiment plus header notes."""

    experiment: str
    param_names: Tuple[str, ...]
    extra_names: Tuple[str, ...] = ()
    notes: List[str] = []
    rows: List[SweepRow] = []

    @root_validator(skip_on_failure=True)
    def check_widths(cls, values: Dict) -> Dict:
        """Every row matches the declared columns."""
        for index, row in enumerate(values["rows"]):
            if len(row.params) != len(values["param_names"]) or len(
                row.extras
            ) != len(values["extra_names"]):
                raise ValueError(f"row {index} does not match the header")
        return values

    @property
    def header(self) -> List[str]:
        """CSV header row."""
        return [*self.param_names, *FIXED_COLUMNS, *self.extra_names]

    def max_abs_diff(self) -> float:
        """Largest ``|F'_n - F_n|`` over the rows."""
        return max((abs(row.diff) for row in self.rows), default=0.0)


def _row_cells(row: SweepRow) -> List[str]:
    return [
        *map(_fmt, row.params),
        str(row.n),
        _fmt(row.f_markovian),
        _fmt(row.f_bayesian),
        repr(row.diff),
        row.method,
        "" if row.seed is None else str(row.seed),
        "" if row.budget is None else str(row.budget),
        *map(_fmt, row.extras),
    ]


def write_csv(
    table: SweepTable, stream: IO[str], timestamp: bool = True
) -> None:
    """Write comment header, column header and rows."""
    stream.write(f"{_COMMENT} experiment: {table.experiment}\n")
    if timestamp:
        now = datetime.now(timezone.utc).isoformat(timespec="seconds")
        stream.write(f"{_COMMENT} generated: {now}\n")
    for note in table.notes:
        stream.write(f"{_COMMENT} {note}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(table.header)
    writer.writerows(_row_cells(row) for row in table.rows)


def read_csv(stream: IO[str]) -> SweepTable:
    """Parse a file written by ``write_csv``."""
    experiment = ""
    notes: List[str] = []
    body: List[str] = []
    for line in stream:
        if not line.startswith(_COMMENT):
            body.append(line)
            continue
        text = line[len(_COMMENT):].strip()
        if text.startswith("experiment: "):
            experiment = text[len("experiment: "):]
        elif not text.startswith("generated: "):
            notes.append(text)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or "n" not in header:
        raise OutputError("CSV file has no sweep header")
    start = header.index("n")
    stop = start + len(FIXED_COLUMNS)
    if tuple(header[start:stop]) != FIXED_COLUMNS:
        raise OutputError(f"unexpected CSV columns {header!r}")
    rows = []
    for cells in reader:
        seed, budget = cells[stop - 2], cells[stop - 1]
        rows.append(
            SweepRow(
                params=[float(x) for x in cells[:start]],
                n=int(cells[start]),
                f_markovian=float(cells[start + 1]),
                f_bayesian=float(cells[start + 2]),
                method=cells[start + 4],
                seed=int(seed) if seed else None,
                budget=int(budget) if budget else None,
                extras=[float(x) for x in cells[stop:]],
            )
        )
    return SweepTable(
        experiment=experiment,
        param_names=header[:start],
        extra_names=header[stop:],
        notes=notes,
        rows=rows,
    )


def write_json(table: SweepTable, stream: IO[str]) -> None:
    """Write the table as one JSON document."""
    stream.write(table.json(indent=2))
    stream.write("\n")


def read_json(stream: IO[str]) -> SweepTable:
    return SweepTable.parse_raw(stream.read())


def render(table: SweepTable, fmt: str, timestamp: bool = True) -> str:
    """Table as CSV or JSON text."""
    buffer = io.StringIO()
    if fmt == "json":
        write_json(table, buffer)
    elif fmt == "csv":
        write_csv(table, buffer, timestamp=timestamp)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    return buffer.getvalue()


def emit(
    table: SweepTable,
    fmt: str,
    out: Optional[Union[str, Path]] = None,
    timestamp: bool = True,
    stream: Optional[IO[str]] = None,
) -> None:
    """Write the table to ``out`` or to ``stream``."""
    text = render(table, fmt, timestamp=timestamp)
    if out is None:
        if stream is not None:
            stream.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {out}: {exc}") from exc
    logger.info(f"wrote {len(table.rows)} rows to {out}")
