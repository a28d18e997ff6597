"""Result tables."""
from kraus_feedback.tables.sweep import (
    FIXED_COLUMNS,
    SweepRow,
    SweepTable,
    emit,
    read_csv,
    read_json,
    render,
    round_sig,
    write_csv,
    write_json,
)

__all__ = [
    "FIXED_COLUMNS",
    "SweepRow",
    "SweepTable",
    "emit",
    "read_csv",
    "read_json",
    "render",
    "round_sig",
    "write_csv",
    "write_json",
]
