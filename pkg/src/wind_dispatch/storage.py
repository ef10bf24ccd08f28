"""Output artifacts on the local filesystem.

Every file is written to a temp file in the same directory and renamed into
place, so an interrupted run never leaves a truncated trace or summary.

Error Handling:
- An output directory that cannot be created raises ConfigError (exit 1)
- Write failures are logged with full context and re-raised
- read_trace raises ConfigError for a missing or malformed CSV, the same
  exit path as an unreadable scenario
"""

import csv
import logging
import math
import traceback
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .trace import SimTrace

logger = logging.getLogger("wind-dispatch")

NUMBER_FORMAT = "%.17g"


def format_value(value) -> str:
    """Key-value rendering: %.17g floats, true/false, n/a for missing."""
    if value is None:
        return "n/a"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "n/a"
        return NUMBER_FORMAT % value
    return str(value)


def render_key_values(values: dict) -> str:
    return "".join(f"{key}={format_value(value)}\n" for key, value in values.items())


class LocalArtifactStore:
    """Writes run artifacts into one output directory."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir).expanduser()
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {self.out_dir}: {e}")
            raise ConfigError(f"cannot create output directory {self.out_dir}: {e}") from e

    def _write_atomic(self, filename: str, content: str) -> Path:
        filepath = self.out_dir / filename
        temp_path = filepath.with_suffix(filepath.suffix + ".tmp")
        try:
            with open(temp_path, "w", encoding="utf-8", newline="") as f:
                f.write(content)
            temp_path.replace(filepath)
            logger.info(f"Wrote {filepath}")
            return filepath
        except PermissionError as e:
            logger.error(f"Permission denied writing to {filepath}: {e}")
            raise
        except Exception as e:
            logger.error(f"Error writing {filepath}: {e}")
            logger.error(f"Traceback:\n{traceback.format_exc()}")
            temp_path.unlink(missing_ok=True)
            raise

    def write_text(self, filename: str, content: str) -> Path:
        return self._write_atomic(filename, content)

    def write_key_values(self, filename: str, values: dict) -> Path:
        return self._write_atomic(filename, render_key_values(values))

    def write_csv(self, filename: str, columns: list[str], rows) -> Path:
        """Header row, then one line per row with every cell formatted %.17g."""
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(_format_cell(cell) for cell in row))
        return self._write_atomic(filename, "\n".join(lines) + "\n")

    def write_trace(self, trace: SimTrace, filename: str = "trace.csv") -> Path:
        return self.write_csv(filename, trace.columns, trace.data)


def _format_cell(cell) -> str:
    if isinstance(cell, str):
        return cell
    return NUMBER_FORMAT % cell


def read_trace(path: Path) -> SimTrace:
    """Load a trace.csv written by write_trace."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            columns = next(reader)
            rows = [[float(cell) for cell in row] for row in reader if row]
    except FileNotFoundError as e:
        raise ConfigError(f"{path}: no such trace file") from e
    except StopIteration as e:
        raise ConfigError(f"{path}: empty trace file") from e
    except ValueError as e:
        raise ConfigError(f"{path}: malformed trace: {e}") from e
    if "t" not in columns or "p_d" not in columns:
        raise ConfigError(f"{path}: not a wind-dispatch trace (missing t or p_d column)")
    if any(len(row) != len(columns) for row in rows):
        raise ConfigError(f"{path}: rows do not match the header width")
    return SimTrace(columns, np.array(rows) if rows else np.empty((0, len(columns))))
