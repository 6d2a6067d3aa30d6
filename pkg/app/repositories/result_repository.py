"""
Result repository: CSV tables, timing logs, spectrum lists and JSON reports.

Tables and spectra are written so that a re-read reproduces them exactly;
wall-clock timings go to a separate file so result tables stay
byte-identical across runs.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
from pydantic import BaseModel

from core.exceptions import ParseError
from models.report import ResultRow, ResultTable, TimingRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CAPTION_PREFIX = "# caption: "


class ResultRepository:
    """Reads and writes experiment artefacts below one output directory."""

    def __init__(self, root: PathLike):
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    def _target(self, name: PathLike) -> Path:
        path = Path(name)
        if not path.is_absolute():
            path = self._root / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_table(self, table: ResultTable, name: PathLike) -> Path:
        """Write a ResultTable as CSV: optional caption comment, header row, rows by DoF."""
        path = self._target(name)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            if table.caption:
                handle.write(f"{CAPTION_PREFIX}{table.caption}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(table.header())
            for row in table.sorted_rows():
                writer.writerow([row.dof_string, *row.cells, row.inner_avg])
        logger.info(f"Wrote table {path}")
        return path

    def read_table(self, name: PathLike) -> ResultTable:
        path = self._target(name)
        with open(path, "r", encoding="utf-8", newline="") as handle:
            lines = handle.read().splitlines()
        caption = ""
        if lines and lines[0].startswith(CAPTION_PREFIX):
            caption = lines[0][len(CAPTION_PREFIX):]
            lines = lines[1:]
            offset = 2
        else:
            offset = 1
        records = list(csv.reader(lines))
        if not records:
            raise ParseError("empty table", line=offset, path=str(path))
        header = records[0]
        if len(header) < 3 or header[0] != "DoF" or header[-1] != "Inner":
            raise ParseError(f"unexpected table header {header}", line=offset, path=str(path))
        try:
            beta2_list = [float(col.split("=", 1)[1]) for col in header[1:-1]]
        except (IndexError, ValueError) as e:
            raise ParseError(f"bad beta2 column in header: {e}", line=offset, path=str(path)) from e

        rows = []
        for index, record in enumerate(records[1:], start=offset + 1):
            if len(record) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(record)}",
                                 line=index, path=str(path))
            try:
                n, m, ell = (int(part) for part in record[0].split("+"))
            except ValueError as e:
                raise ParseError(f"bad DoF field {record[0]!r}", line=index, path=str(path)) from e
            rows.append(ResultRow(n=n, m=m, ell=ell, cells=record[1:-1], inner_avg=record[-1]))
        return ResultTable(caption=caption, beta2_list=beta2_list, rows=rows)

    def write_timings(self, records: Iterable[TimingRecord], name: PathLike) -> Path:
        path = self._target(name)
        fields = ["bg_cells", "immersed", "beta2", "variant", "dofs", "iterations",
                  "converged", "wall_time", "setup_time", "inner_avg"]
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(fields)
            for rec in records:
                writer.writerow([rec.level[0], rec.level[1], repr(rec.beta2), rec.variant, rec.dofs,
                                 rec.iterations, rec.converged, f"{rec.wall_time:.6f}",
                                 f"{rec.setup_time:.6f}", f"{rec.inner_avg:.3f}"])
        logger.info(f"Wrote timings {path}")
        return path

    def write_spectrum(self, eigenvalues: np.ndarray, name: PathLike,
                       metadata: Optional[Dict[str, object]] = None) -> Path:
        """One ``re,im`` row per eigenvalue after ``# key=value`` metadata lines."""
        path = self._target(name)
        values = np.asarray(eigenvalues, dtype=complex)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            for key, value in sorted((metadata or {}).items()):
                handle.write(f"# {key}={value}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["re", "im"])
            for value in values:
                writer.writerow([repr(float(value.real)), repr(float(value.imag))])
        logger.info(f"Wrote spectrum {path} ({values.size} values)")
        return path

    def read_spectrum(self, name: PathLike) -> np.ndarray:
        path = self._target(name)
        with open(path, "r", encoding="utf-8") as handle:
            lines = [line for line in handle.read().splitlines() if not line.startswith("#")]
        records = list(csv.reader(lines))
        if not records or records[0] != ["re", "im"]:
            raise ParseError("missing re,im header", path=str(path))
        return np.array([complex(float(re), float(im)) for re, im in records[1:]])

    def write_report(self, report: Union[BaseModel, dict, List], name: PathLike) -> Path:
        path = self._target(name)
        if isinstance(report, BaseModel):
            text = report.model_dump_json(indent=2)
        else:
            text = json.dumps(report, indent=2, default=_json_default)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Wrote report {path}")
        return path


def _json_default(value):
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
