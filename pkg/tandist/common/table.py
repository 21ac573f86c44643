from __future__ import annotations

import csv
import math
import shutil
import sys
from numbers import Number
from os import PathLike
from pathlib import Path
from typing import Any, ClassVar, TextIO

from tandist.util import format_float


class Table:
    """Result rows with a fixed column order, rendered to the terminal or exported as CSV.

    Cells are kept as Python values; `None` marks a missing entry (written as an empty CSV field).
    """

    MIN_COLUMN_WIDTH: ClassVar = 2

    def __init__(self, columns: list[str], shrink: bool = True) -> None:
        self._columns = columns
        self._items: list[dict[str, Any]] = []
        self._shrink = shrink

    def __len__(self) -> int:
        return len(self._items)

    @staticmethod
    def format_value(value: Any) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, float):
            return format_float(value)
        return str(value)

    @staticmethod
    def _is_numeric(values: list[Any]) -> bool:
        present = [value for value in values if value is not None]
        return bool(present) and all(isinstance(v, Number) and not isinstance(v, bool) for v in present)

    @staticmethod
    def _fit(text: str, width: int, right: bool) -> str:
        if len(text) > width:
            return text[: width - 1] + "…"
        return text.rjust(width) if right else text.ljust(width)

    def _column_widths(self) -> dict[str, int]:
        widths = {
            col: max([len(col), Table.MIN_COLUMN_WIDTH] + [len(self.format_value(x[col])) for x in self._items])
            for col in self.columns
        }
        if not self._shrink:
            return widths

        # narrow the widest column one character at a time until the row fits the terminal
        terminal_width = shutil.get_terminal_size().columns
        while len(widths) - 1 + sum(widths.values()) > terminal_width:
            width, column = max((width, column) for column, width in widths.items())
            if width <= Table.MIN_COLUMN_WIDTH:
                break
            widths[column] = width - 1
        return widths

    @property
    def columns(self) -> list[str]:
        return self._columns

    @property
    def rows(self) -> list[dict[str, Any]]:
        return list(self._items)

    def column(self, name: str) -> list[Any]:
        return [item[name] for item in self._items]

    def add(self, item: dict[str, Any]) -> None:
        self._items.append({col: item[col] for col in self.columns})

    def sort(self, column: str, desc: bool = False) -> None:
        def _key(item: dict[str, Any]) -> Any:
            value = item[column]
            missing = value is None or (isinstance(value, float) and math.isnan(value))
            return (missing, 0 if missing else value)

        present = sorted(self._items, key=_key, reverse=desc)
        # missing and NaN entries go last in both directions
        self._items = [item for item in present if not _key(item)[0]] + [item for item in present if _key(item)[0]]

    def show(self, output: TextIO | None = None) -> None:
        """Aligned plain-text rendering; numeric columns are right-aligned."""
        output = output or sys.stdout
        widths = self._column_widths()
        numeric = {col: self._is_numeric(self.column(col)) for col in self.columns}

        output.write(" ".join(self._fit(col, widths[col], numeric[col]) for col in self.columns) + "\n")
        output.write(" ".join("=" * widths[col] for col in self.columns) + "\n")
        for item in self._items:
            cells = (self._fit(self.format_value(item[col]), widths[col], numeric[col]) for col in self.columns)
            output.write(" ".join(cells) + "\n")

    def write_csv(self, output: TextIO, preamble: dict[str, Any] | None = None) -> None:
        if preamble:
            output.write("# tandist " + " ".join(f"{key}={value}" for key, value in preamble.items()) + "\n")
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(self.columns)
        for item in self._items:
            writer.writerow([self.format_value(item[col]) for col in self.columns])

    def save_csv(self, path: str | PathLike, preamble: dict[str, Any] | None = None) -> Path:
        """Write the rows to `path`; the preamble becomes a leading `#` comment line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fp:
            self.write_csv(fp, preamble)
        return path
