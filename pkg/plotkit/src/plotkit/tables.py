"""CSV reading with the checks the figure layer relies on.

A table is a header tuple plus float rows.  Reading validates shape
eagerly and names the offending column or row in every error, so a CLI
user sees which header broke instead of a traceback from the plot code.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import PlotError


@dataclass(frozen=True)
class Table:
    """One parsed CSV: column names, float cell values, and the source path."""

    path: str
    columns: tuple
    rows: tuple

    def column(self, name):
        """All values of one column, in row order."""
        idx = self.index(name)
        return [row[idx] for row in self.rows]

    def index(self, name):
        if name not in self.columns:
            raise PlotError(
                f"missing column {name!r} in {self.path}; have {list(self.columns)}"
            )
        return self.columns.index(name)


def read_table(path) -> Table:
    """Parse a CSV file into a Table, rejecting anything malformed.

    Every cell must parse as a number; the error for a bad cell names the
    column header it sits under.  Empty files, header-only files, duplicate
    headers, and ragged rows are all rejected with the file path in the
    message.
    """
    p = Path(path)
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotError(f"empty CSV: {p}")
        if any(not name.strip() for name in header):
            raise PlotError(f"blank column name in header of {p}: {header}")
        if len(set(header)) != len(header):
            raise PlotError(f"duplicate column names in {p}: {header}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise PlotError(
                    f"{p} line {lineno}: {len(raw)} cells under a "
                    f"{len(header)}-column header"
                )
            cells = []
            for name, tok in zip(header, raw):
                try:
                    cells.append(float(tok))
                except ValueError:
                    raise PlotError(
                        f"{p} line {lineno}: column {name!r} has "
                        f"non-numeric cell {tok!r}"
                    )
            rows.append(tuple(cells))
    if not rows:
        raise PlotError(f"no data rows in {p}")
    return Table(path=str(p), columns=tuple(header), rows=tuple(rows))
