"""Per-iteration run records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

COLUMNS = ("iter", "fit_loss", "ae_loss", "psnr", "ssim", "stale", "wall_ms")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    # repr of a Python float round-trips exactly and never uses a locale
    return repr(float(v))


@dataclass
class RunTrace:
    rows: list[tuple] = field(default_factory=list)

    def append(self, it, fit_loss, ae_loss=None, psnr=None, ssim=None, stale=None, wall_ms=None) -> None:
        if self.rows and it <= self.rows[-1][0]:
            raise ConfigError(f"trace iterations must increase, got {it} after {self.rows[-1][0]}")
        self.rows.append((int(it), fit_loss, ae_loss, psnr, ssim, stale, wall_ms))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = COLUMNS.index(name)
        return np.array([np.nan if r[j] is None else r[j] for r in self.rows], dtype=np.float64)

    @property
    def iters(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows], dtype=np.int64)

    def has_metrics(self) -> bool:
        return bool(self.rows) and all(r[3] is not None and r[4] is not None for r in self.rows)

    @staticmethod
    def format_row(row) -> str:
        return ",".join(_fmt(v) for v in row) + "\n"

    @staticmethod
    def header() -> str:
        return ",".join(COLUMNS) + "\n"

    def to_csv(self, path=None, include_wall: bool = True) -> str:
        """Serialise; ``include_wall=False`` blanks the timing column."""
        buf = io.StringIO()
        buf.write(self.header())
        for r in self.rows:
            buf.write(self.format_row(r if include_wall else r[:-1] + (None,)))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n", encoding="ascii") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        with open(path, newline="", encoding="ascii") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise ConfigError(f"{path}: header must be {','.join(COLUMNS)}, got {header}")
            out = cls()
            for line in reader:
                if not line:
                    continue
                vals = [None if v == "" else float(v) for v in line]
                it, stale = int(vals[0]), vals[5]
                out.append(it, *vals[1:5], None if stale is None else int(stale), vals[6])
        return out
