"""Per-epoch (or per-sweep-point) experiment logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class RecordRow:
    index: float
    e0: float
    e_r: float
    total: float
    test_error: float = math.nan
    ber: float = math.nan
    tag: str | None = None


@dataclass
class ExperimentRecord:
    """Rows of (index, E0, E_R, total, test_error, BER).

    ``index_name`` is ``"epoch"`` for training logs and ``"alpha"`` for
    pruning sweeps. ``tag`` distinguishes rows of a multi-series sweep.
    """

    index_name: str = "epoch"
    rows: list[RecordRow] = field(default_factory=list)

    def append(self, *args, **kwargs):
        self.rows.append(RecordRow(*args, **kwargs))

    def extend(self, other: "ExperimentRecord"):
        self.rows.extend(other.rows)

    def column(self, name):
        return [getattr(row, name) for row in self.rows]

    def __len__(self):
        return len(self.rows)

    @property
    def last(self) -> RecordRow:
        return self.rows[-1]
