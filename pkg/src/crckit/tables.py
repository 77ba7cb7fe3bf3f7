"""Capture histories and observed frequency tables.

A capture history is the binary pattern of which surveillance streams
identified a case, written as a bit-string such as ``"101"`` (captured by
streams 1 and 3, missed by stream 2). Histories are ordered with ``"1...1"``
first and ``"0...0"`` last. A :class:`FrequencyTable` holds the observed count
for each of the ``2**K - 1`` histories with at least one capture; the count of
cases never captured is unobservable and is never part of the table.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "CaptureHistory",
    "FrequencyTable",
    "lex_histories",
    "lex_labels",
    "observed_labels",
    "last_only_label",
    "n_captured",
]

MIN_STREAMS = 2


def _check_streams(n_streams: int) -> None:
    if isinstance(n_streams, bool) or not isinstance(n_streams, (int, np.integer)):
        raise TypeError(f"stream count must be an integer, got {n_streams!r}")
    if n_streams < MIN_STREAMS:
        raise ValueError(f"need at least {MIN_STREAMS} streams, got {n_streams}")


@dataclass(frozen=True)
class CaptureHistory:
    """Binary capture pattern across K streams, stream 1 first."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < MIN_STREAMS:
            raise ValueError(f"capture history needs at least {MIN_STREAMS} streams: {self.bits!r}")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"capture history bits must be 0 or 1: {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_label(cls, label: str) -> "CaptureHistory":
        if not label or set(label) - {"0", "1"}:
            raise ValueError(f"capture history label must be a non-empty bit-string, got {label!r}")
        return cls(tuple(int(c) for c in label))

    @property
    def n_streams(self) -> int:
        return len(self.bits)

    @property
    def label(self) -> str:
        return "".join(str(b) for b in self.bits)

    @property
    def lex_index(self) -> int:
        """Position in the ordering that puts all-ones first and all-zeros last."""
        return 2 ** self.n_streams - 1 - int(self.label, 2)

    def __str__(self) -> str:
        return self.label


def lex_labels(n_streams: int) -> list[str]:
    """All ``2**K`` history labels, ``"1...1"`` first and ``"0...0"`` last."""
    _check_streams(n_streams)
    return [format(v, f"0{n_streams}b") for v in range(2**n_streams - 1, -1, -1)]


def lex_histories(n_streams: int) -> list[CaptureHistory]:
    """All ``2**K`` capture histories in the canonical order.

    The all-ones history comes first and the all-zero history last; every
    other history sits at the position given by its ``lex_index``.
    """
    return [CaptureHistory.from_label(lab) for lab in lex_labels(n_streams)]


def observed_labels(n_streams: int) -> list[str]:
    """The ``2**K - 1`` observable history labels (all-zero excluded)."""
    return lex_labels(n_streams)[:-1]


def last_only_label(n_streams: int) -> str:
    """Label of the history captured only by the last stream, e.g. ``"001"``."""
    _check_streams(n_streams)
    return "0" * (n_streams - 1) + "1"


def _format_count(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.10g}"


@dataclass(frozen=True)
class FrequencyTable:
    """Observed counts for every capture history with at least one capture.

    Parameters
    ----------
    n_streams:
        Number of surveillance streams K (at least 2).
    counts:
        Mapping from each of the ``2**K - 1`` observable history labels to a
        nonnegative count. Every observable history must be present, and the
        all-zero history must not be. Counts are nonnegative integers in
        ingested surveillance data but may be fractional (expected cells) when
        tables are built programmatically.

    The table is immutable after construction and safe to share between
    threads; treat ``counts`` as read-only.
    """

    n_streams: int
    counts: Mapping[str, float]

    def __post_init__(self) -> None:
        _check_streams(self.n_streams)
        expected = observed_labels(self.n_streams)
        got = {str(k): v for k, v in dict(self.counts).items()}
        zero_label = "0" * self.n_streams
        if zero_label in got:
            raise ValueError(
                f"the all-zero history {zero_label!r} is unobservable and must not appear in a table"
            )
        unknown = sorted(set(got) - set(expected))
        if unknown:
            raise ValueError(f"unknown capture histories for {self.n_streams} streams: {unknown}")
        missing = [lab for lab in expected if lab not in got]
        if missing:
            raise ValueError(f"missing capture histories: {missing}")
        normalized: dict[str, float] = {}
        for lab in expected:
            value = float(got[lab])
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"count for history {lab!r} must be finite and >= 0, got {got[lab]!r}")
            normalized[lab] = value
        object.__setattr__(self, "counts", normalized)

    # -- accessors ---------------------------------------------------------

    def __getitem__(self, history) -> float:
        if isinstance(history, CaptureHistory):
            history = history.label
        elif isinstance(history, (tuple, list)):
            history = "".join(str(int(b)) for b in history)
        return self.counts[history]

    @property
    def labels(self) -> list[str]:
        return list(self.counts)

    @property
    def n_captured(self) -> float:
        """Total number of cases captured at least once."""
        return float(sum(self.counts.values()))

    @property
    def last_only_count(self) -> float:
        """Count of cases captured only by the last stream."""
        return self.counts[last_only_label(self.n_streams)]

    def to_array(self) -> np.ndarray:
        """Observed counts as a vector in the canonical history order."""
        return np.array([self.counts[lab] for lab in observed_labels(self.n_streams)])

    @classmethod
    def from_array(cls, n_streams: int, values: Sequence[float]) -> "FrequencyTable":
        labels = observed_labels(n_streams)
        values = list(values)
        if len(values) != len(labels):
            raise ValueError(f"expected {len(labels)} counts for {n_streams} streams, got {len(values)}")
        return cls(n_streams, dict(zip(labels, values)))

    # -- relabeling --------------------------------------------------------

    def permuted(self, order: Sequence[int]) -> "FrequencyTable":
        """Relabel streams so that new stream j is old stream ``order[j-1]``.

        ``order`` must be a permutation of ``1..K``. Cell counts move with
        their histories, so totals are unchanged.
        """
        order = [int(i) for i in order]
        if sorted(order) != list(range(1, self.n_streams + 1)):
            raise ValueError(f"order must be a permutation of 1..{self.n_streams}, got {order}")
        remapped = {
            "".join(lab[i - 1] for i in order): count for lab, count in self.counts.items()
        }
        return FrequencyTable(self.n_streams, remapped)

    def with_last_stream(self, stream: int) -> "FrequencyTable":
        """Relabel so the given stream (1-based) becomes the last one."""
        if not 1 <= stream <= self.n_streams:
            raise ValueError(f"stream index must be in 1..{self.n_streams}, got {stream}")
        order = [i for i in range(1, self.n_streams + 1) if i != stream] + [stream]
        return self.permuted(order)

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_csv_text(cls, text: str) -> "FrequencyTable":
        reader = csv.reader(io.StringIO(text))
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
        if not rows or [c.strip().lower() for c in rows[0][:2]] != ["history", "count"]:
            raise ValueError("table CSV must start with a 'history,count' header")
        counts: dict[str, float] = {}
        for row in rows[1:]:
            if len(row) < 2:
                raise ValueError(f"malformed table row: {row!r}")
            label = row[0].strip()
            if label in counts:
                raise ValueError(f"duplicate history {label!r} in table")
            try:
                counts[label] = float(row[1])
            except ValueError:
                raise ValueError(f"count for history {label!r} is not a number: {row[1]!r}") from None
        if not counts:
            raise ValueError("table CSV has no data rows")
        n_streams = len(next(iter(counts)))
        return cls(n_streams, counts)

    @classmethod
    def from_json_text(cls, text: str) -> "FrequencyTable":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"table JSON is not valid JSON: {exc}") from None
        if not isinstance(payload, dict) or "streams" not in payload or "counts" not in payload:
            raise ValueError("table JSON must be an object with 'streams' and 'counts' keys")
        return cls(int(payload["streams"]), payload["counts"])

    @classmethod
    def from_file(cls, path) -> "FrequencyTable":
        """Load a table from CSV or JSON, decided by the file suffix."""
        text = open(path, encoding="utf-8").read()
        if str(path).lower().endswith(".json"):
            return cls.from_json_text(text)
        return cls.from_csv_text(text)

    def to_csv_text(self) -> str:
        lines = ["history,count"]
        lines += [f"{lab},{_format_count(cnt)}" for lab, cnt in self.counts.items()]
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        counts = {lab: (int(c) if float(c).is_integer() else c) for lab, c in self.counts.items()}
        return json.dumps({"streams": self.n_streams, "counts": counts}, indent=2) + "\n"

    def save(self, path) -> None:
        text = self.to_json_text() if str(path).lower().endswith(".json") else self.to_csv_text()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def n_captured(table: FrequencyTable) -> float:
    """Number of cases captured by at least one stream (sum of all cells)."""
    return table.n_captured
