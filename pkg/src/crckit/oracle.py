"""Closed-form counterparts of the iterative fitter, for cross-checking.

For two streams every model in the sweep has known closed-form fitted cells,
so the whole fit can be recomputed without iteration. For three streams under
the sweep conventions the projected all-zero cell and the implied last-stream
capture probability are products of fractional powers of the fitted cells;
those functionals are evaluated here (in log space, since cells can span many
orders of magnitude) and compared against the fitter's own intercept-based
values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .loglinear import CONVERGED, FitResult
from .models import ModelSpec, enumerate_all, enumerate_conventional
from .tables import FrequencyTable

__all__ = [
    "TwoStreamOracleRow",
    "ThreeStreamOracleRow",
    "two_stream_row",
    "three_stream_row",
    "oracle_check",
    "ORACLE_RTOL",
]

ORACLE_RTOL = 1e-6


@dataclass(frozen=True)
class TwoStreamOracleRow:
    """Closed-form fit of one two-stream model: cells (11, 10, 01, 00),
    implied psi and phi, and the estimate of N. ``defined`` is False when a
    required observed count is zero."""

    model_id: int
    fitted_cells: tuple[float, float, float, float]
    psi_hat: float
    phi_hat: float
    n_hat: float
    defined: bool = True


@dataclass(frozen=True)
class ThreeStreamOracleRow:
    """Cell-functional results for one conventions model on three streams."""

    model_id: int
    psi_hat: float
    n000_hat: float
    defined: bool = True


def _undefined_two(model_id: int) -> TwoStreamOracleRow:
    nan = math.nan
    return TwoStreamOracleRow(model_id, (nan, nan, nan, nan), nan, nan, nan, defined=False)


def two_stream_row(table: FrequencyTable, model_id: int) -> TwoStreamOracleRow:
    """Closed-form fitted cells and derived estimates for one of the seven
    two-stream models, numbered in canonical sweep order:

    1. intercept only    2. X1        3. X2        4. X1:X2
    5. X1+X2             6. X1+X1:X2  7. X2+X1:X2
    """
    if table.n_streams != 2:
        raise ValueError("two_stream_row needs a two-stream table")
    if model_id not in range(1, 8):
        raise ValueError(f"model_id must be 1..7, got {model_id}")
    n11, n10, n01 = table["11"], table["10"], table["01"]
    n_c = n11 + n10 + n01
    if model_id == 1:
        cells = (n_c / 3, n_c / 3, n_c / 3, n_c / 3)
    elif model_id == 2:
        cells = ((n11 + n10) / 2, (n11 + n10) / 2, n01, n01)
    elif model_id == 3:
        cells = ((n11 + n01) / 2, n10, (n11 + n01) / 2, n10)
    elif model_id == 4:
        cells = (n11, (n10 + n01) / 2, (n10 + n01) / 2, (n10 + n01) / 2)
    elif model_id == 5:
        if n11 <= 0:
            return _undefined_two(model_id)
        cells = (n11, n10, n01, n10 * n01 / n11)
    elif model_id == 6:
        cells = (n11, n10, n01, n01)
    else:
        cells = (n11, n10, n01, n10)
    c11, c10, c01, c00 = cells
    if c01 + c00 <= 0 or c01 <= 0 or c11 + c10 <= 0:
        return _undefined_two(model_id)
    psi = c01 / (c01 + c00)
    phi = c11 * (c01 + c00) / ((c11 + c10) * c01)
    return TwoStreamOracleRow(model_id, cells, psi, phi, n_c + c00)


# Exponents of the fitted observed cells (keyed by history label) in the
# closed-form expressions, per conventions model 1..8. The all-zero projection
# is the signed product; the implied psi is A / (A + B).
_N000_EXPONENTS: Mapping[int, Mapping[str, float]] = {
    1: {"100": 1 / 2, "010": 1 / 2, "001": 1 / 2, "111": -1 / 2},
    2: {"110": 1 / 3, "100": 1 / 3, "010": 1 / 3, "001": 1.0, "111": -1 / 3, "101": -1 / 3, "011": -1 / 3},
    3: {"101": 1 / 3, "100": 1 / 3, "001": 1 / 3, "010": 1.0, "111": -1 / 3, "110": -1 / 3, "011": -1 / 3},
    4: {"011": 1 / 3, "010": 1 / 3, "001": 1 / 3, "100": 1.0, "111": -1 / 3, "110": -1 / 3, "101": -1 / 3},
    5: {"010": 1.0, "001": 1.0, "011": -1.0},
    6: {"100": 1.0, "001": 1.0, "101": -1.0},
    7: {"100": 1.0, "010": 1.0, "110": -1.0},
    8: {"111": 1.0, "100": 1.0, "010": 1.0, "001": 1.0, "110": -1.0, "101": -1.0, "011": -1.0},
}

_PSI_NUMERATOR: Mapping[int, Mapping[str, float]] = {
    1: {"111": 3 / 8, "101": 1 / 4, "011": 1 / 4, "001": 1 / 8},
    2: {"111": 1 / 3, "101": 1 / 3, "011": 1 / 3},
    3: {"111": 1 / 6, "110": 1 / 6, "011": 2 / 3, "001": 1 / 3},
    4: {"111": 1 / 6, "110": 1 / 6, "101": 2 / 3, "001": 1 / 3},
    5: {"011": 1.0},
    6: {"101": 1.0},
    7: {"110": 1.0, "101": 1 / 4, "011": 1 / 4, "001": 3 / 4},
    8: {"110": 1.0, "101": 1.0, "011": 1.0},
}

_PSI_DENOMINATOR: Mapping[int, Mapping[str, float]] = {
    1: {"110": 1 / 4, "100": 3 / 8, "010": 3 / 8},
    2: {"110": 1 / 3, "100": 1 / 3, "010": 1 / 3},
    3: {"101": 1 / 6, "100": 1 / 6, "010": 1.0},
    4: {"100": 1.0, "011": 1 / 6, "010": 1 / 6},
    5: {"010": 1.0},
    6: {"100": 1.0},
    7: {"111": 1 / 4, "100": 1.0, "010": 1.0},
    8: {"111": 1.0, "100": 1.0, "010": 1.0},
}

_OBSERVED_3 = ("111", "110", "101", "100", "011", "010", "001")


def _log_product(log_cells: Mapping[str, float], exponents: Mapping[str, float]) -> float:
    return sum(w * log_cells[lab] for lab, w in exponents.items())


def three_stream_row(fitted_cells: Sequence[float], model_id: int) -> ThreeStreamOracleRow:
    """Projected all-zero cell and implied psi for one conventions model.

    ``fitted_cells`` are the seven fitted observed cells in canonical history
    order (111, 110, 101, 100, 011, 010, 001), normally taken from a converged
    fit of the matching model. Models are numbered 1..8 in canonical order:
    main effects only, then one 2-way term (X1:X2, X1:X3, X2:X3), then two,
    then all three. Any nonpositive cell marks the row undefined.
    """
    if model_id not in range(1, 9):
        raise ValueError(f"model_id must be 1..8, got {model_id}")
    cells = [float(c) for c in fitted_cells]
    if len(cells) != 7:
        raise ValueError(f"expected 7 fitted cells, got {len(cells)}")
    if any(not math.isfinite(c) or c <= 0 for c in cells):
        return ThreeStreamOracleRow(model_id, math.nan, math.nan, defined=False)
    log_cells = {lab: math.log(c) for lab, c in zip(_OBSERVED_3, cells)}
    n000 = math.exp(_log_product(log_cells, _N000_EXPONENTS[model_id]))
    log_num = _log_product(log_cells, _PSI_NUMERATOR[model_id])
    log_den = _log_product(log_cells, _PSI_DENOMINATOR[model_id])
    psi = 1.0 / (1.0 + math.exp(log_den - log_num))
    return ThreeStreamOracleRow(model_id, psi, n000)


def _close(a: float, b: float, rtol: float) -> bool:
    if not (math.isfinite(a) and math.isfinite(b)):
        return False
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def oracle_check(fit: FitResult, table: FrequencyTable, rtol: float = ORACLE_RTOL) -> bool | None:
    """Compare a numeric fit against its closed-form counterpart.

    Returns True/False for two-stream fits (any model) and for three-stream
    fits of conventions models, None when no closed form applies. The model
    is located by its spec, so the result does not depend on which sweep
    produced the fit.
    """
    if fit.status != CONVERGED:
        return None
    k = fit.spec.n_streams
    if k == 2:
        row = two_stream_row(table, enumerate_all(2).index(fit.spec) + 1)
        if not row.defined:
            return None
        cells_ok = all(
            _close(float(a), b, rtol) for a, b in zip(fit.fitted_cells, row.fitted_cells)
        )
        return (
            cells_ok
            and _close(fit.psi_hat, row.psi_hat, rtol)
            and _close(fit.phi_hat, row.phi_hat, rtol)
            and _close(fit.n_hat, row.n_hat, rtol)
        )
    if k == 3:
        conventions = enumerate_conventional(3)
        try:
            oracle_id = conventions.index(fit.spec) + 1
        except ValueError:
            return None
        row = three_stream_row(fit.fitted_cells[:-1], oracle_id)
        if not row.defined:
            return None
        return _close(fit.psi_hat, row.psi_hat, rtol) and _close(
            float(fit.fitted_cells[-1]), row.n000_hat, rtol
        )
    return None
