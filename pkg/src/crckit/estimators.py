"""Conditional maximum-likelihood estimators of the total case count.

The observed cells identify the total N only once one pins down an
inestimable dependency parameter: psi, the probability of capture by the last
stream given no capture by any other stream, or (for two streams) phi, the
ratio of stream-2 capture probabilities given capture versus non-capture by
stream 1. Every feasible psi (or phi) value yields the same maximized
likelihood, so the estimates trace out a continuum rather than a point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .loglinear import CONVERGED, FitResult
from .tables import FrequencyTable

__all__ = [
    "CurvePoint",
    "OverlayPoint",
    "CurveResult",
    "mle_psi_two",
    "mle_phi_two",
    "mle_psi_k",
    "var_psi_k",
    "feasible_phi_lb",
    "psi_for_phi",
    "wald_interval",
    "curve",
    "conditional_loglik_two",
    "ON_CURVE_RTOL",
]

# Separates exact algebraic coincidence with the continuum from numeric noise.
ON_CURVE_RTOL = 1e-6

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def _check_psi(psi: float) -> float:
    psi = float(psi)
    if not 0.0 < psi <= 1.0:
        raise ValueError(f"psi must lie in (0, 1], got {psi}")
    return psi


def _require_two_streams(table: FrequencyTable, what: str) -> None:
    if table.n_streams != 2:
        raise ValueError(f"{what} is defined for two-stream tables only")


def mle_psi_two(table: FrequencyTable, psi: float) -> float:
    """Two-stream estimate of N given psi: n11 + n10 + n01 / psi."""
    _require_two_streams(table, "mle_psi_two")
    psi = _check_psi(psi)
    return table["11"] + table["10"] + table["01"] / psi


def feasible_phi_lb(table: FrequencyTable) -> float:
    """Smallest phi for which the estimate of N is at least the number captured.

    Equals n11 / (n11 + n10); at this value ``mle_phi_two`` returns exactly
    the captured count.
    """
    _require_two_streams(table, "feasible_phi_lb")
    n11, n10 = table["11"], table["10"]
    if n11 <= 0:
        raise ValueError("the phi bound needs n11 > 0")
    return n11 / (n11 + n10)


def mle_phi_two(table: FrequencyTable, phi: float) -> float:
    """Two-stream estimate of N given phi: n11 + n10 + n01 (n11 + n10) phi / n11."""
    _require_two_streams(table, "mle_phi_two")
    phi = float(phi)
    lb = feasible_phi_lb(table)
    if phi < lb * (1 - 1e-12):
        raise ValueError(f"phi = {phi} is below the feasible lower bound {lb}")
    n11, n10, n01 = table["11"], table["10"], table["01"]
    return n11 + n10 + n01 * (n11 + n10) * phi / n11


def mle_psi_k(table: FrequencyTable, psi: float) -> float:
    """K-stream estimate of N given psi.

    Sums the observed cells other than the last-stream-only one and adds that
    cell inflated by 1/psi. Reduces to :func:`mle_psi_two` when K = 2.
    """
    psi = _check_psi(psi)
    last_only = table.last_only_count
    return (table.n_captured - last_only) + last_only / psi


def var_psi_k(table: FrequencyTable, psi: float) -> float:
    """Variance of the psi-conditional estimate: (1 - psi) / psi**2 times the
    last-stream-only count."""
    psi = _check_psi(psi)
    return (1.0 - psi) / psi**2 * table.last_only_count


def wald_interval(n_hat: float, variance: float, z: float = Z_95) -> tuple[float, float]:
    half = z * math.sqrt(variance)
    return (n_hat - half, n_hat + half)


def psi_for_phi(table: FrequencyTable, phi: float) -> float:
    """The psi value giving the same estimate of N as the supplied phi.

    Equating the two conditional estimators gives psi = n11 / ((n11 + n10) phi).
    """
    _require_two_streams(table, "psi_for_phi")
    n11, n10 = table["11"], table["10"]
    if n11 <= 0:
        raise ValueError("psi_for_phi needs n11 > 0")
    return n11 / ((n11 + n10) * float(phi))


@dataclass(frozen=True)
class CurvePoint:
    """One sample of the estimate continuum."""

    param: float
    n_hat: float
    variance: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class OverlayPoint:
    """One fitted model placed against the continuum."""

    model_id: int
    label: str
    param_hat: float
    n_hat: float
    aic: float
    on_curve: bool
    status: str


@dataclass(frozen=True)
class CurveResult:
    kind: str
    points: tuple[CurvePoint, ...]
    overlay: tuple[OverlayPoint, ...]
    grid_lo: float
    grid_hi: float
    grid_size: int


def _curve_value(table: FrequencyTable, kind: str, value: float) -> float:
    if kind == "psi":
        return mle_psi_k(table, value)
    return mle_phi_two(table, value)


def _grid(table: FrequencyTable, kind: str, lo, hi, step, num) -> np.ndarray:
    if kind == "psi":
        lo = max(0.01, lo) if lo is not None else 0.01
        hi = 1.0 if hi is None else float(hi)
        if not 0.0 < lo <= 1.0 or not 0.0 < hi <= 1.0:
            raise ValueError(f"psi grid must lie within (0, 1], got [{lo}, {hi}]")
    elif kind == "phi":
        bound = feasible_phi_lb(table)
        if lo is None:
            lo = bound
        elif lo < bound * (1 - 1e-12):
            raise ValueError(
                f"phi grid start {lo} is below the feasible range [{bound:.10g}, inf)"
            )
        if hi is None:
            hi = 3.0 * bound * max(5.0, table.n_captured / table["11"])
    else:
        raise ValueError(f"curve kind must be 'psi' or 'phi', got {kind!r}")
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise ValueError(f"grid upper bound {hi} is below lower bound {lo}")
    if step is not None:
        values = np.arange(lo, hi + float(step) / 2, float(step))
    else:
        values = np.linspace(lo, hi, int(num))
    if values.size == 0:
        raise ValueError("curve grid is empty")
    return values


def curve(
    table: FrequencyTable,
    kind: str = "psi",
    *,
    lo: float | None = None,
    hi: float | None = None,
    step: float | None = None,
    num: int = 200,
    fits: Sequence[FitResult] | Iterable[FitResult] = (),
    on_curve_rtol: float = ON_CURVE_RTOL,
) -> CurveResult:
    """Sample the conditional-estimate continuum, with fitted-model overlays.

    For each grid value the point carries the estimate of N, its variance and
    a 95% interval (phi points use the psi value giving the same estimate).
    Each supplied fit becomes an overlay record at its own implied parameter
    value; ``on_curve`` marks fits whose estimate agrees with the continuum at
    that value to relative ``on_curve_rtol``.
    """
    if kind == "phi":
        _require_two_streams(table, "a phi curve")
    values = _grid(table, kind, lo, hi, step, num)
    points = []
    for v in values:
        n_hat = _curve_value(table, kind, float(v))
        psi_equiv = float(v) if kind == "psi" else min(1.0, psi_for_phi(table, v))
        variance = var_psi_k(table, psi_equiv)
        ci_lo, ci_hi = wald_interval(n_hat, variance)
        points.append(CurvePoint(float(v), n_hat, variance, ci_lo, ci_hi))

    overlay = []
    for model_id, fit in enumerate(fits, start=1):
        param = fit.psi_hat if kind == "psi" else fit.phi_hat
        on = False
        if fit.status == CONVERGED and math.isfinite(param) and math.isfinite(fit.n_hat):
            try:
                expected = _curve_value(table, kind, param)
                on = abs(fit.n_hat - expected) / abs(fit.n_hat) < on_curve_rtol
            except ValueError:
                on = False  # implied parameter outside the feasible range
        overlay.append(
            OverlayPoint(model_id, fit.spec.label, float(param), fit.n_hat, fit.aic, on, fit.status)
        )
    return CurveResult(
        kind=kind,
        points=tuple(points),
        overlay=tuple(overlay),
        grid_lo=float(values[0]),
        grid_hi=float(values[-1]),
        grid_size=int(values.size),
    )


def conditional_loglik_two(table: FrequencyTable, psi: float) -> float:
    """Observed-data multinomial log-likelihood along the psi continuum.

    Reconstructs the three capture-pattern probabilities implied by the
    estimate at the given psi, conditions on being captured at all, and
    evaluates the observed counts against them. The result is constant in psi:
    every feasible psi explains the observed data equally well.
    """
    _require_two_streams(table, "conditional_loglik_two")
    psi = _check_psi(psi)
    n11, n10, n01 = table["11"], table["10"], table["01"]
    n_hat = mle_psi_two(table, psi)
    p1 = (n11 + n10) / n_hat
    p2_given_1 = n11 / (n11 + n10)
    p11 = p1 * p2_given_1
    p10 = p1 * (1 - p2_given_1)
    p01 = (1 - p1) * psi
    p00 = (1 - p1) * (1 - psi)
    captured = 1.0 - p00
    total = 0.0
    for n, p in ((n11, p11), (n10, p10), (n01, p01)):
        if n > 0:
            total += n * math.log(p / captured)
    return total
