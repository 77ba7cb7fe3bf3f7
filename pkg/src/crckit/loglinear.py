"""Poisson log-linear fitting over the observed capture-history cells.

Fits ``log E[count] = intercept + term effects`` by iteratively reweighted
least squares on the ``2**K - 1`` observed cells and projects the unobserved
all-zero cell as ``exp(intercept)``. The total case count follows as
``n_captured + exp(intercept)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .models import ModelSpec, design_matrix, enumerate_all, enumerate_conventional, term_label
from .tables import FrequencyTable

__all__ = [
    "FitResult",
    "PoissonLogLinear",
    "fit_poisson",
    "fit_models",
    "fit_all",
    "psi_hat",
    "phi_hat",
    "aic_tie_set",
    "AIC_TIE_TOL",
]

CONVERGED = "converged"
BOUNDARY = "boundary"
RANK_DEFICIENT = "rank_deficient"
FAILED = "failed"

_STATUS_NAMES = {0: CONVERGED, 1: BOUNDARY, 2: RANK_DEFICIENT, 3: FAILED}

# AICs of independently converged fits agree only to optimizer precision, so
# tie detection needs a tolerance rather than exact equality.
AIC_TIE_TOL = 1e-6

_ETA_CEIL = 500.0  # overflow guard only; never binds for realistic counts
_RANK_TOL = 1e-10


def _column_rank(x: np.ndarray) -> int:
    sv = np.linalg.svd(x, compute_uv=False)
    if sv.size == 0:
        return 0
    return int(np.sum(sv > _RANK_TOL * sv[0]))


def _solve_batched(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(a, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(b)
        for i in range(a.shape[0]):
            try:
                out[i] = np.linalg.solve(a[i], b[i])
            except np.linalg.LinAlgError:
                out[i] = np.linalg.lstsq(a[i], b[i], rcond=None)[0]
        return out


def _irls(
    x: np.ndarray,
    counts: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
    eta_floor: float = -30.0,
):
    """Fit independent-Poisson log-linear models for a batch of problems.

    ``x`` has shape (m, p) or (S, m, p) and ``counts`` (m,) or (S, m); the two
    are broadcast against each other. Returns coefficient matrix (S, p),
    linear predictors (S, m), log-likelihoods (S,), integer status codes (S,)
    and the iteration count.
    """
    x = np.asarray(x, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if x.ndim == 2:
        x = x[None, :, :]
    if counts.ndim == 1:
        counts = counts[None, :]
    n_batch = max(x.shape[0], counts.shape[0])
    x = np.broadcast_to(x, (n_batch,) + x.shape[1:])
    counts = np.broadcast_to(counts, (n_batch, x.shape[1]))

    lgamma_term = gammaln(counts + 1.0).sum(axis=1)

    mu = counts + 0.5
    eta = np.log(mu)
    loglik = np.full(n_batch, -np.inf)
    delta = np.full(n_batch, np.inf)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        z = eta + (counts - mu) / mu
        a = np.einsum("smp,sm,smq->spq", x, mu, x)
        b = np.einsum("smp,sm->sp", x, mu * z)
        beta = _solve_batched(a, b)
        eta = np.einsum("smp,sp->sm", x, beta)
        eta_c = np.clip(eta, eta_floor, _ETA_CEIL)
        mu = np.exp(eta_c)
        new_loglik = (counts * eta_c - mu).sum(axis=1) - lgamma_term
        delta = np.abs(2.0 * (new_loglik - loglik))
        loglik = new_loglik
        # Absolute deviance-change criterion, with a stall guard at the
        # floating-point resolution of the deviance itself.
        if np.all(delta <= np.maximum(tol, 8 * np.finfo(float).eps * np.abs(2 * loglik))):
            break

    at_floor = (eta < eta_floor).any(axis=1)
    converged = delta <= np.maximum(tol, 8 * np.finfo(float).eps * np.abs(2 * loglik))
    status = np.where(at_floor, 1, np.where(converged, 0, 3)).astype(np.int8)
    return beta, np.clip(eta, eta_floor, _ETA_CEIL), loglik, status, n_iter


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of fitting one log-linear model to one frequency table.

    ``fitted_cells`` covers all ``2**K`` histories in canonical order; the
    last entry is the projected all-zero cell ``exp(intercept)``. ``n_hat``,
    ``psi_hat`` and ``phi_hat`` are NaN unless the fit converged; ``phi_hat``
    is only defined for two streams.
    """

    spec: ModelSpec
    intercept: float
    coef: np.ndarray
    fitted_cells: np.ndarray
    loglik: float
    aic: float
    bic: float
    n_hat: float
    psi_hat: float
    phi_hat: float
    status: str
    n_captured: float
    n_iter: int

    @property
    def coefficients(self) -> dict[str, float]:
        """Mapping from term label (plus ``"intercept"``) to coefficient."""
        out = {"intercept": self.intercept}
        out.update({term_label(t): c for t, c in zip(self.spec.terms, self.coef)})
        return out

    @property
    def observed_fitted(self) -> np.ndarray:
        return self.fitted_cells[:-1]


def _psi_from_cells(cells: np.ndarray) -> float:
    # cells in canonical order: the last-stream-only cell is second to last,
    # the projected all-zero cell last.
    last_only = cells[-2]
    zero = cells[-1]
    denom = last_only + zero
    if denom <= 0 or not math.isfinite(denom):
        return math.nan
    return float(last_only / denom)


def _phi_from_cells(cells: np.ndarray) -> float:
    c11, c10, c01, c00 = cells
    if c01 <= 0 or (c11 + c10) <= 0:
        return math.nan
    return float(c11 * (c01 + c00) / ((c11 + c10) * c01))


def _nan_result(spec: ModelSpec, n_c: float, status: str) -> FitResult:
    k = spec.n_streams
    return FitResult(
        spec=spec,
        intercept=math.nan,
        coef=np.full(len(spec.terms), math.nan),
        fitted_cells=np.full(2**k, math.nan),
        loglik=math.nan,
        aic=math.nan,
        bic=math.nan,
        n_hat=math.nan,
        psi_hat=math.nan,
        phi_hat=math.nan,
        status=status,
        n_captured=n_c,
        n_iter=0,
    )


def _assemble_result(
    spec: ModelSpec,
    n_c: float,
    x_full: np.ndarray,
    beta: np.ndarray,
    loglik: float,
    status_code: int,
    n_iter: int,
    eta_floor: float,
    bic_sample_size: int | None,
) -> FitResult:
    k = spec.n_streams
    m = 2**k - 1
    status = _STATUS_NAMES[int(status_code)]
    eta_full = x_full @ beta
    cells = np.exp(np.clip(eta_full, eta_floor, _ETA_CEIL))
    cells[-1] = np.exp(min(beta[0], _ETA_CEIL))
    p = spec.n_params
    aic = -2.0 * loglik + 2.0 * p
    bic = -2.0 * loglik + p * math.log(bic_sample_size if bic_sample_size else m)
    if status == CONVERGED:
        n_hat = n_c + float(cells[-1])
        psi = _psi_from_cells(cells)
        phi = _phi_from_cells(cells) if k == 2 else math.nan
    else:
        n_hat = psi = phi = math.nan
    return FitResult(
        spec=spec,
        intercept=float(beta[0]),
        coef=np.asarray(beta[1:], dtype=float),
        fitted_cells=cells,
        loglik=float(loglik),
        aic=float(aic),
        bic=float(bic),
        n_hat=float(n_hat),
        psi_hat=float(psi),
        phi_hat=float(phi),
        status=status,
        n_captured=n_c,
        n_iter=n_iter,
    )


def _check_estimable(table: FrequencyTable) -> float:
    n_c = table.n_captured
    if n_c < 1:
        raise ValueError("estimation needs at least one captured case")
    return n_c


class PoissonLogLinear(BaseEstimator):
    """Poisson log-linear estimator for one capture-history model.

    Parameters
    ----------
    terms : sequence of tuples of int
        Interaction terms as 1-based stream index tuples, e.g.
        ``[(1,), (2,), (1, 2)]``. The intercept is implicit. An empty
        sequence fits the intercept-only model.
    tol : float
        Convergence threshold on the absolute deviance change.
    max_iter : int
        Iteration cap; exceeding it marks the fit ``"failed"``.
    eta_floor : float
        Lower clamp on observed-cell linear predictors. A fit pushed to the
        clamp (a fitted cell driven to zero) is marked ``"boundary"`` and its
        ``n_hat_``/``psi_hat_`` are NaN.
    bic_sample_size : int or None
        Sample size used in the BIC penalty; defaults to the number of
        observed cells ``2**K - 1``.

    Attributes
    ----------
    intercept_, coef_, fitted_cells_, loglik_, aic_, bic_, n_hat_, psi_hat_,
    phi_hat_, status_, n_streams_, n_captured_ : set after :meth:`fit`.
    """

    def __init__(self, terms=(), *, tol=1e-10, max_iter=100, eta_floor=-30.0, bic_sample_size=None):
        self.terms = terms
        self.tol = tol
        self.max_iter = max_iter
        self.eta_floor = eta_floor
        self.bic_sample_size = bic_sample_size

    def fit(self, table: FrequencyTable, y=None):
        """Fit the model to an observed frequency table and return self."""
        result = fit_poisson(
            table,
            ModelSpec(table.n_streams, tuple(tuple(t) for t in self.terms)),
            tol=self.tol,
            max_iter=self.max_iter,
            eta_floor=self.eta_floor,
            bic_sample_size=self.bic_sample_size,
        )
        self.result_ = result
        self.spec_ = result.spec
        self.intercept_ = result.intercept
        self.coef_ = result.coef
        self.fitted_cells_ = result.fitted_cells
        self.loglik_ = result.loglik
        self.aic_ = result.aic
        self.bic_ = result.bic
        self.n_hat_ = result.n_hat
        self.psi_hat_ = result.psi_hat
        self.phi_hat_ = result.phi_hat
        self.status_ = result.status
        self.n_streams_ = result.spec.n_streams
        self.n_captured_ = result.n_captured
        return self

    def predict(self, histories) -> np.ndarray:
        """Fitted expected counts for the given history labels."""
        if not hasattr(self, "result_"):
            raise NotFittedError("PoissonLogLinear must be fitted before calling predict")
        from .tables import lex_labels

        index = {lab: i for i, lab in enumerate(lex_labels(self.n_streams_))}
        rows = []
        for h in histories:
            lab = h.label if hasattr(h, "label") else "".join(str(int(b)) for b in h) if not isinstance(h, str) else h
            rows.append(self.fitted_cells_[index[lab]])
        return np.asarray(rows)


def fit_poisson(
    table: FrequencyTable,
    spec: ModelSpec,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
    eta_floor: float = -30.0,
    bic_sample_size: int | None = None,
) -> FitResult:
    """Maximum-likelihood fit of one log-linear model to one table."""
    if spec.n_streams != table.n_streams:
        raise ValueError(f"spec is for {spec.n_streams} streams but table has {table.n_streams}")
    n_c = _check_estimable(table)
    x = design_matrix(spec)
    if _column_rank(x) < x.shape[1]:
        return _nan_result(spec, n_c, RANK_DEFICIENT)
    beta, _, loglik, status, n_iter = _irls(
        x, table.to_array(), tol=tol, max_iter=max_iter, eta_floor=eta_floor
    )
    x_full = design_matrix(spec, include_all_zero=True)
    return _assemble_result(
        spec, n_c, x_full, beta[0], float(loglik[0]), int(status[0]), n_iter, eta_floor, bic_sample_size
    )


def _worker_count() -> int:
    raw = os.environ.get("CRC_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(func, items: Sequence):
    """Apply ``func`` over items, fanning out to threads when CRC_THREADS > 1.

    Work is chunked identically regardless of the worker count, so results
    are the same whether or not threads are used.
    """
    workers = _worker_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def fit_models(
    table: FrequencyTable,
    specs: Sequence[ModelSpec],
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
    eta_floor: float = -30.0,
    bic_sample_size: int | None = None,
) -> list[FitResult]:
    """Fit many models to one table.

    Models with equal parameter counts are fitted as one batched IRLS problem;
    batches use a fixed chunk size so results do not depend on CRC_THREADS.
    """
    n_c = _check_estimable(table)
    counts = table.to_array()
    groups: dict[int, list[int]] = {}
    for i, spec in enumerate(specs):
        if spec.n_streams != table.n_streams:
            raise ValueError(f"spec {spec.label} is for {spec.n_streams} streams but table has {table.n_streams}")
        groups.setdefault(spec.n_params, []).append(i)

    chunk_size = 1024
    chunks: list[list[int]] = []
    for p in sorted(groups):
        idx = groups[p]
        chunks += [idx[j : j + chunk_size] for j in range(0, len(idx), chunk_size)]

    def run_chunk(chunk: list[int]) -> list[tuple[int, FitResult]]:
        designs = [design_matrix(specs[i]) for i in chunk]
        out: list[tuple[int, FitResult]] = []
        ok = [j for j, x in enumerate(designs) if _column_rank(x) == x.shape[1]]
        for j in set(range(len(chunk))) - set(ok):
            out.append((chunk[j], _nan_result(specs[chunk[j]], n_c, RANK_DEFICIENT)))
        if ok:
            x_batch = np.stack([designs[j] for j in ok])
            beta, _, loglik, status, n_iter = _irls(
                x_batch, counts, tol=tol, max_iter=max_iter, eta_floor=eta_floor
            )
            for row, j in enumerate(ok):
                i = chunk[j]
                x_full = design_matrix(specs[i], include_all_zero=True)
                out.append(
                    (
                        i,
                        _assemble_result(
                            specs[i],
                            n_c,
                            x_full,
                            beta[row],
                            float(loglik[row]),
                            int(status[row]),
                            n_iter,
                            eta_floor,
                            bic_sample_size,
                        ),
                    )
                )
        return out

    results: list[FitResult | None] = [None] * len(specs)
    for pairs in _map_ordered(run_chunk, chunks):
        for i, res in pairs:
            results[i] = res
    return results  # type: ignore[return-value]


def fit_all(table: FrequencyTable, space: str = "all", **options) -> list[FitResult]:
    """Sweep a whole model space ("all" or "conventions") over one table."""
    if space == "all":
        specs = enumerate_all(table.n_streams)
    elif space == "conventions":
        specs = enumerate_conventional(table.n_streams)
    else:
        raise ValueError(f"space must be 'all' or 'conventions', got {space!r}")
    return fit_models(table, specs, **options)


def psi_hat(fit: FitResult) -> float:
    """Last-stream conditional capture probability implied by a fit.

    The ratio of the fitted last-stream-only cell to that cell plus the
    projected all-zero cell. NaN when the fit sits on the zero-cell boundary.
    """
    if fit.status in (RANK_DEFICIENT, FAILED):
        raise ValueError(f"psi_hat is unavailable for a fit with status {fit.status!r}")
    return fit.psi_hat


def phi_hat(fit: FitResult) -> float:
    """Two-stream dependence ratio implied by a fit (capture probability of
    stream 2 given capture by stream 1, relative to given no capture)."""
    if fit.spec.n_streams != 2:
        raise ValueError("phi_hat is defined for two-stream fits only")
    if fit.status in (RANK_DEFICIENT, FAILED):
        raise ValueError(f"phi_hat is unavailable for a fit with status {fit.status!r}")
    return fit.phi_hat


def aic_tie_set(fits: Iterable[FitResult], tol: float = AIC_TIE_TOL) -> list[int]:
    """Indices of the AIC-minimizing fits, ties included.

    Fits without a finite AIC never qualify. Empty when no fit has one.
    """
    aics = np.array([f.aic for f in fits])
    finite = np.isfinite(aics)
    if not finite.any():
        return []
    best = aics[finite].min()
    return [i for i, a in enumerate(aics) if np.isfinite(a) and a <= best + tol]
