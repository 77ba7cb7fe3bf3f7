"""Three-stream data generation and the AIC model-selection experiment.

Cases are drawn from a population-level multinomial over the eight capture
patterns, with cell probabilities built from conditional capture parameters:
the stream-1 marginal, stream-2 conditionals given stream-1 status, and
stream-3 conditionals given each stream-1/stream-2 combination. The stream-3
probability given capture by neither other stream is the inestimable psi.

The selection experiment repeatedly draws a table, fits every model in a
chosen space, selects by AIC, and tallies how often each model wins and what
it estimates when it does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .loglinear import _irls, _map_ordered, aic_tie_set, AIC_TIE_TOL
from .models import ModelSpec, design_matrix, enumerate_all, enumerate_conventional
from .tables import FrequencyTable, observed_labels

__all__ = [
    "ConditionalParams",
    "ScenarioResult",
    "cell_probs",
    "expected_table",
    "draw_table",
    "run_scenario",
    "SCENARIO_PRESETS",
]

_PARAM_KEYS = ("N", "p1", "p2_1", "p2_not1", "p3_12", "p3_1not2", "p3_not12", "psi")


@dataclass(frozen=True)
class ConditionalParams:
    """Population size and conditional capture probabilities for three streams.

    ``psi`` is the stream-3 capture probability among cases missed by both
    other streams; it fixes the otherwise-unidentified all-zero cell.
    """

    population_size: int
    p1: float
    p2_given_1: float
    p2_given_not1: float
    p3_given_12: float
    p3_given_1not2: float
    p3_given_not12: float
    psi: float

    def __post_init__(self) -> None:
        if int(self.population_size) < 1:
            raise ValueError(f"population size must be positive, got {self.population_size}")
        object.__setattr__(self, "population_size", int(self.population_size))
        for name in ("p1", "p2_given_1", "p2_given_not1", "p3_given_12", "p3_given_1not2", "p3_given_not12"):
            v = float(getattr(self, name))
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
            object.__setattr__(self, name, v)
        psi = float(self.psi)
        if not 0.0 < psi <= 1.0:
            raise ValueError(f"psi must lie in (0, 1], got {psi}")
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ConditionalParams":
        missing = [k for k in _PARAM_KEYS if k not in payload]
        if missing:
            raise ValueError(f"scenario config is missing keys: {missing}")
        return cls(
            population_size=payload["N"],
            p1=payload["p1"],
            p2_given_1=payload["p2_1"],
            p2_given_not1=payload["p2_not1"],
            p3_given_12=payload["p3_12"],
            p3_given_1not2=payload["p3_1not2"],
            p3_given_not12=payload["p3_not12"],
            psi=payload["psi"],
        )

    def to_dict(self) -> dict:
        return {
            "N": self.population_size,
            "p1": self.p1,
            "p2_1": self.p2_given_1,
            "p2_not1": self.p2_given_not1,
            "p3_12": self.p3_given_12,
            "p3_1not2": self.p3_given_1not2,
            "p3_not12": self.p3_given_not12,
            "psi": self.psi,
        }


SCENARIO_PRESETS: dict[str, ConditionalParams] = {
    "scenario1": ConditionalParams(5000, 0.3, 0.2, 0.3, 0.8, 0.16, 0.5, 0.1),
    "scenario2": ConditionalParams(5000, 0.3, 0.5, 0.3, 0.35, 0.35, 0.25, 0.4375),
}


def cell_probs(params: ConditionalParams) -> np.ndarray:
    """Probabilities of the eight capture patterns in canonical order.

    Each probability chains the stream-1 marginal, the matching stream-2
    conditional, and the matching stream-3 conditional; the all-zero pattern
    uses 1 - psi, so the eight values always sum to one.
    """
    p1, p21, p2n1 = params.p1, params.p2_given_1, params.p2_given_not1
    p312, p31n2, p3n12, psi = (
        params.p3_given_12,
        params.p3_given_1not2,
        params.p3_given_not12,
        params.psi,
    )
    return np.array(
        [
            p1 * p21 * p312,  # 111
            p1 * p21 * (1 - p312),  # 110
            p1 * (1 - p21) * p31n2,  # 101
            p1 * (1 - p21) * (1 - p31n2),  # 100
            (1 - p1) * p2n1 * p3n12,  # 011
            (1 - p1) * p2n1 * (1 - p3n12),  # 010
            (1 - p1) * (1 - p2n1) * psi,  # 001
            (1 - p1) * (1 - p2n1) * (1 - psi),  # 000
        ]
    )


def expected_table(params: ConditionalParams) -> FrequencyTable:
    """Expected observed cell counts (fractional) at the true parameters."""
    expected = params.population_size * cell_probs(params)[:-1]
    return FrequencyTable(3, dict(zip(observed_labels(3), expected)))


def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    # Substreams keyed by (seed, replicate) make draws independent of how
    # many replicates run or in what order.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def _multinomial_sequential(rng: np.random.Generator, size: int, probs: np.ndarray) -> np.ndarray:
    # Sequential binomial conditioning: exact and portable.
    out = np.zeros(len(probs), dtype=np.int64)
    remaining = size
    prob_left = 1.0
    for i, p in enumerate(probs[:-1]):
        if remaining <= 0 or prob_left <= 0:
            break
        out[i] = rng.binomial(remaining, min(1.0, p / prob_left))
        remaining -= out[i]
        prob_left -= p
    out[-1] = remaining
    return out


def draw_table(params: ConditionalParams, seed: int, replicate: int = 0) -> tuple[FrequencyTable, int]:
    """One multinomial draw: the observed table plus the hidden all-zero count."""
    draw = _multinomial_sequential(_replicate_rng(seed, replicate), params.population_size, cell_probs(params))
    table = FrequencyTable(3, dict(zip(observed_labels(3), draw[:-1].astype(float))))
    return table, int(draw[-1])


@dataclass(frozen=True)
class ScenarioResult:
    """Tally of an AIC selection experiment.

    ``selections`` maps each model (by canonical position in the space) to how
    many replicates it won; with the fractional tie rule a replicate tied
    between several models contributes 1/(tie size) to each. ``mean_n_hat`` is
    each model's average estimate over the replicates it won (tie-weighted).
    Replicates whose winner did not converge are counted in ``failed`` and
    not attributed to any model. Selections plus failures always total
    ``n_replicates``.
    """

    specs: tuple[ModelSpec, ...]
    selections: np.ndarray
    mean_n_hat: np.ndarray
    failed: float
    n_replicates: int
    seed: int
    space: str
    tie_rule: str
    params: ConditionalParams

    def rows(self, include_unselected: bool = False) -> list[dict]:
        out = []
        for i, spec in enumerate(self.specs):
            if self.selections[i] > 0 or include_unselected:
                out.append(
                    {
                        "model_id": i + 1,
                        "terms": spec.label,
                        "p": spec.n_params,
                        "selections": float(self.selections[i]),
                        "mean_n_hat": float(self.mean_n_hat[i]),
                    }
                )
        if self.failed > 0:
            out.append(
                {"model_id": "failed", "terms": "", "p": "", "selections": float(self.failed), "mean_n_hat": math.nan}
            )
        return out


def _select(aic_row: np.ndarray, converged_row: np.ndarray, tie_rule: str, tie_tol: float):
    """Winner indices and weights for one replicate; None marks a failure."""
    finite = np.isfinite(aic_row)
    if not finite.any():
        return None
    best = aic_row[finite].min()
    tie = np.flatnonzero(finite & (aic_row <= best + tie_tol))
    if not converged_row[tie].all():
        return None
    if tie_rule == "strict":
        tie = tie[:1]
    return tie, 1.0 / len(tie)


def run_scenario(
    params: ConditionalParams,
    reps: int,
    *,
    space: str = "all",
    seed: int = 0,
    tie_rule: str = "fractional",
    tie_tol: float = AIC_TIE_TOL,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> ScenarioResult:
    """Draw ``reps`` tables, sweep the model space on each, select by AIC.

    ``space`` is ``"all"`` (127 models) or ``"conventions"`` (8 models).
    ``tie_rule`` is ``"fractional"`` (ties share the replicate) or
    ``"strict"`` (first model in canonical order wins). Results are
    reproducible from (seed, params, reps) alone regardless of CRC_THREADS.
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if tie_rule not in ("fractional", "strict"):
        raise ValueError(f"tie_rule must be 'fractional' or 'strict', got {tie_rule!r}")
    if space == "all":
        specs = enumerate_all(3)
    elif space == "conventions":
        specs = enumerate_conventional(3)
    else:
        raise ValueError(f"space must be 'all' or 'conventions', got {space!r}")

    probs = cell_probs(params)
    counts = np.empty((reps, 7))
    for r in range(reps):
        draw = _multinomial_sequential(_replicate_rng(seed, r), params.population_size, probs)
        counts[r] = draw[:-1]
    n_c = counts.sum(axis=1)

    n_models = len(specs)

    def fit_one_spec(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = design_matrix(spec)
        beta, _, loglik, status, _ = _irls(x, counts, tol=tol, max_iter=max_iter)
        aic = -2.0 * loglik + 2.0 * spec.n_params
        converged = status == 0
        n_hat = np.where(converged, n_c + np.exp(np.minimum(beta[:, 0], 500.0)), np.nan)
        return aic, n_hat, converged

    per_spec = _map_ordered(fit_one_spec, specs)
    aics = np.column_stack([t[0] for t in per_spec])
    n_hats = np.column_stack([t[1] for t in per_spec])
    converged = np.column_stack([t[2] for t in per_spec])

    selections = np.zeros(n_models)
    weighted_sum = np.zeros(n_models)
    failed = 0.0
    for r in range(reps):
        picked = _select(aics[r], converged[r], tie_rule, tie_tol)
        if picked is None:
            failed += 1.0
            continue
        tie, weight = picked
        selections[tie] += weight
        weighted_sum[tie] += weight * n_hats[r, tie]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_n_hat = np.where(selections > 0, weighted_sum / selections, np.nan)

    return ScenarioResult(
        specs=tuple(specs),
        selections=selections,
        mean_n_hat=mean_n_hat,
        failed=failed,
        n_replicates=reps,
        seed=int(seed),
        space=space,
        tie_rule=tie_rule,
        params=params,
    )
