"""Log-linear model specifications, design matrices, and model spaces.

A model is identified by its set of interaction terms; the intercept is always
present and is not listed. A term is a nonempty subset of the stream indices
``{1, ..., K}``: singletons are main effects, the full set is the K-way
interaction. Models are ordered canonically by parameter count and then by
term sets, so sweeps and tie reports are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain, combinations
from typing import Iterable, Sequence

import numpy as np

from .tables import _check_streams, observed_labels

__all__ = [
    "ModelSpec",
    "ConventionFlags",
    "usual_conventions",
    "all_terms",
    "design_matrix",
    "is_hierarchical",
    "matches_conventions",
    "enumerate_all",
    "enumerate_conventional",
]

Term = tuple[int, ...]

# Full enumeration has 2**(2**K - 1) - 1 members; beyond four streams the
# model space (2 billion plus) cannot be materialized.
MAX_ENUM_STREAMS = 4


def _term_key(term: Term) -> tuple[int, Term]:
    return (len(term), term)


def term_label(term: Term) -> str:
    return ":".join(f"X{i}" for i in term)


def all_terms(n_streams: int) -> list[Term]:
    """Every nonempty subset of ``{1..K}``, main effects first."""
    _check_streams(n_streams)
    streams = range(1, n_streams + 1)
    terms = chain.from_iterable(combinations(streams, r) for r in range(1, n_streams + 1))
    return sorted(terms, key=_term_key)


@dataclass(frozen=True)
class ModelSpec:
    """One log-linear model: a stream count and a set of interaction terms.

    The spec containing every possible term is rejected: with ``2**K - 1``
    observed cells it has one parameter too many to be identifiable.
    """

    n_streams: int
    terms: tuple[Term, ...] = ()

    def __post_init__(self) -> None:
        _check_streams(self.n_streams)
        seen: set[Term] = set()
        canon: list[Term] = []
        for raw in self.terms:
            term = tuple(sorted(int(i) for i in raw))
            if not term:
                raise ValueError("interaction terms must be nonempty")
            if len(set(term)) != len(term):
                raise ValueError(f"term {raw!r} repeats a stream index")
            if term[0] < 1 or term[-1] > self.n_streams:
                raise ValueError(f"term {raw!r} is not a subset of streams 1..{self.n_streams}")
            if term in seen:
                raise ValueError(f"duplicate term {term_label(term)}")
            seen.add(term)
            canon.append(term)
        if len(canon) >= 2**self.n_streams - 1:
            raise ValueError(
                "a model with every possible term is over-parameterized: "
                f"at most {2**self.n_streams - 2} terms are allowed for {self.n_streams} streams"
            )
        object.__setattr__(self, "terms", tuple(sorted(canon, key=_term_key)))

    @property
    def n_params(self) -> int:
        """Number of coefficients including the intercept."""
        return 1 + len(self.terms)

    @property
    def is_saturated(self) -> bool:
        return self.n_params == 2**self.n_streams - 1

    @property
    def has_k_way_term(self) -> bool:
        return tuple(range(1, self.n_streams + 1)) in self.terms

    @property
    def has_all_main_effects(self) -> bool:
        return all((i,) in self.terms for i in range(1, self.n_streams + 1))

    @property
    def label(self) -> str:
        """Human-readable formula, e.g. ``"X1+X2+X1:X2"``; ``"1"`` if intercept-only."""
        if not self.terms:
            return "1"
        return "+".join(term_label(t) for t in self.terms)

    def sort_key(self):
        return (self.n_params, tuple(_term_key(t) for t in self.terms))


def design_matrix(spec: ModelSpec, include_all_zero: bool = False) -> np.ndarray:
    """0/1 design matrix for a model spec.

    Rows are the observable histories in canonical order (optionally followed
    by the all-zero history); columns are the intercept followed by the terms
    in canonical order. Entry (j, t) is the product over the term's streams of
    the history's capture indicators.
    """
    labels = observed_labels(spec.n_streams)
    if include_all_zero:
        labels = labels + ["0" * spec.n_streams]
    rows = []
    for lab in labels:
        bits = [int(c) for c in lab]
        rows.append([1] + [int(all(bits[i - 1] for i in term)) for term in spec.terms])
    return np.asarray(rows, dtype=float)


def is_hierarchical(spec: ModelSpec) -> bool:
    """True iff every term's nonempty proper subsets are also terms."""
    present = set(spec.terms)
    for term in spec.terms:
        for r in range(1, len(term)):
            for sub in combinations(term, r):
                if sub not in present:
                    return False
    return True


@dataclass(frozen=True)
class ConventionFlags:
    """The customary restrictions applied when sweeping candidate models."""

    drop_k_way: bool = True
    hierarchical: bool = True
    require_main_effects: bool = True


def usual_conventions(n_streams: int) -> ConventionFlags:
    """Standard flags: no K-way term, hierarchy, and (for K > 2) all main effects."""
    _check_streams(n_streams)
    return ConventionFlags(require_main_effects=n_streams > 2)


def matches_conventions(spec: ModelSpec, flags: ConventionFlags) -> bool:
    if flags.drop_k_way and spec.has_k_way_term:
        return False
    if flags.require_main_effects and not spec.has_all_main_effects:
        return False
    if flags.hierarchical and not is_hierarchical(spec):
        return False
    return True


def _check_enumerable(n_streams: int) -> None:
    _check_streams(n_streams)
    if n_streams > MAX_ENUM_STREAMS:
        raise ValueError(
            f"model-space enumeration supports at most {MAX_ENUM_STREAMS} streams: "
            f"{n_streams} streams would give 2**{2**n_streams - 1} - 1 models"
        )


def enumerate_all(n_streams: int) -> list[ModelSpec]:
    """Every identifiable model: all term subsets except the complete one.

    Counts are ``2**(2**K - 1) - 1``: 7 models for two streams, 127 for three,
    32,767 for four. The intercept-only model comes first and the saturated
    models last.
    """
    _check_enumerable(n_streams)
    terms = all_terms(n_streams)
    specs = [
        ModelSpec(n_streams, subset)
        for r in range(len(terms))  # len(terms) excludes the complete set
        for subset in combinations(terms, r)
    ]
    return specs


def enumerate_conventional(n_streams: int, flags: ConventionFlags | None = None) -> list[ModelSpec]:
    """Models satisfying the sweep conventions, in canonical order.

    With the standard flags this gives 8 models for three streams and 113 for
    four. For two streams the literal rule (drop the 2-way term, keep any
    subset of the main effects) yields 4 models.
    """
    _check_enumerable(n_streams)
    if flags is None:
        flags = usual_conventions(n_streams)
    if flags.hierarchical:
        return _enumerate_hierarchical(n_streams, flags)
    return [s for s in enumerate_all(n_streams) if matches_conventions(s, flags)]


def _enumerate_hierarchical(n_streams: int, flags: ConventionFlags) -> list[ModelSpec]:
    # Build downward-closed term families directly instead of filtering the
    # full space: candidate terms are the non-mandatory ones, and a family is
    # kept when each member's proper subsets are all present.
    base: tuple[Term, ...] = ()
    if flags.require_main_effects:
        base = tuple((i,) for i in range(1, n_streams + 1))
    candidates = [
        t
        for t in all_terms(n_streams)
        if t not in base and not (flags.drop_k_way and len(t) == n_streams)
    ]
    specs = []
    for r in range(len(candidates) + 1):
        for subset in combinations(candidates, r):
            family = set(base) | set(subset)
            if len(family) >= 2**n_streams - 1:
                continue
            closed = all(
                sub in family
                for term in subset
                for k in range(1, len(term))
                for sub in combinations(term, k)
            )
            if closed:
                specs.append(ModelSpec(n_streams, tuple(family)))
    return sorted(specs, key=ModelSpec.sort_key)
