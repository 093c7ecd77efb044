"""Agreement statistics between automated and human audit labels."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Optional, Sequence

from scipy import stats as _sps

from .domain import (
    CLASSES,
    SENSES,
    Classification,
    LandisKochBand,
    Sense,
    interpret_kappa,
)

Z_95 = 1.959963984540054

DISAGREEMENT_FACTORS = ("lighting", "ambiguity", "temporary", "out_of_range", "other")
FACTOR_LABELS = {
    "lighting": "Inadequate lighting conditions",
    "ambiguity": "Contextual ambiguity",
    "temporary": "Temporary variations",
    "out_of_range": "Elements out of visual range",
    "other": "Other factors",
}


class UndefinedKappa(ArithmeticError):
    """Chance agreement is 1, so kappa has a zero denominator."""


@dataclass(frozen=True)
class LabelPair:
    system: Hashable
    human: Hashable
    context: Optional[str] = None


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed [system][human] over ``labels``."""

    labels: tuple
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        k = len(self.labels)
        if len(self.counts) != k or any(len(row) != k for row in self.counts):
            raise ValueError("counts must be a square matrix matching labels")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_counts(cls, counts: Sequence[Sequence[int]], labels: Sequence = CLASSES) -> "ConfusionMatrix":
        return cls(tuple(labels), tuple(tuple(int(c) for c in row) for row in counts))

    @property
    def n(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    @property
    def col_totals(self) -> tuple[int, ...]:
        return tuple(sum(col) for col in zip(*self.counts))

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.labels)))

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.labels, tuple(zip(*self.counts)))

    def cell(self, system: Hashable, human: Hashable) -> int:
        return self.counts[self.labels.index(system)][self.labels.index(human)]


def build_matrix(pairs: Iterable[LabelPair | tuple], labels: Sequence = CLASSES) -> ConfusionMatrix:
    labels = tuple(labels)
    index = {label: i for i, label in enumerate(labels)}
    grid = [[0] * len(labels) for _ in labels]
    seen = 0
    for pair in pairs:
        system, human = (pair.system, pair.human) if isinstance(pair, LabelPair) else pair
        try:
            grid[index[system]][index[human]] += 1
        except KeyError:
            raise ValueError(f"label outside {labels}: {system!r}/{human!r}") from None
        seen += 1
    if not seen:
        raise ValueError("cannot build a confusion matrix from no pairs")
    return ConfusionMatrix(labels, tuple(map(tuple, grid)))


@dataclass(frozen=True)
class AgreementResult:
    p_observed: Fraction
    p_expected: Fraction
    kappa_exact: Fraction
    ci_low: float
    ci_high: float
    ci_method: str
    n: int

    @property
    def kappa(self) -> float:
        return float(self.kappa_exact)

    @property
    def interpretation(self) -> LandisKochBand:
        return interpret_kappa(self.kappa)


def agreement_fractions(matrix: ConfusionMatrix) -> tuple[Fraction, Fraction]:
    n = matrix.n
    if n < 1:
        raise ValueError("matrix is empty")
    p_o = Fraction(matrix.trace, n)
    p_e = Fraction(sum(r * c for r, c in zip(matrix.row_totals, matrix.col_totals)), n * n)
    return p_o, p_e


def _clip(x: float) -> float:
    return min(1.0, max(-1.0, x))


def cohen_kappa(matrix: ConfusionMatrix, ci_method: str = "asymptotic") -> AgreementResult:
    """Cohen's kappa with an asymptotic 95% interval.

    kappa = (p_o - p_e) / (1 - p_e); se = sqrt(p_o (1 - p_o) / (n (1 - p_e)^2)).
    """
    if ci_method != "asymptotic":
        raise ValueError("a single matrix only supports the asymptotic interval; "
                         "use kappa_by_sense for mean_of_groups")
    p_o, p_e = agreement_fractions(matrix)
    if p_e == 1:
        raise UndefinedKappa("expected agreement is 1; kappa is undefined for this matrix")
    kappa = (p_o - p_e) / (1 - p_e)
    n = matrix.n
    se = math.sqrt(float(p_o * (1 - p_o) / (n * (1 - p_e) ** 2)))
    k = float(kappa)
    return AgreementResult(p_o, p_e, kappa, _clip(k - Z_95 * se), _clip(k + Z_95 * se), "asymptotic", n)


@dataclass(frozen=True)
class ClassMetrics:
    labels: tuple
    precision: tuple[Optional[float], ...]
    sensitivity: tuple[Optional[float], ...]
    overall_accuracy: float

    def as_dict(self) -> dict:
        return {
            str(getattr(lab, "value", lab)): {"precision": p, "sensitivity": s}
            for lab, p, s in zip(self.labels, self.precision, self.sensitivity)
        }


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def class_metrics(matrix: ConfusionMatrix) -> ClassMetrics:
    """Per-class precision (by system row) and sensitivity (by human column).

    A class with an empty marginal gets ``None`` rather than 0 or 1.
    """
    if matrix.n < 1:
        raise ValueError("matrix is empty")
    diag = [matrix.counts[i][i] for i in range(len(matrix.labels))]
    return ClassMetrics(
        matrix.labels,
        tuple(_ratio(d, r) for d, r in zip(diag, matrix.row_totals)),
        tuple(_ratio(d, c) for d, c in zip(diag, matrix.col_totals)),
        matrix.trace / matrix.n,
    )


@dataclass(frozen=True)
class GroupCI:
    low: float
    high: float
    critical: str  # "t" or "z"
    multiplier: float


@dataclass(frozen=True)
class SenseKappaSummary:
    per_sense: Mapping[Sense, AgreementResult]
    mean: float
    sd: float
    ci_t: GroupCI
    ci_z: GroupCI

    @property
    def interpretation(self) -> LandisKochBand:
        return interpret_kappa(self.mean)


def mean_of_groups_ci(values: Sequence[float], critical: str = "t") -> GroupCI:
    """mean +/- q * s / sqrt(g) over per-group kappas (q from t(g-1) or z)."""
    g = len(values)
    if g < 2:
        raise ValueError("need at least two groups")
    mean = math.fsum(values) / g
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (g - 1))
    if critical == "t":
        q = float(_sps.t.ppf(0.975, g - 1))
    elif critical == "z":
        q = Z_95
    else:
        raise ValueError(f"critical must be 't' or 'z', got {critical!r}")
    half = q * sd / math.sqrt(g)
    return GroupCI(mean - half, mean + half, critical, q)


SCORE_LABELS = (0, 1, 2, 3, 4, 5)


def kappa_by_sense(
    groups: Mapping[Sense, Iterable[LabelPair | tuple]],
    labels: Sequence = SCORE_LABELS,
) -> SenseKappaSummary:
    """Kappa for each sense's (system score, human score) pairs, plus their mean."""
    per_sense = {}
    for sense in SENSES:
        if sense not in groups:
            raise ValueError(f"no pairs for {sense.title}")
        per_sense[sense] = cohen_kappa(build_matrix(groups[sense], labels))
    values = [per_sense[s].kappa for s in SENSES]
    mean = math.fsum(values) / len(values)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
    return SenseKappaSummary(per_sense, mean, sd, mean_of_groups_ci(values, "t"), mean_of_groups_ci(values, "z"))


@dataclass(frozen=True)
class DisagreementTally:
    n: int
    counts: Mapping[str, int]

    @property
    def percentages(self) -> dict[str, float]:
        return {f: 100.0 * self.counts.get(f, 0) / self.n for f in DISAGREEMENT_FACTORS}


def tally_disagreements(factors: Iterable[Optional[str]], n: int) -> DisagreementTally:
    """Percentage of ``n`` evaluations attributed to each disagreement factor.

    ``factors`` holds one label per disagreeing evaluation; ``None``/empty
    entries are ignored.
    """
    if n < 1:
        raise ValueError("n must be positive")
    counts = Counter()
    for factor in factors:
        if not factor:
            continue
        if factor not in DISAGREEMENT_FACTORS:
            raise ValueError(f"unknown disagreement factor {factor!r}")
        counts[factor] += 1
    if sum(counts.values()) > n:
        raise ValueError("more annotated disagreements than evaluations")
    return DisagreementTally(n, {f: counts.get(f, 0) for f in DISAGREEMENT_FACTORS})


def classification_pairs(system: Sequence[Classification], human: Sequence[Classification]) -> list[LabelPair]:
    if len(system) != len(human):
        raise ValueError("label sequences differ in length")
    return [LabelPair(s, h) for s, h in zip(system, human)]
