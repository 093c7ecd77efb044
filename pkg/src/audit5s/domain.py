"""Shared value types and the fixed vocabulary of a 5S audit."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Optional


class Sense(enum.Enum):
    """The five senses, in audit order.

    Each member's value is the uppercase token the prompt asks the model to
    use and the parser searches for.
    """

    SEIRI = "UTILIZACAO"
    SEITON = "ORDENACAO"
    SEISO = "LIMPEZA"
    SEIKETSU = "SAUDE"
    SHITSUKE = "DISCIPLINA"

    @property
    def token(self) -> str:
        return self.value

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @property
    def gloss(self) -> str:
        return _GLOSSES[self]

    @classmethod
    def from_token(cls, token: str) -> "Sense":
        return cls(token.upper())


_GLOSSES = {
    Sense.SEIRI: "utilization",
    Sense.SEITON: "organization",
    Sense.SEISO: "cleanliness",
    Sense.SEIKETSU: "standardization/health",
    Sense.SHITSUKE: "discipline",
}

SENSES: tuple[Sense, ...] = tuple(Sense)

MIN_POINTS = 1
MAX_POINTS = 5
NOT_EXTRACTED = 0


@dataclass(frozen=True)
class SenseScore:
    sense: Sense
    points: int
    extracted: bool = True

    def __post_init__(self) -> None:
        if not isinstance(self.points, int) or not NOT_EXTRACTED <= self.points <= MAX_POINTS:
            raise ValueError(f"points must be an integer in 0..5, got {self.points!r}")
        if self.extracted != (self.points != NOT_EXTRACTED):
            raise ValueError("extracted must be False exactly when points is 0")

    @classmethod
    def missing(cls, sense: Sense) -> "SenseScore":
        return cls(sense, NOT_EXTRACTED, extracted=False)


class Classification(enum.Enum):
    J = "J"
    K = "K"
    L = "L"

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self]

    @property
    def band(self) -> tuple[int, int]:
        """Inclusive percentage range of the band."""
        return _CLASS_BANDS[self]


_CLASS_LABELS = {
    Classification.J: "Excellent",
    Classification.K: "Regular",
    Classification.L: "Needs improvement",
}

_CLASS_BANDS = {
    Classification.J: (85, 100),
    Classification.K: (50, 84),
    Classification.L: (0, 49),
}

CLASSES: tuple[Classification, ...] = tuple(Classification)


def classify(final_percent: int) -> Classification:
    """Return the J/K/L band containing an integer percentage in 0..100."""
    if isinstance(final_percent, bool) or not isinstance(final_percent, int):
        raise TypeError(f"final_percent must be an int, got {type(final_percent).__name__}")
    if not 0 <= final_percent <= 100:
        raise ValueError(f"final_percent must be in 0..100, got {final_percent}")
    for cls in CLASSES:
        low, high = cls.band
        if low <= final_percent <= high:
            return cls
    raise AssertionError("classification bands do not cover 0..100")  # pragma: no cover


@dataclass(frozen=True)
class AuditEvaluation:
    scores: tuple[SenseScore, ...]

    def __post_init__(self) -> None:
        if tuple(s.sense for s in self.scores) != SENSES:
            raise ValueError("an evaluation needs exactly one score per sense, in sense order")

    @classmethod
    def from_points(cls, points: Iterable[int]) -> "AuditEvaluation":
        values = tuple(points)
        if len(values) != len(SENSES):
            raise ValueError(f"expected 5 scores, got {len(values)}")
        return cls(tuple(
            SenseScore(sense, p, extracted=p != NOT_EXTRACTED) for sense, p in zip(SENSES, values)
        ))

    @property
    def points(self) -> tuple[int, ...]:
        return tuple(s.points for s in self.scores)

    @property
    def total_points(self) -> int:
        return sum(self.points)

    @property
    def final_percent(self) -> int:
        # total / 25 * 100 == total * 4, exactly
        return self.total_points * 4

    @property
    def classification(self) -> Classification:
        return classify(self.final_percent)

    @property
    def parse_complete(self) -> bool:
        return all(s.extracted for s in self.scores)

    def score(self, sense: Sense) -> SenseScore:
        return self.scores[SENSES.index(sense)]


@dataclass(frozen=True)
class AuditRecord:
    """One persisted evaluation; the unit of the audit history."""

    id: str
    captured_at: datetime
    image_path: str
    evaluation: AuditEvaluation
    raw_response: str
    attempts: int
    backend_name: str
    notes: Optional[str] = None
    image_sha256: Optional[str] = None
    audited_at: Optional[datetime] = None
    timestamp_source: str = "filename"

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.captured_at.tzinfo is None:
            raise ValueError("captured_at must be timezone-aware (UTC)")


@dataclass(frozen=True)
class LandisKochBand:
    label: str
    low: Optional[float]
    high: float

    def __str__(self) -> str:
        return self.label


# Printed bands are two-decimal ranges (0.00-0.20, 0.21-0.40, ...). The gaps
# between them are closed by making each band (previous high, high].
LANDIS_KOCH_BANDS: tuple[LandisKochBand, ...] = (
    LandisKochBand("Poor agreement", None, 0.0),
    LandisKochBand("Slight agreement", 0.0, 0.20),
    LandisKochBand("Fair agreement", 0.20, 0.40),
    LandisKochBand("Moderate agreement", 0.40, 0.60),
    LandisKochBand("Substantial agreement", 0.60, 0.80),
    LandisKochBand("Almost perfect agreement", 0.80, 1.0),
)


def interpret_kappa(kappa: float) -> LandisKochBand:
    """Landis-Koch verbal band for a kappa value in [-1, 1]."""
    k = float(kappa)
    if k != k or not -1.0 <= round(k, 9) <= 1.0:
        raise ValueError(f"kappa must be within [-1, 1], got {kappa!r}")
    k = round(k, 9)
    if k < 0.0:
        return LANDIS_KOCH_BANDS[0]
    if k == 0.0:
        return LANDIS_KOCH_BANDS[1]
    for band in LANDIS_KOCH_BANDS[1:]:
        if band.low < k <= band.high:
            return band
    raise AssertionError("Landis-Koch bands do not cover [-1, 1]")  # pragma: no cover
