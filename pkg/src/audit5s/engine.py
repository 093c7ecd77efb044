"""Prompt construction, reply parsing, score aggregation and the Shitsuke index."""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .domain import (
    MAX_POINTS,
    MIN_POINTS,
    SENSES,
    AuditEvaluation,
    AuditRecord,
    Sense,
    SenseScore,
)

PROMPT_SECTIONS = ("role", "criteria", "scoring", "output")
ROLE_MARKER = "You are a 5S audit specialist"

# Digits are capped so pathological inputs cannot reach int()'s size limits.
_MAX_DIGITS = 6


class TemplateError(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    role_line: str
    criteria: Mapping[Sense, str]
    scoring_block: str
    output_instruction: str

    def render(self) -> str:
        tokens = ", ".join(s.token for s in SENSES)
        parts = [
            self.role_line,
            "\n".join(f"{self.criteria[s]} [answer as {s.token}]" for s in SENSES),
            self.scoring_block,
            self.output_instruction,
        ]
        return "\n\n".join(p.replace("{tokens}", tokens).strip() for p in parts) + "\n"


def _split_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        if line.startswith("#"):
            continue
        m = re.fullmatch(r"\[(\w+)\]\s*", line)
        if m:
            current = m.group(1)
            if current in sections:
                raise TemplateError(f"duplicate section [{current}]")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip():
            raise TemplateError(f"text outside any section: {line!r}")
    return sections


def parse_template(text: str) -> PromptTemplate:
    sections = _split_sections(text)
    missing = [s for s in PROMPT_SECTIONS if s not in sections]
    if missing:
        raise TemplateError(f"template lacks sections: {', '.join(missing)}")
    criteria: dict[Sense, str] = {}
    for line in sections["criteria"]:
        if not line.strip():
            continue
        token, sep, body = line.partition("=")
        if not sep:
            raise TemplateError(f"criteria line needs TOKEN = text: {line!r}")
        try:
            sense = Sense.from_token(token.strip())
        except ValueError:
            raise TemplateError(f"unknown criterion token {token.strip()!r}") from None
        criteria[sense] = body.strip()
    if set(criteria) != set(SENSES):
        raise TemplateError("criteria section must list all five tokens")
    block = lambda name: "\n".join(sections[name]).strip()  # noqa: E731
    return PromptTemplate(block("role"), criteria, block("scoring"), block("output"))


def load_template(path: Union[str, Path, None] = None) -> PromptTemplate:
    if path is None:
        text = resources.files("audit5s").joinpath("templates/prompt_5s.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_template(text)


def build_prompt(template: Optional[PromptTemplate] = None) -> str:
    """Render the audit prompt (the shipped template unless one is given)."""
    text = (template or load_template()).render()
    if ROLE_MARKER not in text or any(s.token not in text for s in SENSES):
        raise TemplateError("rendered prompt lacks the role line or a criterion token")
    return text


# -- parsing ---------------------------------------------------------------------


@dataclass(frozen=True)
class ParseOutcome:
    scores: tuple[SenseScore, ...]
    defaulted: frozenset
    matched_spans: Mapping[Sense, Optional[tuple[int, int]]]
    # raw integers that matched but fell outside 1..5
    out_of_range: Mapping[Sense, int]

    @property
    def complete(self) -> bool:
        return not self.defaulted


def _pattern(sense: Sense) -> re.Pattern:
    return re.compile(rf"{sense.token}\s*[:|\-]?\s*([0-9]+)", re.IGNORECASE)


_PATTERNS = {s: _pattern(s) for s in SENSES}


def parse_response(text: Union[str, bytes, None]) -> ParseOutcome:
    """Extract the five criterion scores from a free-text reply.

    For each token the first ``TOKEN [:|-] N`` occurrence wins. Missing
    criteria and values outside 1..5 become the 0 sentinel. Never raises.
    """
    if text is None:
        text = ""
    elif isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    scores = []
    defaulted = set()
    spans: dict[Sense, Optional[tuple[int, int]]] = {}
    out_of_range: dict[Sense, int] = {}
    for sense in SENSES:
        m = _PATTERNS[sense].search(text)
        spans[sense] = m.span() if m else None
        value = None
        if m:
            digits = m.group(1).lstrip("0") or "0"
            if len(digits) <= _MAX_DIGITS:
                value = int(digits)
                if not MIN_POINTS <= value <= MAX_POINTS:
                    out_of_range[sense] = value
                    value = None
            else:
                out_of_range[sense] = -1
        if value is None:
            scores.append(SenseScore.missing(sense))
            defaulted.add(sense)
        else:
            scores.append(SenseScore(sense, value))
    return ParseOutcome(tuple(scores), frozenset(defaulted), spans, out_of_range)


def aggregate(outcome: ParseOutcome) -> AuditEvaluation:
    return AuditEvaluation(tuple(outcome.scores))


def evaluate_text(text: Union[str, bytes, None]) -> AuditEvaluation:
    return aggregate(parse_response(text))


# -- Shitsuke temporal consistency -------------------------------------------------

# Conservative bound on the sample standard deviation of scores in 1..5.
SIGMA_MAX = 2.0


@dataclass(frozen=True)
class ConsistencyIndex:
    window: int
    value: float
    mapped_score: int
    sigma_by_sense: Mapping[Sense, float]


def consistency_to_score(value: float) -> int:
    # half-up, so 0.625 -> 4 rather than banker's rounding
    return 1 + int(math.floor(4 * value + 0.5))


def shitsuke_consistency(history: Sequence[AuditRecord], window: int = 5) -> ConsistencyIndex:
    """Stability of the four other senses over the last ``window`` audits.

    value = 1 - mean(sample sd per sense) / 2, clamped to [0, 1]. It is a
    separate metric and never replaces the model's DISCIPLINA score.
    """
    if window < 2:
        raise InsufficientHistory(f"window must be >= 2, got {window}")
    if len(history) < window:
        raise InsufficientHistory(f"need {window} audits, history has {len(history)}")
    recent = list(history)[-window:]
    sigmas = {
        sense: statistics.stdev(r.evaluation.score(sense).points for r in recent)
        for sense in SENSES
        if sense is not Sense.SHITSUKE
    }
    mean_sigma = math.fsum(sigmas.values()) / len(sigmas)
    value = min(1.0, max(0.0, 1.0 - mean_sigma / SIGMA_MAX))
    return ConsistencyIndex(window, value, consistency_to_score(value), sigmas)
