"""Cost model for manual versus automated audits."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

CENT = Decimal("0.01")


class ScenarioError(ValueError):
    def __init__(self, problems: dict[str, str]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


@dataclass(frozen=True, order=True)
class Money:
    cents: int
    currency: str = "BRL"

    @classmethod
    def parse(cls, text: Union[str, int, float, Decimal], currency: str = "BRL") -> "Money":
        amount = Decimal(str(text).strip().replace(",", ""))
        return cls(int((amount / CENT).to_integral_value(ROUND_HALF_UP)), currency)

    def _check(self, other: "Money") -> None:
        if self.currency != other.currency:
            raise ValueError(f"currency mismatch: {self.currency} vs {other.currency}")

    def __add__(self, other: "Money") -> "Money":
        self._check(other)
        return Money(self.cents + other.cents, self.currency)

    def __sub__(self, other: "Money") -> "Money":
        self._check(other)
        return Money(self.cents - other.cents, self.currency)

    def __mul__(self, factor: int) -> "Money":
        if not isinstance(factor, int):
            raise TypeError("money can only be scaled by integers")
        return Money(self.cents * factor, self.currency)

    __rmul__ = __mul__

    @property
    def amount(self) -> Decimal:
        return Decimal(self.cents) * CENT

    def __str__(self) -> str:
        sign = "-" if self.cents < 0 else ""
        units, cents = divmod(abs(self.cents), 100)
        return f"{sign}{units:,}.{cents:02d} {self.currency}"


@dataclass(frozen=True)
class EconomicScenario:
    manual_cost_per_audit: Money
    automated_cost_per_audit: Money
    audits_per_month: int
    manual_minutes_per_audit: int
    automated_minutes_per_audit: int
    initial_investment: Money
    hourly_rate: Money

    @property
    def currency(self) -> str:
        return self.manual_cost_per_audit.currency


PAPER_SCENARIO = EconomicScenario(
    manual_cost_per_audit=Money(7500),
    automated_cost_per_audit=Money(17),
    audits_per_month=20,
    manual_minutes_per_audit=60,
    automated_minutes_per_audit=20,
    initial_investment=Money(4_500_000),
    hourly_rate=Money(7500),
)

MONEY_FIELDS = ("manual_cost_per_audit", "automated_cost_per_audit", "initial_investment", "hourly_rate")
INT_FIELDS = ("audits_per_month", "manual_minutes_per_audit", "automated_minutes_per_audit")


def paper_scenario() -> EconomicScenario:
    return PAPER_SCENARIO


def scenario_from_mapping(values: dict[str, str]) -> EconomicScenario:
    """Validate flat key/value text; every bad field is reported at once."""
    currency = (values.get("currency") or "BRL").strip().upper()
    problems: dict[str, str] = {}
    parsed: dict[str, object] = {}
    for name in MONEY_FIELDS:
        raw = values.get(name)
        if raw is None or not str(raw).strip():
            problems[name] = "missing"
            continue
        try:
            money = Money.parse(raw, currency)
        except (InvalidOperation, ValueError):
            problems[name] = f"not a money amount: {raw!r}"
            continue
        if money.cents < 0:
            problems[name] = "must be >= 0"
        parsed[name] = money
    for name in INT_FIELDS:
        raw = values.get(name)
        if raw is None or not str(raw).strip():
            problems[name] = "missing"
            continue
        try:
            number = int(str(raw).strip())
        except ValueError:
            problems[name] = f"not an integer: {raw!r}"
            continue
        if number < 0:
            problems[name] = "must be >= 0"
        parsed[name] = number
    known = set(MONEY_FIELDS) | set(INT_FIELDS) | {"currency", "name"}
    for extra in sorted(set(values) - known):
        problems[extra] = "unknown field"
    if problems:
        raise ScenarioError(problems)
    return EconomicScenario(**parsed)  # type: ignore[arg-type]


def load_scenario(path: Union[str, Path]) -> EconomicScenario:
    """Read a scenario file: ``key = value`` lines, optionally under ``[scenario]``."""
    text = Path(path).read_text("utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[scenario]\n" + text)
    except configparser.Error as exc:
        raise ScenarioError({"file": str(exc).splitlines()[0]}) from exc
    section = "scenario" if parser.has_section("scenario") else (parser.sections() or [None])[0]
    if section is None:
        raise ScenarioError({"file": "no scenario values"})
    return scenario_from_mapping(dict(parser.items(section)))


def scenario_to_mapping(s: EconomicScenario) -> dict[str, str]:
    out = {"currency": s.currency}
    for f in fields(s):
        value = getattr(s, f.name)
        out[f.name] = str(value.amount) if isinstance(value, Money) else str(value)
    return out


def cost_reduction(manual: Money, automated: Money) -> float:
    """Per-audit cost reduction, in percent."""
    if manual.cents <= 0:
        raise ValueError("manual cost must be positive")
    manual._check(automated)
    return float(Fraction(manual.cents - automated.cents, manual.cents) * 100)


@dataclass(frozen=True)
class EconomicReport:
    scenario: EconomicScenario
    monthly_cost_manual: Money
    monthly_cost_automated: Money
    monthly_savings: Money
    annual_savings: Money
    roi_year1_percent: Optional[float]
    payback_months: float  # math.inf when savings never cover the investment
    cost_reduction_percent: float
    time_saved_hours_per_month: float
    time_saved_hours_rounded: Decimal
    freed_capacity_value: Money
    cumulative_roi_by_year: tuple[tuple[int, Optional[float]], ...]


def _roi(benefit_cents: int, investment_cents: int) -> Optional[float]:
    if investment_cents == 0:
        return None
    return float(Fraction(benefit_cents - investment_cents, investment_cents) * 100)


def evaluate_scenario(s: EconomicScenario, horizon_years: int = 5) -> EconomicReport:
    """Monthly/annual savings, cumulative ROI per year, payback and freed capacity.

    ROI for year k uses k years of savings as the benefit. Freed capacity is
    valued on hours rounded to 0.1 h, which is how the saved time is reported.
    """
    if s.manual_cost_per_audit.cents <= 0:
        raise ValueError("manual_cost_per_audit must be positive")
    if horizon_years < 1:
        raise ValueError("horizon_years must be >= 1")
    monthly_manual = s.manual_cost_per_audit * s.audits_per_month
    monthly_auto = s.automated_cost_per_audit * s.audits_per_month
    monthly_savings = monthly_manual - monthly_auto
    annual_savings = monthly_savings * 12
    invest = s.initial_investment.cents
    if monthly_savings.cents > 0:
        payback = invest / monthly_savings.cents
    else:
        payback = 0.0 if invest == 0 else math.inf
    minutes_saved = (s.manual_minutes_per_audit - s.automated_minutes_per_audit) * s.audits_per_month
    hours_rounded = (Decimal(minutes_saved) / 60).quantize(Decimal("0.1"), ROUND_HALF_UP)
    freed = Money(int((hours_rounded * s.hourly_rate.cents).to_integral_value(ROUND_HALF_UP)), s.currency)
    cumulative = tuple(
        (k, _roi(annual_savings.cents * k, invest)) for k in range(1, horizon_years + 1)
    )
    return EconomicReport(
        scenario=s,
        monthly_cost_manual=monthly_manual,
        monthly_cost_automated=monthly_auto,
        monthly_savings=monthly_savings,
        annual_savings=annual_savings,
        roi_year1_percent=cumulative[0][1],
        payback_months=payback,
        cost_reduction_percent=cost_reduction(s.manual_cost_per_audit, s.automated_cost_per_audit),
        time_saved_hours_per_month=minutes_saved / 60,
        time_saved_hours_rounded=hours_rounded,
        freed_capacity_value=freed,
        cumulative_roi_by_year=cumulative,
    )
