"""Automated 5S workplace audits from images, with validation and cost analysis."""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    CLASSES,
    SENSES,
    AuditEvaluation,
    AuditRecord,
    Classification,
    LandisKochBand,
    Sense,
    SenseScore,
    classify,
    interpret_kappa,
)

__all__ = [
    "CLASSES",
    "SENSES",
    "AuditEvaluation",
    "AuditRecord",
    "Classification",
    "LandisKochBand",
    "Sense",
    "SenseScore",
    "classify",
    "interpret_kappa",
]
