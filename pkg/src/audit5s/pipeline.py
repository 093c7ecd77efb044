"""Batch audit and validation runs wired from the building blocks."""

from __future__ import annotations

import base64
import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Callable, Optional, Sequence

from .client import (
    Backend,
    BackendRequest,
    ClientConfig,
    DispatchGate,
    ImageEncodingError,
    RetriesExhausted,
    encode_image,
    evaluate_image,
    global_gate,
)
from .domain import CLASSES, SENSES, AuditEvaluation, AuditRecord, Classification, Sense
from .engine import (
    ConsistencyIndex,
    InsufficientHistory,
    aggregate,
    parse_response,
    shitsuke_consistency,
)
from .stats import (
    AgreementResult,
    ClassMetrics,
    ConfusionMatrix,
    DisagreementTally,
    SenseKappaSummary,
    UndefinedKappa,
    build_matrix,
    class_metrics,
    cohen_kappa,
    kappa_by_sense,
    tally_disagreements,
)
from .store import BatchEntry, GroundTruthSet, HistoryStore, ImageBatch

log = logging.getLogger(__name__)

ATTENTION_THRESHOLD = 2


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def attention_list(evaluation: AuditEvaluation, threshold: int = ATTENTION_THRESHOLD) -> tuple[Sense, ...]:
    """Senses scoring at or below ``threshold`` (unextracted zeros included)."""
    return tuple(s.sense for s in evaluation.scores if s.points <= threshold)


@dataclass(frozen=True)
class AuditSheet:
    image_path: str
    captured_at: datetime
    evaluation: AuditEvaluation
    attention: tuple[Sense, ...]
    record_id: str
    attempts: int
    notes: Optional[str] = None

    @property
    def image_id(self) -> str:
        return Path(self.image_path).stem


@dataclass(frozen=True)
class FailureEntry:
    image_path: str
    captured_at: datetime
    stage: str  # "encoding" or "backend"
    error: str
    attempts: int


@dataclass
class AuditRun:
    sheets: list[AuditSheet] = field(default_factory=list)
    failures: list[FailureEntry] = field(default_factory=list)
    records: list[AuditRecord] = field(default_factory=list)
    requests_sent: int = 0
    elapsed_seconds: float = 0.0
    cost_per_request: Optional[Decimal] = None

    @property
    def total(self) -> int:
        return len(self.sheets) + len(self.failures)

    @property
    def success_rate(self) -> float:
        """Percent of images that produced an evaluation (retries still count)."""
        return 100.0 * len(self.sheets) / self.total if self.total else 0.0

    @property
    def estimated_cost(self) -> Optional[Decimal]:
        if self.cost_per_request is None:
            return None
        return self.cost_per_request * len(self.sheets)


def record_id(image_sha256: str, captured_at: datetime, audited_at: datetime, image_path: str) -> str:
    key = f"{image_sha256}|{captured_at.isoformat()}|{audited_at.isoformat()}|{image_path}"
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:20]


def audit_entry(
    entry: BatchEntry,
    prompt: str,
    config: ClientConfig,
    backend: Backend,
    gate: Optional[DispatchGate],
    now: Callable[[], datetime],
) -> tuple[Optional[AuditRecord], Optional[FailureEntry], int]:
    """Encode, query, parse and aggregate one image; returns (record, failure, attempts)."""
    path = str(entry.image_path)
    try:
        payload, media_type = encode_image(entry.image_path)
    except ImageEncodingError as exc:
        return None, FailureEntry(path, entry.captured_at, "encoding", str(exc), 0), 0
    request = BackendRequest(prompt, payload, media_type)
    try:
        response, attempts = evaluate_image(request, config, backend, gate)
    except RetriesExhausted as exc:
        return None, FailureEntry(path, entry.captured_at, "backend", str(exc.last_cause), exc.attempts), exc.attempts
    evaluation = aggregate(parse_response(response.text))
    if not evaluation.parse_complete:
        log.warning("%s: incomplete extraction, %d criteria defaulted",
                    path, sum(not s.extracted for s in evaluation.scores))
    audited_at = now()
    digest = hashlib.sha256(base64.b64decode(payload)).hexdigest()
    record = AuditRecord(
        id=record_id(digest, entry.captured_at, audited_at, path),
        captured_at=entry.captured_at,
        image_path=path,
        evaluation=evaluation,
        raw_response=response.text,
        attempts=attempts,
        backend_name=response.backend_name,
        notes=entry.notes,
        image_sha256=digest,
        audited_at=audited_at,
        timestamp_source=entry.timestamp_source,
    )
    return record, None, attempts


def run_audit(
    batch: ImageBatch,
    prompt: str,
    config: ClientConfig,
    backend: Backend,
    store: HistoryStore,
    gate: Optional[DispatchGate] = None,
    now: Callable[[], datetime] = utc_now,
    threshold: int = ATTENTION_THRESHOLD,
) -> AuditRun:
    """Audit every image in batch order, appending each evaluation to ``store``.

    An image whose retries run out becomes a failure entry; the batch goes on.
    """
    config.validate()
    if not len(batch):
        raise ValueError(f"no PNG/JPEG images in {batch.root}")
    run = AuditRun(cost_per_request=config.cost_per_request)
    gate = gate or global_gate()
    started = gate.clock.now()
    for entry in batch:
        record, failure, attempts = audit_entry(entry, prompt, config, backend, gate, now)
        run.requests_sent += attempts
        if failure is not None:
            log.error("%s: %s failure: %s", failure.image_path, failure.stage, failure.error)
            run.failures.append(failure)
            continue
        assert record is not None
        store.append(record)
        run.records.append(record)
        run.sheets.append(AuditSheet(
            record.image_path, record.captured_at, record.evaluation,
            attention_list(record.evaluation, threshold), record.id, record.attempts, record.notes,
        ))
    run.elapsed_seconds = gate.clock.now() - started
    log.info("audited %d images, success rate %.1f%%", run.total, run.success_rate)
    return run


def trend_series(records: Sequence[AuditRecord]) -> list[tuple[datetime, int]]:
    return [(r.captured_at, r.evaluation.final_percent) for r in records if r.evaluation.parse_complete]


def consistency_or_none(records: Sequence[AuditRecord], window: int) -> Optional[ConsistencyIndex]:
    complete = [r for r in records if r.evaluation.parse_complete]
    try:
        return shitsuke_consistency(complete, window)
    except InsufficientHistory:
        return None


# -- validation --------------------------------------------------------------------


@dataclass
class SenseKappaRow:
    sense: Sense
    n: int
    result: Optional[AgreementResult]
    error: Optional[str] = None


@dataclass
class ValidationResult:
    n: int
    matrix: ConfusionMatrix
    agreement: Optional[AgreementResult]
    agreement_error: Optional[str]
    metrics: ClassMetrics
    sense_rows: list[SenseKappaRow]
    sense_summary: Optional[SenseKappaSummary]
    tally: Optional[DisagreementTally]
    unmatched_ground_truth: list[str]
    unmatched_system: list[str]
    inconsistent_ground_truth: list[str]


def latest_by_image(records: Sequence[AuditRecord]) -> dict[str, AuditRecord]:
    """Most recent audit of each image, keyed by file stem."""
    latest: dict[str, AuditRecord] = {}
    floor = datetime.min.replace(tzinfo=timezone.utc)
    for r in records:
        key = Path(r.image_path).stem
        current = latest.get(key)
        if current is None or (r.audited_at or floor) >= (current.audited_at or floor):
            latest[key] = r
    return latest


def run_validation(records: Sequence[AuditRecord], truth: GroundTruthSet) -> ValidationResult:
    system = latest_by_image(records)
    matched = [i for i in truth.rows if i in system]
    unmatched_gt = sorted(i for i in truth.rows if i not in system)
    unmatched_sys = sorted(i for i in system if i not in truth.rows)
    if unmatched_gt:
        log.warning("%d ground-truth ids have no audit result: %s", len(unmatched_gt), ", ".join(unmatched_gt[:10]))
    if not matched:
        raise ValueError("no audited images match the ground truth")
    pairs = [(system[i].evaluation.classification, truth.rows[i].classification) for i in matched]
    matrix = build_matrix(pairs, CLASSES)
    agreement, agreement_error = None, None
    try:
        agreement = cohen_kappa(matrix)
    except UndefinedKappa as exc:
        agreement_error = str(exc)
    groups = {
        sense: [(system[i].evaluation.score(sense).points, truth.rows[i].scores[k]) for i in matched]
        for k, sense in enumerate(SENSES)
    }
    sense_rows = []
    for sense in SENSES:
        try:
            sense_rows.append(SenseKappaRow(sense, len(groups[sense]), cohen_kappa(build_matrix(groups[sense], range(6)))))
        except UndefinedKappa as exc:
            sense_rows.append(SenseKappaRow(sense, len(groups[sense]), None, str(exc)))
    summary = None
    if all(row.result is not None for row in sense_rows):
        summary = kappa_by_sense(groups, range(6))
    factors = [truth.rows[i].factor for i in matched]
    tally = tally_disagreements(factors, len(matched)) if any(factors) else None
    return ValidationResult(
        n=len(matched),
        matrix=matrix,
        agreement=agreement,
        agreement_error=agreement_error,
        metrics=class_metrics(matrix),
        sense_rows=sense_rows,
        sense_summary=summary,
        tally=tally,
        unmatched_ground_truth=unmatched_gt,
        unmatched_system=unmatched_sys,
        inconsistent_ground_truth=sorted(r.image_id for r in truth.inconsistent),
    )


def class_distribution(evaluations: Sequence[AuditEvaluation]) -> dict[Classification, int]:
    counts = {c: 0 for c in CLASSES}
    for ev in evaluations:
        counts[ev.classification] += 1
    return counts
