"""Image batch scanning, ground-truth loading and the append-only audit history."""

from __future__ import annotations

import csv
import fcntl
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .client import detect_media_type
from .domain import SENSES, AuditEvaluation, AuditRecord, Classification, classify
from .stats import DISAGREEMENT_FACTORS

log = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.csv"
HISTORY_SCHEMA = 1

_ISO_PREFIX = re.compile(
    r"^(?P<date>\d{4}-?\d{2}-?\d{2})"
    r"(?:[T_ ](?P<h>\d{2})[-:]?(?P<m>\d{2})(?:[-:]?(?P<s>\d{2}))?)?"
    r"(?P<z>Z)?(?=$|[^0-9])"
)


# -- image batches -------------------------------------------------------------


@dataclass(frozen=True)
class BatchEntry:
    image_path: Path
    captured_at: datetime
    timestamp_source: str  # "filename" or "mtime"
    media_type: str
    notes: Optional[str] = None

    @property
    def image_id(self) -> str:
        return self.image_path.stem


@dataclass
class ImageBatch:
    root: Path
    entries: list[BatchEntry] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[BatchEntry]:
        return iter(self.entries)


def timestamp_from_name(name: str) -> Optional[datetime]:
    """Parse a leading ISO-8601 timestamp (``2025-03-10T17-30-00_x.png``)."""
    m = _ISO_PREFIX.match(name)
    if not m:
        return None
    date = m.group("date").replace("-", "")
    try:
        return datetime(
            int(date[:4]), int(date[4:6]), int(date[6:8]),
            int(m.group("h") or 0), int(m.group("m") or 0), int(m.group("s") or 0),
            tzinfo=timezone.utc,
        )
    except ValueError:
        return None


def read_annotations(path: Path) -> dict[str, str]:
    notes: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row.get("image_path") or "").strip()
            if key:
                notes[Path(key).name] = (row.get("note") or "").strip()
    return notes


def scan_batch(directory: Union[str, os.PathLike]) -> ImageBatch:
    """List PNG/JPEG files (by magic bytes) in ``directory``, oldest first."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"batch directory not found: {root}")
    try:
        names = sorted(p.name for p in root.iterdir())
    except OSError as exc:
        raise OSError(f"cannot list batch directory {root}: {exc}") from exc
    notes = read_annotations(root / ANNOTATIONS_FILE) if ANNOTATIONS_FILE in names else {}
    batch = ImageBatch(root)
    for name in names:
        path = root / name
        if name == ANNOTATIONS_FILE or not path.is_file():
            continue
        try:
            with open(path, "rb") as fh:
                media_type = detect_media_type(fh.read(8))
        except OSError:
            media_type = None
        if media_type is None:
            batch.skipped.append(name)
            continue
        stamp = timestamp_from_name(name)
        source = "filename"
        if stamp is None:
            stamp = datetime.fromtimestamp(path.stat().st_mtime, tz=timezone.utc)
            source = "mtime"
        batch.entries.append(BatchEntry(path, stamp, source, media_type, notes.get(name)))
    batch.entries.sort(key=lambda e: (e.captured_at, str(e.image_path)))
    return batch


# -- ground truth ------------------------------------------------------------------

GT_SCORE_COLUMNS = ("seiri", "seiton", "seiso", "seiketsu", "shitsuke")


class GroundTruthError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class GroundTruthRow:
    image_id: str
    scores: tuple[int, ...]
    classification: Classification
    factor: Optional[str] = None
    consistent: bool = True
    derived_class: bool = False
    line: int = 0

    @property
    def evaluation(self) -> AuditEvaluation:
        return AuditEvaluation.from_points(self.scores)


@dataclass
class GroundTruthSet:
    rows: dict[str, GroundTruthRow]

    @property
    def inconsistent(self) -> list[GroundTruthRow]:
        return [r for r in self.rows.values() if not r.consistent]

    def __len__(self) -> int:
        return len(self.rows)


def load_ground_truth(path: Union[str, os.PathLike]) -> GroundTruthSet:
    """Read ``image_id,seiri,seiton,seiso,seiketsu,shitsuke[,class][,factor]``.

    Rows whose class disagrees with their scores are kept and flagged.
    """
    rows: dict[str, GroundTruthRow] = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise GroundTruthError(1, "empty file, header required") from None
        required = ("image_id",) + GT_SCORE_COLUMNS
        missing = [c for c in required if c not in header]
        if missing:
            raise GroundTruthError(1, f"header lacks columns: {', '.join(missing)}")
        col = {name: header.index(name) for name in header}
        for row in reader:
            line = reader.line_num
            if not any(cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise GroundTruthError(line, f"expected {len(header)} fields, got {len(row)}")
            image_id = row[col["image_id"]].strip()
            if not image_id:
                raise GroundTruthError(line, "empty image_id")
            if image_id in rows:
                raise GroundTruthError(line, f"duplicate image_id {image_id!r}")
            scores = []
            for name in GT_SCORE_COLUMNS:
                raw = row[col[name]].strip()
                try:
                    value = int(raw)
                except ValueError:
                    raise GroundTruthError(line, f"{name} is not an integer: {raw!r}") from None
                if not 1 <= value <= 5:
                    raise GroundTruthError(line, f"{name} score {value} outside 1..5")
                scores.append(value)
            expected = classify(4 * sum(scores))
            raw_class = row[col["class"]].strip().upper() if "class" in col else ""
            derived = not raw_class
            if derived:
                declared = expected
            else:
                try:
                    declared = Classification(raw_class)
                except ValueError:
                    raise GroundTruthError(line, f"class must be J, K or L, got {raw_class!r}") from None
            factor = row[col["factor"]].strip().lower() if "factor" in col else ""
            if factor and factor not in DISAGREEMENT_FACTORS:
                raise GroundTruthError(line, f"unknown factor {factor!r}")
            consistent = declared is expected
            if not consistent:
                log.warning("line %d: %s declared %s but scores give %s", line, image_id,
                            declared.value, expected.value)
            rows[image_id] = GroundTruthRow(image_id, tuple(scores), declared, factor or None,
                                            consistent, derived, line)
    return GroundTruthSet(rows)


# -- history store -------------------------------------------------------------------


def _iso(dt: Optional[datetime]) -> Optional[str]:
    if dt is None:
        return None
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_iso(text: Optional[str]) -> Optional[datetime]:
    if text is None:
        return None
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def record_to_dict(record: AuditRecord) -> dict:
    ev = record.evaluation
    return {
        "schema": HISTORY_SCHEMA,
        "id": record.id,
        "captured_at": _iso(record.captured_at),
        "timestamp_source": record.timestamp_source,
        "audited_at": _iso(record.audited_at),
        "image_path": record.image_path,
        "image_sha256": record.image_sha256,
        "scores": {s.sense.token: s.points for s in ev.scores},
        "total_points": ev.total_points,
        "final_percent": ev.final_percent,
        "classification": ev.classification.value,
        "parse_complete": ev.parse_complete,
        "raw_response": record.raw_response,
        "attempts": record.attempts,
        "backend_name": record.backend_name,
        "notes": record.notes,
    }


def record_from_dict(d: dict) -> AuditRecord:
    evaluation = AuditEvaluation.from_points(int(d["scores"][s.token]) for s in SENSES)
    return AuditRecord(
        id=d["id"],
        captured_at=_parse_iso(d["captured_at"]),
        image_path=d["image_path"],
        evaluation=evaluation,
        raw_response=d["raw_response"],
        attempts=int(d["attempts"]),
        backend_name=d["backend_name"],
        notes=d.get("notes"),
        image_sha256=d.get("image_sha256"),
        audited_at=_parse_iso(d.get("audited_at")),
        timestamp_source=d.get("timestamp_source", "filename"),
    )


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def serialize(record: AuditRecord) -> str:
    """One history line (without the newline): record fields plus a sha256 checksum."""
    payload = record_to_dict(record)
    body = _canonical(payload)
    payload["checksum"] = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return _canonical(payload)


class CorruptRecord(ValueError):
    pass


def deserialize(line: str) -> AuditRecord:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"not valid JSON: {exc.msg}") from None
    if not isinstance(payload, dict) or "checksum" not in payload:
        raise CorruptRecord("missing checksum")
    checksum = payload.pop("checksum")
    if hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest() != checksum:
        raise CorruptRecord("checksum mismatch")
    try:
        return record_from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRecord(f"invalid record: {exc}") from None


@dataclass(frozen=True)
class Corruption:
    line: int
    reason: str


@dataclass
class HistoryRead:
    records: list[AuditRecord]
    corruptions: list[Corruption]


class HistoryStore:
    """Line-delimited, checksummed audit records; append only."""

    def __init__(self, path: Union[str, os.PathLike]) -> None:
        self.path = Path(path)

    def append(self, record: AuditRecord) -> None:
        data = (serialize(record) + "\n").encode("utf-8")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            # a torn previous write would otherwise swallow this record
            size = os.fstat(fd).st_size
            if size:
                with open(self.path, "rb") as fh:
                    fh.seek(size - 1)
                    if fh.read(1) != b"\n":
                        data = b"\n" + data
            view = memoryview(data)
            while view:
                written = os.write(fd, view)
                view = view[written:]
            os.fsync(fd)
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def extend(self, records: Iterable[AuditRecord]) -> None:
        for record in records:
            self.append(record)

    def read(
        self,
        start: Optional[datetime] = None,
        end: Optional[datetime] = None,
    ) -> HistoryRead:
        """Records with ``start <= captured_at < end``, sorted by (captured_at, id).

        Unreadable lines, including a trailing partial line, are skipped and
        reported.
        """
        if not self.path.exists():
            return HistoryRead([], [])
        raw = self.path.read_bytes()
        lines = raw.split(b"\n")
        tail_partial = bool(lines) and lines[-1] != b""
        records: list[AuditRecord] = []
        corruptions: list[Corruption] = []
        for number, chunk in enumerate(lines, start=1):
            if not chunk:
                continue
            if tail_partial and number == len(lines):
                corruptions.append(Corruption(number, "truncated record (no line terminator)"))
                continue
            try:
                record = deserialize(chunk.decode("utf-8"))
            except UnicodeDecodeError:
                corruptions.append(Corruption(number, "invalid UTF-8"))
                continue
            except CorruptRecord as exc:
                corruptions.append(Corruption(number, str(exc)))
                continue
            if start is not None and record.captured_at < start:
                continue
            if end is not None and record.captured_at >= end:
                continue
            records.append(record)
        for c in corruptions:
            log.warning("%s line %d: %s", self.path, c.line, c.reason)
        records.sort(key=lambda r: (r.captured_at, r.id))
        return HistoryRead(records, corruptions)


def append_record(store: HistoryStore, record: AuditRecord) -> None:
    store.append(record)


def read_history(store: HistoryStore, start: Optional[datetime] = None, end: Optional[datetime] = None) -> HistoryRead:
    return store.read(start, end)
