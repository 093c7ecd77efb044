"""Fixture builders and independent oracles shared by the test modules."""

from __future__ import annotations

import csv
import functools
import itertools
import struct
import zlib
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path

from audit5s.domain import SENSES, AuditEvaluation, AuditRecord, Classification

T0 = datetime(2025, 3, 10, 8, 0, tzinfo=timezone.utc)

# Reference confusion counts, rows = system, columns = human, order J, K, L.
REFERENCE_MATRIX = ((28, 3, 0), (2, 35, 4), (0, 1, 2))

# Score vectors chosen so each lands in the intended class.
CLASS_SCORES = {
    Classification.J: (5, 5, 5, 4, 4),  # 92%
    Classification.K: (4, 4, 3, 3, 3),  # 68%
    Classification.L: (2, 2, 2, 2, 2),  # 40%
}

SENSE_KAPPA_TARGETS = (0.83, 0.65, 0.79, 0.72, 0.71)


def make_png(seed: int, size: int = 2) -> bytes:
    """A valid RGB PNG whose pixels depend on ``seed``."""
    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    raw = b""
    for y in range(size):
        raw += b"\x00" + bytes(((seed * 7 + x * 13 + y * 31 + c * 5) % 256) for x in range(size) for c in range(3))
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))


def make_batch(directory: Path, n: int = 75, per_day: int = 15) -> list[Path]:
    """``n`` images named with ISO timestamps, ``per_day`` per working day."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        day, slot = divmod(i, per_day)
        stamp = T0 + timedelta(days=day, minutes=40 * slot)
        path = directory / f"{stamp:%Y-%m-%dT%H-%M-%S}_img_{i + 1:03d}.png"
        path.write_bytes(make_png(i))
        paths.append(path)
    return paths


def record(i: int, points, *, image: str | None = None, captured: datetime | None = None,
           audited: datetime | None = None, raw: str = "") -> AuditRecord:
    return AuditRecord(
        id=f"r{i:05d}",
        captured_at=captured or T0 + timedelta(hours=i),
        image_path=image or f"img_{i:03d}.png",
        evaluation=AuditEvaluation.from_points(points),
        raw_response=raw,
        attempts=1,
        backend_name="mock",
        audited_at=audited,
    )


def reference_pairs():
    """75 (system, human) class pairs matching REFERENCE_MATRIX."""
    classes = (Classification.J, Classification.K, Classification.L)
    pairs = []
    for i, s in enumerate(classes):
        for j, h in enumerate(classes):
            pairs += [(s, h)] * REFERENCE_MATRIX[i][j]
    return pairs


# -- oracles --------------------------------------------------------------------


def kappa_by_enumeration(pairs) -> Fraction:
    """Kappa from an explicit pair list: agreement counted item by item and
    chance agreement as the probability two independent draws (one from each
    rater's label list) coincide."""
    n = len(pairs)
    observed = Fraction(sum(1 for s, h in pairs if s == h), n)
    sys_labels = [s for s, _ in pairs]
    hum_labels = [h for _, h in pairs]
    chance = Fraction(sum(1 for a in sys_labels for b in hum_labels if a == b), n * n)
    return (observed - chance) / (1 - chance)


def band_oracle(percent: int) -> str:
    if percent >= 85:
        return "J"
    if percent >= 50:
        return "K"
    return "L"


@functools.lru_cache(maxsize=None)
def search_2x2(target: float, n: int = 75, tol: float = 0.0005) -> tuple[tuple[int, int], tuple[int, int]]:
    """Brute-force a 2x2 count matrix (total n) with kappa within ``tol`` of
    ``target``, preferring balanced off-diagonals and marginals; falls back to
    the closest matrix when none is within ``tol``."""
    best = None
    for a in range(n + 1):
        for d in range(n + 1 - a):
            rest = n - a - d
            for b in range(rest + 1):
                c = rest - b
                r1, r2, c1, c2 = a + b, c + d, a + c, b + d
                pe = (r1 * c1 + r2 * c2) / (n * n)
                if pe >= 1:
                    continue
                err = abs(((a + d) / n - pe) / (1 - pe) - target)
                key = (err > tol, abs(b - c), abs(r1 - r2), err, (a, b, c, d))
                if best is None or key < best[0]:
                    best = (key, ((a, b), (c, d)))
    return best[1]


def expand_2x2(m, low: int = 2, high: int = 5):
    """Pairs (system, human) for a 2x2 matrix over two score levels."""
    labels = (high, low)
    pairs = []
    for i in range(2):
        for j in range(2):
            pairs += [(labels[i], labels[j])] * m[i][j]
    return pairs


def sense_groups():
    """Per-sense (system, human) score pairs built to hit the per-sense target kappas."""
    return {sense: expand_2x2(search_2x2(t)) for sense, t in zip(SENSES, SENSE_KAPPA_TARGETS)}


def write_ground_truth(path: Path, rows, with_class: bool = True, factors=None) -> Path:
    header = ["image_id", "seiri", "seiton", "seiso", "seiketsu", "shitsuke"]
    if with_class:
        header.append("class")
    if factors is not None:
        header.append("factor")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, (image_id, scores, cls) in enumerate(rows):
            row = [image_id, *scores]
            if with_class:
                row.append(cls)
            if factors is not None:
                row.append(factors[k] if k < len(factors) else "")
            w.writerow(row)
    return path


def all_score_vectors():
    return itertools.product(range(1, 6), repeat=5)


def write_history(path: Path, items) -> Path:
    """History file from (image_id, points) pairs, one record each."""
    from audit5s.store import HistoryStore

    store = HistoryStore(path)
    for i, (image_id, points) in enumerate(items):
        store.append(record(i, points, image=f"{image_id}.png"))
    return path


def class_validation_files(directory: Path, factors=None) -> tuple[Path, Path]:
    """History and ground truth whose class pairs reproduce REFERENCE_MATRIX."""
    pairs = reference_pairs()
    ids = [f"img_{i + 1:03d}" for i in range(len(pairs))]
    history = write_history(directory / "history.jsonl", [(i, CLASS_SCORES[s]) for i, (s, _) in zip(ids, pairs)])
    truth = write_ground_truth(directory / "gt.csv", [(i, CLASS_SCORES[h], h.value) for i, (_, h) in zip(ids, pairs)],
                               factors=factors)
    return history, truth


def sense_validation_files(directory: Path) -> tuple[Path, Path]:
    """History and ground truth whose per-sense score pairs hit SENSE_KAPPA_TARGETS."""
    groups = sense_groups()
    n = len(next(iter(groups.values())))
    ids = [f"img_{i + 1:03d}" for i in range(n)]
    system = [tuple(groups[s][i][0] for s in SENSES) for i in range(n)]
    human = [tuple(groups[s][i][1] for s in SENSES) for i in range(n)]
    history = write_history(directory / "history.jsonl", list(zip(ids, system)))
    truth = write_ground_truth(directory / "gt.csv", [(i, h, "") for i, h in zip(ids, human)], with_class=False)
    return history, truth
