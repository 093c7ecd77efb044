import json
import os
import random
from datetime import timedelta, timezone

import pytest
from helpers import T0, make_batch, make_png, record, write_ground_truth
from hypothesis import given, settings
from hypothesis import strategies as st

from audit5s.domain import SENSES, AuditEvaluation, AuditRecord, Classification
from audit5s.store import (
    CorruptRecord,
    GroundTruthError,
    HistoryStore,
    deserialize,
    load_ground_truth,
    scan_batch,
    serialize,
    timestamp_from_name,
)

# -- batches --------------------------------------------------------------------------


def test_scan_skips_unsupported(tmp_path):
    (tmp_path / "a.png").write_bytes(make_png(1))
    (tmp_path / "b.jpg").write_bytes(b"\xff\xd8\xff\xe0jpeg")
    (tmp_path / "c.txt").write_text("notes")
    batch = scan_batch(tmp_path)
    assert sorted(e.image_path.name for e in batch) == ["a.png", "b.jpg"]
    assert batch.skipped == ["c.txt"]
    assert all(e.timestamp_source == "mtime" for e in batch)


def test_scan_empty_and_missing(tmp_path):
    assert len(scan_batch(tmp_path)) == 0
    with pytest.raises(FileNotFoundError):
        scan_batch(tmp_path / "absent")


def test_scan_orders_by_capture_time(tmp_path):
    paths = make_batch(tmp_path, 75)
    shuffled = paths[:]
    random.Random(1).shuffle(shuffled)
    batch = scan_batch(tmp_path)
    assert len(batch) == 75
    oracle = sorted(paths, key=lambda p: timestamp_from_name(p.name))
    assert [e.image_path for e in batch] == oracle
    assert all(e.timestamp_source == "filename" for e in batch)
    assert batch.entries[0].captured_at == T0


def test_timestamp_from_name():
    assert timestamp_from_name("2025-03-10T17-30-00_x.png") == T0.replace(hour=17, minute=30)
    assert timestamp_from_name("2025-03-10_17-30-00.jpg") == T0.replace(hour=17, minute=30)
    assert timestamp_from_name("photo.png") is None
    assert timestamp_from_name("2025-13-40T00-00-00.png") is None


def test_annotations_attach_notes(tmp_path):
    (tmp_path / "a.png").write_bytes(make_png(1))
    (tmp_path / "annotations.csv").write_text("image_path,note\na.png,glare near window\n")
    batch = scan_batch(tmp_path)
    assert batch.entries[0].notes == "glare near window"
    assert batch.skipped == []


# -- ground truth ---------------------------------------------------------------------------


def test_ground_truth_with_and_without_class(tmp_path):
    rows = [("img_001", (5, 5, 5, 4, 4), "J"), ("img_002", (2, 2, 2, 2, 2), "L")]
    gt = load_ground_truth(write_ground_truth(tmp_path / "a.csv", rows))
    assert gt.rows["img_001"].classification is Classification.J
    assert not gt.inconsistent
    derived = load_ground_truth(write_ground_truth(tmp_path / "b.csv", rows, with_class=False))
    assert derived.rows["img_002"].classification is Classification.L
    assert derived.rows["img_002"].derived_class


def test_ground_truth_class_mismatch_is_flagged(tmp_path, caplog):
    gt = load_ground_truth(write_ground_truth(tmp_path / "gt.csv", [("x", (5, 5, 5, 5, 5), "L")]))
    assert [r.image_id for r in gt.inconsistent] == ["x"]
    assert "declared L" in caplog.text


def test_ground_truth_factor_column(tmp_path):
    rows = [("a", (3, 3, 3, 3, 3), "K"), ("b", (3, 3, 3, 3, 3), "K")]
    gt = load_ground_truth(write_ground_truth(tmp_path / "gt.csv", rows, factors=["lighting"]))
    assert gt.rows["a"].factor == "lighting" and gt.rows["b"].factor is None


@pytest.mark.parametrize("body,line", [
    ("image_id,seiri,seiton,seiso,seiketsu,shitsuke\na,1,2,3,4,6\n", 2),
    ("image_id,seiri,seiton,seiso,seiketsu,shitsuke\na,1,2,3,4,5\nb,1,2,x,4,5\n", 3),
    ("image_id,seiri,seiton,seiso,seiketsu,shitsuke\na,1,2,3,4,5\na,1,2,3,4,5\n", 3),
    ("image_id,seiri,seiton,seiso,seiketsu,shitsuke,class\na,1,2,3,4,5,Q\n", 2),
    ("image_id,seiri,seiton,seiso,seiketsu,shitsuke\na,1,2,3\n", 2),
    ("image_id,seiri,seiton\n", 1),
    ("", 1),
])
def test_ground_truth_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "gt.csv"
    path.write_text(body)
    with pytest.raises(GroundTruthError) as info:
        load_ground_truth(path)
    assert info.value.line == line


# -- history ---------------------------------------------------------------------------------


def test_append_and_read_back(tmp_path):
    store = HistoryStore(tmp_path / "h.jsonl")
    recs = [record(i, (3, 4, 5, 2, 1), raw="UTILIZACAO: 3") for i in range(3)]
    store.extend(reversed(recs))
    out = store.read()
    assert out.records == recs and out.corruptions == []


def test_missing_history_reads_empty(tmp_path):
    out = HistoryStore(tmp_path / "none.jsonl").read()
    assert out.records == [] and out.corruptions == []


def test_range_filter_over_375_records(tmp_path):
    store = HistoryStore(tmp_path / "h.jsonl")
    recs = [record(i, (3,) * 5) for i in range(375)]
    store.extend(recs)
    start, end = T0 + timedelta(hours=100), T0 + timedelta(hours=200)
    got = store.read(start, end).records
    assert [r.id for r in got] == [r.id for r in recs[100:200]]


def test_torn_write_recovers_prior_records(tmp_path):
    path = tmp_path / "h.jsonl"
    store = HistoryStore(path)
    store.extend(record(i, (4,) * 5) for i in range(10))
    data = path.read_bytes()
    path.write_bytes(data[:-25])  # cut into the last line
    out = store.read()
    assert len(out.records) == 9 and len(out.corruptions) == 1
    assert out.corruptions[0].line == 10
    # the next append starts on a fresh line and is readable
    store.append(record(99, (5,) * 5))
    out = store.read()
    assert len(out.records) == 10 and len(out.corruptions) == 1


def test_checksum_detects_edits(tmp_path):
    path = tmp_path / "h.jsonl"
    store = HistoryStore(path)
    store.extend(record(i, (4,) * 5) for i in range(3))
    lines = path.read_text().splitlines()
    payload = json.loads(lines[1])
    payload["scores"]["LIMPEZA"] = 1
    lines[1] = json.dumps(payload)
    path.write_text("\n".join(lines) + "\nnot json\n")
    out = store.read()
    assert len(out.records) == 2
    assert [c.line for c in out.corruptions] == [2, 4]
    assert "checksum" in out.corruptions[0].reason


def test_deserialize_rejects_garbage():
    for bad in ("", "[]", '{"a": 1}', "{"):
        with pytest.raises(CorruptRecord):
            deserialize(bad)


def test_history_file_is_never_rewritten(tmp_path):
    path = tmp_path / "h.jsonl"
    store = HistoryStore(path)
    store.append(record(0, (4,) * 5))
    first = path.read_bytes()
    inode = os.stat(path).st_ino
    store.append(record(1, (4,) * 5))
    assert path.read_bytes().startswith(first) and os.stat(path).st_ino == inode


safe_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=60)
records = st.builds(
    lambda i, pts, off, aud, raw, attempts, notes, src: AuditRecord(
        id=f"id{i}",
        captured_at=T0 + timedelta(seconds=off),
        image_path=f"dir/img {i}.png",
        evaluation=AuditEvaluation.from_points(pts),
        raw_response=raw,
        attempts=attempts,
        backend_name="mock",
        notes=notes,
        image_sha256=None,
        audited_at=None if aud is None else (T0 + timedelta(microseconds=aud)).astimezone(timezone(timedelta(hours=-3))),
        timestamp_source=src,
    ),
    st.integers(0, 10**6),
    st.lists(st.integers(0, 5), min_size=len(SENSES), max_size=len(SENSES)),
    st.integers(0, 10**8),
    st.none() | st.integers(0, 10**12),
    safe_text,
    st.integers(1, 4),
    st.none() | safe_text,
    st.sampled_from(["filename", "mtime"]),
)


@settings(max_examples=1000, deadline=None)
@given(records)
def test_serialization_round_trip(rec):
    line = serialize(rec)
    assert "\n" not in line
    assert deserialize(line) == rec
