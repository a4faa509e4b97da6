import errno
import os
import random

import pytest
from hypothesis import given, settings, strategies as st

from dossync import store
from dossync.errors import (CorruptSnapshot, DiskFull, LockHeld, LockLost, LogGap,
                            SuiteMismatch)
from dossync.store import LOG_FILE, LOCK_FILE, SNAPSHOT_FILE, StateCodec, StateDir

SUITE = "test-suite"
LIST = StateCodec("list", list, list, list, lambda s, r: s.append(r))


def opened(path, durable=False):
    d = StateDir(path, LIST, SUITE, durable=durable)
    return d, d.open()


def fold(records):
    out = []
    for r in records:
        out.append(r)
    return out


def test_fresh_dir_is_empty(tmp_path):
    assert store.load(tmp_path / "none", LIST, SUITE) == []
    d, s = opened(tmp_path)
    assert s == [] and (tmp_path / SNAPSHOT_FILE).exists()
    d.close(s)
    assert store.load(tmp_path, LIST, SUITE) == []


def test_append_sequences_and_fold(tmp_path):
    d, s = opened(tmp_path, durable=True)
    seqs = []
    for i in range(7):
        seqs.append(d.append(i))
        s.append(i)
    assert seqs == list(range(1, 8))
    assert store.load(tmp_path, LIST, SUITE) == fold(range(7))
    d.close()


def test_truncated_final_record_is_dropped(tmp_path):
    d, s = opened(tmp_path)
    for i in range(3):
        d.append({"n": i, "pad": "x" * 10})
    d.abandon()
    log = (tmp_path / LOG_FILE).read_bytes()
    last = store.wire.split_frames(log)[0][-1][0]
    want = fold({"n": i, "pad": "x" * 10} for i in range(2))
    for cut in range(last, len(log)):
        (tmp_path / LOG_FILE).write_bytes(log[:cut])
        assert store.load(tmp_path, LIST, SUITE) == want, cut
    # reopening trims the torn tail so new appends stay contiguous
    (tmp_path / LOG_FILE).write_bytes(log[:last + 5])
    d, s = opened(tmp_path)
    assert s == want and os.path.getsize(tmp_path / LOG_FILE) == last
    assert d.append("next") == 3
    d.abandon()
    assert store.load(tmp_path, LIST, SUITE) == want + ["next"]


@pytest.mark.parametrize("seed", range(8))
def test_crashes_keep_durable_prefix(tmp_path, seed):
    rng = random.Random(seed)
    durable = []
    d, s = opened(tmp_path)
    for step in range(60):
        r = rng.random()
        if r < 0.75:
            d.append(step)
            s.append(step)
            durable.append(step)
        elif r < 0.85:
            d.save(s)
        else:
            d.abandon()
            assert store.load(tmp_path, LIST, SUITE) == fold(durable)
            d, s = opened(tmp_path)
            assert s == fold(durable)
    d.abandon()


def test_crash_between_temp_write_and_rename(tmp_path, monkeypatch):
    d, s = opened(tmp_path)
    for i in range(3):
        d.append(i)
        s.append(i)

    def crash(*a, **k):
        raise KeyboardInterrupt("power cut")
    monkeypatch.setattr(store.os, "replace", crash)
    with pytest.raises(KeyboardInterrupt):
        d.save(s)
    monkeypatch.undo()
    d.abandon()
    assert (tmp_path / (SNAPSHOT_FILE + ".tmp")).exists()
    assert store.load(tmp_path, LIST, SUITE) == [0, 1, 2]
    d, s = opened(tmp_path)
    assert s == [0, 1, 2] and not (tmp_path / (SNAPSHOT_FILE + ".tmp")).exists()
    d.abandon()


@settings(max_examples=30)
@given(st.lists(st.integers(), max_size=20), st.lists(st.integers(), max_size=20))
def test_snapshot_plus_log_equals_pure_replay(tmp_path_factory, first, more):
    path = tmp_path_factory.mktemp("eq")
    d, s = opened(path)
    for r in first:
        d.append(r)
        s.append(r)
    d.save(s)
    assert os.path.getsize(path / LOG_FILE) == 0
    for r in more:
        d.append(r)
    d.abandon()
    assert store.load(path, LIST, SUITE) == fold(first + more)


def test_lock_held_and_stale_lock(tmp_path):
    d, _ = opened(tmp_path)
    with pytest.raises(LockHeld):
        opened(tmp_path)
    d.abandon()
    (tmp_path / LOCK_FILE).write_text("999999999 deadbeef\n")
    d, _ = opened(tmp_path)
    d.abandon()


def test_lock_lost(tmp_path):
    d, _ = opened(tmp_path)
    (tmp_path / LOCK_FILE).write_text(f"{os.getpid()} someone-else\n")
    with pytest.raises(LockLost):
        d.append(1)


def test_suite_mismatch_and_corruption(tmp_path):
    d, s = opened(tmp_path)
    d.close(s)
    with pytest.raises(SuiteMismatch):
        store.load(tmp_path, LIST, "other")
    (tmp_path / SNAPSHOT_FILE).write_bytes(b"\x00\x00\x00\x02{}")
    with pytest.raises(CorruptSnapshot):
        store.load(tmp_path, LIST, SUITE)


def test_log_gap(tmp_path):
    d, s = opened(tmp_path)
    d.append("a")
    d.abandon()
    log = (tmp_path / LOG_FILE).read_bytes()
    bad = store.wire.frame(store.wire.dumps({"record": "c", "sequence": 3}))
    (tmp_path / LOG_FILE).write_bytes(log + bad)
    with pytest.raises(LogGap):
        store.load(tmp_path, LIST, SUITE)


def test_disk_full(tmp_path, monkeypatch):
    d, _ = opened(tmp_path)

    def full(fd, data):
        raise OSError(errno.ENOSPC, "No space left on device")
    monkeypatch.setattr(store.os, "write", full)
    with pytest.raises(DiskFull):
        d.append(1)
    monkeypatch.undo()
    d.abandon()
