"""Operation model helpers: ranges, paths, payload patterns."""

import pytest

from crashlab.fsops import (
    FallocFlag,
    FsOpKind,
    PersistKind,
    PersistOp,
    falloc_flag_from_token,
    falloc_flag_token,
    format_range,
    format_size,
    parent_dir,
    parse_range,
    parse_size,
    pattern_bytes,
    same_directory,
)


def test_fourteen_core_kinds():
    assert len(FsOpKind) == 14


def test_persist_kinds():
    assert {k.value for k in PersistKind} == {"fsync", "fdatasync", "sync", "msync"}


def test_sync_takes_no_target():
    with pytest.raises(ValueError):
        PersistOp(PersistKind.SYNC, "foo")
    with pytest.raises(ValueError):
        PersistOp(PersistKind.FSYNC, None)


@pytest.mark.parametrize(
    "text,value",
    [("0", 0), ("16K", 16 * 1024), ("2500", 2500), ("1M", 1024 * 1024), ("8k", 8192)],
)
def test_parse_size(text, value):
    assert parse_size(text) == value


def test_size_format_roundtrip():
    for n in (0, 512, 2500, 4096, 16384, 1024 * 1024, 132 * 1024):
        assert parse_size(format_size(n)) == n


def test_range_roundtrip():
    for lo, hi in ((0, 16384), (8000, 12096), (252 * 1024, 256 * 1024)):
        assert parse_range(format_range(lo, hi)) == (lo, hi)


def test_parse_range_rejects_garbage():
    with pytest.raises(ValueError):
        parse_range("0-16K")
    with pytest.raises(ValueError):
        parse_range("(16K)")


def test_falloc_flag_tokens_roundtrip():
    for flag in FallocFlag:
        tok = falloc_flag_token(flag)
        if tok:
            assert falloc_flag_from_token(tok) is flag


def test_parent_dir():
    assert parent_dir("foo") == "/"
    assert parent_dir("A/foo") == "A"
    assert parent_dir("A/B/foo") == "A/B"
    assert same_directory("foo", "bar")
    assert same_directory("A/foo", "A/bar")
    assert not same_directory("A/foo", "B/foo")


def test_pattern_bytes_deterministic_and_distinct():
    a = pattern_bytes(3, 0, 4096)
    assert a == pattern_bytes(3, 0, 4096)
    assert len(a) == 4096
    assert pattern_bytes(4, 0, 4096) != a
    # suffix of a longer range matches the same absolute offsets
    assert pattern_bytes(3, 512, 4096) == a[512:]


def test_pattern_bytes_empty_range():
    assert pattern_bytes(0, 100, 100) == b""
