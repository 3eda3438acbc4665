import gzip
import hashlib
import logging

import numpy as np
import pytest

from sparse_oracle.errors import (ChecksumMismatch, IndexOutOfRange, JoinError, NetworkError, ParseError,
                                  UnsupportedFormat)
from sparse_oracle.features import FeatureVector
from sparse_oracle.formats import CooMatrix, FormatId
from sparse_oracle.ingest import (CorpusEntry, CorpusFilter, ProfileRecord, build_training_csv, fetch_corpus,
                                  optimal_format, parse_matrix_market, read_features_csv, read_manifest,
                                  read_matrix_market, read_profile_csv, scan_corpus, verify_checksum,
                                  write_features_csv, write_manifest, write_matrix_market, write_profile_csv)
from sparse_oracle.trainer import read_training_csv

from .conftest import coo_of, random_dense

A_FILE = """%%MatrixMarket matrix coordinate real general
% the 3x3 example
3 3 5
1 1 1.0
1 3 2.0
2 2 3.0
3 1 4.0
3 3 5.0
"""


def test_read_A(A, tmp_path):
    p = tmp_path / "A.mtx"
    p.write_text(A_FILE)
    assert read_matrix_market(p) == A


def test_entries_in_any_order_are_canonicalized(A):
    lines = A_FILE.splitlines()
    shuffled = lines[:3] + lines[3:][::-1]
    assert parse_matrix_market(shuffled) == A


def test_symmetric_mirrors_off_diagonal():
    m = parse_matrix_market(["%%MatrixMarket matrix coordinate real symmetric", "2 2 2", "1 1 4", "2 1 -1"])
    assert m.nnz == 3
    assert m.to_dense().tolist() == [[4, -1], [-1, 0]]


def test_symmetric_keeps_single_diagonal():
    m = parse_matrix_market(["%%MatrixMarket matrix coordinate real symmetric", "3 3 3", "1 1 1", "2 2 2",
                             "3 3 3"])
    assert m.nnz == 3


def test_pattern_and_integer_fields():
    p = parse_matrix_market(["%%MatrixMarket matrix coordinate pattern general", "2 2 2", "1 2", "2 1"])
    assert p.values.tolist() == [1.0, 1.0]
    i = parse_matrix_market(["%%MatrixMarket matrix coordinate integer general", "1 2 1", "1 2 7"])
    assert i.values.tolist() == [7.0]


def test_duplicates_are_summed():
    m = parse_matrix_market(["%%MatrixMarket matrix coordinate real general", "2 2 3", "1 1 1", "1 1 2.5",
                             "2 2 1"])
    assert m.nnz == 2 and m.values.tolist() == [3.5, 1.0]


def test_count_mismatch():
    lines = A_FILE.splitlines()[:-1]
    with pytest.raises(ParseError, match="declared 5"):
        parse_matrix_market(lines)
    with pytest.raises(ParseError):
        parse_matrix_market(A_FILE.splitlines() + ["1 2 9.0"])


def test_index_out_of_range_reports_line():
    lines = A_FILE.splitlines()
    lines[4] = "4 1 1.0"
    with pytest.raises(IndexOutOfRange, match="line 5"):
        parse_matrix_market(lines)


@pytest.mark.parametrize("header", ["%%MatrixMarket matrix array real general",
                                    "%%MatrixMarket matrix coordinate complex general",
                                    "%%MatrixMarket matrix coordinate real hermitian"])
def test_unsupported_headers(header):
    with pytest.raises(UnsupportedFormat):
        parse_matrix_market([header, "1 1 0"])


@pytest.mark.parametrize("lines", [[], ["hello"], ["%%MatrixMarket matrix coordinate real general"],
                                   ["%%MatrixMarket matrix coordinate real general", "2 x 1"],
                                   ["%%MatrixMarket matrix coordinate real general", "1 1 1", "1 1 abc"]])
def test_parse_errors(lines):
    with pytest.raises(ParseError):
        parse_matrix_market(lines)


def test_write_read_identity(tmp_path):
    for k, D in enumerate(random_dense(51, 50)):
        m = coo_of(D * np.pi)
        path = tmp_path / f"m{k}.mtx{'.gz' if k % 5 == 0 else ''}"
        write_matrix_market(m, path)
        assert read_matrix_market(path) == m


def test_scan_corpus(tmp_path):
    write_matrix_market(CooMatrix.empty(2, 2), tmp_path / "b.mtx")
    sub = tmp_path / "grp"
    sub.mkdir()
    write_matrix_market(CooMatrix.empty(1, 1), sub / "a.mtx.gz")
    (tmp_path / "notes.txt").write_text("x")
    assert list(scan_corpus(tmp_path)) == ["a", "b"]


# fetching -----------------------------------------------------------------

class StubTransport:
    def __init__(self, files, fail=()):
        self.files = files
        self.fail = set(fail)
        self.calls = []

    def __call__(self, url):
        self.calls.append(url)
        if url in self.fail:
            raise NetworkError(f"HTTP 404 for {url}")
        return self.files[url]


def make_manifest(tmp_path, n=3, checksum=True):
    files, entries = {}, []
    for k in range(n):
        data = f"%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 {k + 1}.0\n".encode()
        url = f"https://example.org/m{k}.mtx"
        files[url] = data
        digest = "sha256:" + hashlib.sha256(data).hexdigest() if checksum else ""
        entries.append(CorpusEntry(f"m{k}", "grp", url, 1 + k, 1 + k, k + 1, digest))
    path = tmp_path / "manifest.csv"
    write_manifest(entries, path)
    return path, files


def test_empty_manifest(tmp_path):
    path = tmp_path / "empty.csv"
    write_manifest([], path)
    report = fetch_corpus(path, tmp_path / "out", transport=StubTransport({}))
    assert report.entries == [] and report.failed == []


def test_fetch_then_idempotent(tmp_path):
    manifest, files = make_manifest(tmp_path)
    stub = StubTransport(files)
    first = fetch_corpus(manifest, tmp_path / "out", transport=stub)
    assert first.downloaded == 3 and len(stub.calls) == 3
    assert read_matrix_market(first.entries[2].local_path).values.tolist() == [3.0]
    again = StubTransport(files)
    second = fetch_corpus(manifest, tmp_path / "out", transport=again)
    assert again.calls == [] and second.skipped == 3 and second.downloaded == 0


def test_partial_failure(tmp_path):
    manifest, files = make_manifest(tmp_path)
    stub = StubTransport(files, fail={"https://example.org/m1.mtx"})
    sleeps = []
    report = fetch_corpus(manifest, tmp_path / "out", transport=stub, retries=2, sleep=sleeps.append)
    assert sorted(e.matrix_id for e in report.entries) == ["m0", "m2"]
    assert [e.matrix_id for e, _ in report.failed] == ["m1"]
    assert "404" in report.failed[0][1]
    assert sleeps == [1.0, 2.0]
    assert not (tmp_path / "out" / "m1.mtx").exists()


def test_retry_recovers(tmp_path):
    manifest, files = make_manifest(tmp_path, n=1)
    attempts = []

    def flaky(url):
        attempts.append(url)
        if len(attempts) < 3:
            raise NetworkError("timeout")
        return files[url]

    report = fetch_corpus(manifest, tmp_path / "out", transport=flaky, sleep=lambda s: None)
    assert report.downloaded == 1 and len(attempts) == 3


def test_checksum_mismatch_is_a_failure(tmp_path):
    manifest, files = make_manifest(tmp_path, n=1)
    bad = {url: b"corrupt" for url in files}
    report = fetch_corpus(manifest, tmp_path / "out", transport=StubTransport(bad))
    assert len(report.failed) == 1 and ChecksumMismatch.__name__ in report.failed[0][1]


def test_corrupt_local_file_is_refetched(tmp_path):
    manifest, files = make_manifest(tmp_path, n=1)
    out = tmp_path / "out"
    out.mkdir()
    (out / "m0.mtx").write_text("garbage")
    stub = StubTransport(files)
    report = fetch_corpus(manifest, out, transport=stub)
    assert report.downloaded == 1 and len(stub.calls) == 1


def test_filters(tmp_path):
    manifest, files = make_manifest(tmp_path, n=3)
    stub = StubTransport(files)
    report = fetch_corpus(manifest, tmp_path / "out", CorpusFilter(min_rows=2, max_nnz=2), transport=stub)
    assert [e.matrix_id for e in report.entries] == ["m1"]


def test_manifest_round_trip(tmp_path):
    manifest, _ = make_manifest(tmp_path)
    entries = read_manifest(manifest)
    again = tmp_path / "again.csv"
    write_manifest(entries, again)
    assert read_manifest(again) == entries


def test_manifest_rejects_duplicates(tmp_path):
    p = tmp_path / "dup.csv"
    e = CorpusEntry("x", "g", "u", 1, 1, 1)
    write_manifest([e, e], p)
    with pytest.raises(ParseError):
        read_manifest(p)


def test_verify_checksum_forms():
    data = b"abc"
    assert verify_checksum(data, hashlib.md5(data).hexdigest())
    assert verify_checksum(data, "sha1:" + hashlib.sha1(data).hexdigest())
    assert not verify_checksum(data, "sha256:" + "0" * 64)
    assert verify_checksum(data, "")


def test_gz_download_keeps_extension(tmp_path):
    raw = b"%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2.0\n"
    url = "https://example.org/z.mtx.gz"
    write_manifest([CorpusEntry("z", "g", url, 1, 1, 1)], tmp_path / "m.csv")
    report = fetch_corpus(tmp_path / "m.csv", tmp_path / "out", transport=StubTransport({url: gzip.compress(raw)}))
    assert report.entries[0].local_path.name == "z.mtx.gz"
    assert read_matrix_market(report.entries[0].local_path).values.tolist() == [2.0]


# pipeline tables ----------------------------------------------------------

def rec(mid, fmt, t, feasible=True):
    return ProfileRecord(mid, FormatId(fmt), 10, t, feasible)


def fv(nnz=3):
    return FeatureVector(3, 3, nnz, nnz / 3, nnz / 9, 2, 0, 0.5, 2, 1)


def test_optimal_format_rules():
    assert optimal_format([rec("a", 0, 2.0), rec("a", 1, 1.0)]) == FormatId.CSR
    assert optimal_format([rec("a", 1, 1.0), rec("a", 0, 1.0)]) == FormatId.COO
    assert optimal_format([rec("a", 2, 0.1, False), rec("a", 3, 0.5)]) == FormatId.ELL
    assert optimal_format([rec("a", 2, float("nan"), False)]) is None


def test_single_matrix_csr_label(tmp_path):
    out = tmp_path / "train.csv"
    n = build_training_csv({"a": fv()}, [rec("a", 0, 2.0), rec("a", 1, 1.0)], out)
    assert n == 1
    assert read_training_csv(out).labels.tolist() == [1]


def test_tie_label_is_lowest_id(tmp_path):
    out = tmp_path / "train.csv"
    build_training_csv({"a": fv()}, [rec("a", 1, 1.5), rec("a", 0, 1.5)], out)
    assert read_training_csv(out).labels.tolist() == [0]


def test_failed_extraction_is_skipped(tmp_path, caplog):
    out = tmp_path / "train.csv"
    profile = [rec(m, f, 1.0 + f) for m in "abc" for f in range(6)]
    with caplog.at_level(logging.WARNING):
        n = build_training_csv({"a": fv(), "b": None, "c": fv(4)}, profile, out)
    assert n == 2
    assert read_training_csv(out).matrix_ids == ("a", "c")
    assert any("b" in r.message and "skipped" in r.message for r in caplog.records)


def test_orphan_profile_rows_raise(tmp_path):
    with pytest.raises(JoinError) as info:
        build_training_csv({"a": fv()}, [rec("a", 1, 1.0), rec("zz", 1, 1.0)], tmp_path / "t.csv")
    assert info.value.orphans == ["zz"]


def test_corpus_restricts_join(tmp_path):
    corpus = [CorpusEntry("a", "g", "u", 3, 3, 3)]
    with pytest.raises(JoinError):
        build_training_csv({"a": fv(), "b": fv()}, [rec("a", 1, 1.0), rec("b", 1, 1.0)], tmp_path / "t.csv",
                           corpus)


def test_profile_csv_round_trip(tmp_path):
    records = [rec("a", 0, 0.125), rec("a", 2, float("nan"), False),
               ProfileRecord("b", FormatId.HDC, 1000, 1e-7, True, "parallel-4")]
    path = tmp_path / "p.csv"
    write_profile_csv(records, path)
    back = read_profile_csv(path)
    assert [(r.matrix_id, r.format, r.repetitions, r.feasible, r.backend_label) for r in back] == \
        [(r.matrix_id, r.format, r.repetitions, r.feasible, r.backend_label) for r in records]
    assert back[0].total_seconds == 0.125 and np.isnan(back[1].total_seconds) and back[2].total_seconds == 1e-7


def test_features_csv_round_trip(tmp_path):
    rows = {"a": fv(), "b": FeatureVector(5, 7, 1, 0.2, 1 / 35, 1, 0, 0.16, 1, 1)}
    path = tmp_path / "f.csv"
    write_features_csv(rows, path)
    assert read_features_csv(path) == rows
