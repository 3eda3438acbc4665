"""
Getting matrices in and tables out.

* Matrix Market coordinate files (real / integer / pattern, general / symmetric).
* Manifest-driven corpus download with checksum checks and retries.
* The CSV tables of the training pipeline: profile records, feature rows and
  the labelled training set.
"""

from __future__ import annotations

import csv
import dataclasses
import gzip
import hashlib
import io
import logging
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ChecksumMismatch, IndexOutOfRange, JoinError, NetworkError, ParseError, UnsupportedFormat
from .features import FEATURE_NAMES, FeatureVector, row_to_features
from .formats import CooMatrix, FormatId
from .trainer import TRAINING_HEADER, feature_cells

log = logging.getLogger(__name__)

MM_BANNER = "%%MatrixMarket"
MM_FIELDS = ("real", "integer", "pattern")
MM_SYMMETRIES = ("general", "symmetric")


@dataclass(frozen=True)
class MatrixMarketHeader:
    object: str = "matrix"
    format: str = "coordinate"
    field: str = "real"
    symmetry: str = "general"

    @classmethod
    def parse(cls, line: str, lineno: int = 1) -> MatrixMarketHeader:
        parts = line.strip().split()
        if len(parts) != 5 or parts[0] != MM_BANNER:
            raise ParseError(f"expected '{MM_BANNER} matrix coordinate <field> <symmetry>'", lineno)
        obj, fmt, fld, sym = (p.lower() for p in parts[1:])
        if obj != "matrix":
            raise UnsupportedFormat(f"object {obj!r} is not supported")
        if fmt != "coordinate":
            raise UnsupportedFormat(f"format {fmt!r} is not supported (coordinate only)")
        if fld not in MM_FIELDS:
            raise UnsupportedFormat(f"field {fld!r} is not supported")
        if sym not in MM_SYMMETRIES:
            raise UnsupportedFormat(f"symmetry {sym!r} is not supported")
        return cls(obj, fmt, fld, sym)


def _open_text(path, mode="rt"):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def parse_matrix_market(lines: Iterable[str]) -> CooMatrix:
    it = iter(enumerate(lines, 1))
    try:
        lineno, first = next(it)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    header = MatrixMarketHeader.parse(first, lineno)

    size = None
    for lineno, line in it:
        s = line.strip()
        if s and not s.startswith("%"):
            size = s.split()
            break
    if size is None:
        raise ParseError("missing size line", lineno + 1)
    try:
        nrows, ncols, nnz = (int(t) for t in size)
    except ValueError:
        raise ParseError(f"bad size line {' '.join(size)!r}", lineno) from None
    if min(nrows, ncols, nnz) < 0:
        raise ParseError("negative size", lineno)
    if header.symmetry == "symmetric" and nrows != ncols:
        raise ParseError("symmetric matrix must be square", lineno)

    pattern = header.field == "pattern"
    want = 2 if pattern else 3
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.ones(nnz)
    k = 0
    for lineno, line in it:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        if k >= nnz:
            raise ParseError(f"more than the declared {nnz} entries", lineno)
        parts = s.split()
        if len(parts) < want:
            raise ParseError(f"entry needs {want} fields, got {len(parts)}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            if not pattern:
                vals[k] = float(parts[2])
        except ValueError:
            raise ParseError(f"unparseable entry {s!r}", lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise IndexOutOfRange(f"entry ({i}, {j}) outside {nrows}x{ncols}", lineno)
        rows[k], cols[k] = i - 1, j - 1
        k += 1
    if k != nnz:
        raise ParseError(f"declared {nnz} entries, found {k}", lineno + 1 if nnz else lineno)

    if header.symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return CooMatrix.from_triplets(nrows, ncols, rows, cols, vals)


def read_matrix_market(path) -> CooMatrix:
    """Read a ``.mtx`` (or ``.mtx.gz``) coordinate file into canonical COO."""
    with _open_text(path) as fh:
        return parse_matrix_market(fh)


def dumps_matrix_market(m: CooMatrix) -> str:
    out = io.StringIO()
    out.write(f"{MM_BANNER} matrix coordinate real general\n")
    out.write(f"{m.nrows} {m.ncols} {m.nnz}\n")
    for i, j, v in zip(m.row_idx.tolist(), m.col_idx.tolist(), m.values.tolist()):
        out.write(f"{i + 1} {j + 1} {v!r}\n")
    return out.getvalue()


def write_matrix_market(m: CooMatrix, path) -> None:
    with _open_text(path, "wt") as fh:
        fh.write(dumps_matrix_market(m))


def matrix_id_of(path) -> str:
    name = Path(path).name
    for suffix in (".mtx.gz", ".mtx"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def scan_corpus(corpus_dir) -> dict[str, Path]:
    """Matrix files in ``corpus_dir`` keyed by id, sorted by id."""
    found = {}
    for p in sorted(Path(corpus_dir).rglob("*")):
        if p.is_file() and (p.name.endswith(".mtx") or p.name.endswith(".mtx.gz")):
            found.setdefault(matrix_id_of(p), p)
    return dict(sorted(found.items()))


# corpus download ----------------------------------------------------------

MANIFEST_HEADER = ("matrix_id", "group", "download_url", "nrows", "ncols", "nnz", "checksum")


@dataclass(frozen=True)
class CorpusEntry:
    matrix_id: str
    group: str
    download_url: str
    nrows: int
    ncols: int
    nnz: int
    checksum: str = ""
    local_path: Path | None = None


@dataclass(frozen=True)
class CorpusFilter:
    min_rows: int | None = None
    max_rows: int | None = None
    min_nnz: int | None = None
    max_nnz: int | None = None
    square_only: bool = False

    def accepts(self, e: CorpusEntry) -> bool:
        return not (
            (self.min_rows is not None and e.nrows < self.min_rows)
            or (self.max_rows is not None and e.nrows > self.max_rows)
            or (self.min_nnz is not None and e.nnz < self.min_nnz)
            or (self.max_nnz is not None and e.nnz > self.max_nnz)
            or (self.square_only and e.nrows != e.ncols)
        )


@dataclass
class FetchReport:
    entries: list[CorpusEntry] = field(default_factory=list)
    failed: list[tuple[CorpusEntry, str]] = field(default_factory=list)
    downloaded: int = 0
    skipped: int = 0


def read_manifest(path) -> list[CorpusEntry]:
    entries, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(MANIFEST_HEADER[:-1]) - set(reader.fieldnames)
        if missing:
            raise ParseError(f"manifest lacks columns {sorted(missing)}", 1)
        for lineno, rec in enumerate(reader, 2):
            mid = rec["matrix_id"].strip()
            if mid in seen:
                raise ParseError(f"duplicate matrix_id {mid!r}", lineno)
            seen.add(mid)
            try:
                entries.append(CorpusEntry(mid, rec["group"].strip(), rec["download_url"].strip(),
                                           int(rec["nrows"]), int(rec["ncols"]), int(rec["nnz"]),
                                           (rec.get("checksum") or "").strip()))
            except ValueError:
                raise ParseError("bad integer in manifest row", lineno) from None
    return entries


def write_manifest(entries: Sequence[CorpusEntry], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([e.matrix_id, e.group, e.download_url, e.nrows, e.ncols, e.nnz, e.checksum])


def _digest(checksum: str):
    algo, sep, hexdigest = checksum.partition(":")
    if not sep:
        hexdigest = algo
        algo = {32: "md5", 40: "sha1", 64: "sha256"}.get(len(hexdigest), "sha256")
    return algo.lower(), hexdigest.lower()


def verify_checksum(data: bytes, checksum: str) -> bool:
    """``checksum`` is ``algo:hex`` or bare hex (algorithm guessed from length)."""
    if not checksum:
        return True
    algo, expected = _digest(checksum)
    return hashlib.new(algo, data).hexdigest() == expected


def urllib_transport(url: str, timeout: float = 60.0) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except urllib.error.HTTPError as exc:
        raise NetworkError(f"HTTP {exc.code} for {url}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise NetworkError(f"{url}: {exc}") from exc


def _local_name(e: CorpusEntry) -> str:
    return e.matrix_id + (".mtx.gz" if e.download_url.endswith(".gz") else ".mtx")


def _fetch_one(e, dest, transport, retries, backoff, sleep):
    path = dest / _local_name(e)
    if path.exists():
        if verify_checksum(path.read_bytes(), e.checksum):
            return dataclasses.replace(e, local_path=path), False
        log.warning("%s: checksum mismatch on disk, downloading again", e.matrix_id)
    last = None
    for attempt in range(retries + 1):
        try:
            data = transport(e.download_url)
            break
        except NetworkError as exc:
            last = exc
            if attempt < retries:
                sleep(backoff * 2 ** attempt)
    else:
        raise last
    if not verify_checksum(data, e.checksum):
        raise ChecksumMismatch(f"{e.matrix_id}: downloaded bytes do not match {e.checksum}")
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return dataclasses.replace(e, local_path=path), True


def fetch_corpus(manifest_path, dest_dir, filters: CorpusFilter | None = None, *,
                 transport: Callable[[str], bytes] = urllib_transport, workers: int = 4,
                 retries: int = 3, backoff: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep) -> FetchReport:
    """Download the manifest's matrices into ``dest_dir``.

    Files already present (and matching their checksum) are not fetched
    again. A transport failure is retried ``retries`` times with doubling
    delays; entries that still fail land in ``report.failed`` rather than
    raising.
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    filters = filters or CorpusFilter()
    selected = [e for e in read_manifest(manifest_path) if filters.accepts(e)]
    report = FetchReport()

    def work(e):
        try:
            return e, _fetch_one(e, dest, transport, retries, backoff, sleep), None
        except (NetworkError, ChecksumMismatch, OSError) as exc:
            return e, None, exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(work, selected))
    for e, ok, exc in results:
        if exc is not None:
            log.error("%s: %s", e.matrix_id, exc)
            report.failed.append((e, f"{type(exc).__name__}: {exc}"))
            continue
        entry, fresh = ok
        report.entries.append(entry)
        if fresh:
            report.downloaded += 1
        else:
            report.skipped += 1
    return report


# pipeline tables ----------------------------------------------------------

PROFILE_HEADER = ("matrix_id", "format_id", "repetitions", "total_seconds", "feasible", "backend_label")


@dataclass(frozen=True)
class ProfileRecord:
    matrix_id: str
    format: FormatId
    repetitions: int
    total_seconds: float
    feasible: bool
    backend_label: str = "serial"


def write_profile_csv(records: Sequence[ProfileRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for r in records:
            w.writerow([r.matrix_id, int(r.format), r.repetitions, repr(float(r.total_seconds)),
                        int(r.feasible), r.backend_label])


def read_profile_csv(path) -> list[ProfileRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PROFILE_HEADER[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"profile CSV lacks columns {sorted(missing)}", 1)
        for lineno, rec in enumerate(reader, 2):
            try:
                out.append(ProfileRecord(rec["matrix_id"], FormatId(int(rec["format_id"])),
                                         int(rec["repetitions"]), float(rec["total_seconds"]),
                                         rec["feasible"].strip().lower() in ("1", "true", "t"),
                                         rec.get("backend_label") or "serial"))
            except ValueError as exc:
                raise ParseError(f"bad profile row: {exc}", lineno) from None
    return out


FEATURES_HEADER = ("matrix_id",) + FEATURE_NAMES


def write_features_csv(rows: Mapping[str, FeatureVector], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURES_HEADER)
        for mid, f in rows.items():
            w.writerow([mid, *feature_cells(f)])


def read_features_csv(path) -> dict[str, FeatureVector]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FEATURES_HEADER:
            raise ParseError(f"expected header {','.join(FEATURES_HEADER)}", 1)
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                out[rec[0]] = row_to_features(float(v) for v in rec[1:])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return out


def optimal_format(records: Iterable[ProfileRecord]) -> FormatId | None:
    """Format with the minimum feasible total time; ties go to the lowest ID."""
    feasible = [r for r in records if r.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda r: (r.total_seconds, int(r.format))).format


def group_profiles(profile: Iterable[ProfileRecord]) -> dict[str, list[ProfileRecord]]:
    out: dict[str, list[ProfileRecord]] = {}
    for r in profile:
        out.setdefault(r.matrix_id, []).append(r)
    return out


def build_training_csv(features: Mapping[str, FeatureVector | None], profile: Sequence[ProfileRecord],
                       out_path, corpus: Sequence[CorpusEntry] | None = None) -> int:
    """Join features with profiling winners and write the training CSV.

    ``features`` maps matrix id to its feature vector, or ``None`` where
    extraction failed; those matrices are skipped. Returns the number of
    rows written. Raises :class:`JoinError` for profile records whose
    matrix has no feature entry (or no corpus entry when ``corpus`` is
    given).
    """
    known = set(features)
    if corpus is not None:
        known &= {e.matrix_id for e in corpus}
    by_matrix = group_profiles(profile)
    orphans = sorted(mid for mid in by_matrix if mid not in known)
    if orphans:
        raise JoinError(orphans)
    written = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINING_HEADER)
        for mid in sorted(by_matrix):
            f = features[mid]
            label = optimal_format(by_matrix[mid])
            if f is None:
                log.warning("%s: feature extraction failed, skipped", mid)
                continue
            if label is None:
                log.warning("%s: no feasible profile record, skipped", mid)
                continue
            w.writerow([mid, *feature_cells(f), int(label)])
            written += 1
    return written
