"""
End to end: corpus to benchmark
===============================

The same steps as the command line tool, on a 20-matrix desk corpus:

    fetch -> profile -> features -> label -> train -> bench

Fetching is shown against an in-memory transport so the script runs offline.
"""

import hashlib
import sys
import tempfile
from pathlib import Path

from sparse_oracle import fetch_corpus, write_matrix_market
from sparse_oracle.cli import main
from sparse_oracle.ingest import CorpusEntry, dumps_matrix_market, write_manifest
from sparse_oracle.synthetic import desk_corpus

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 50
work = Path(tempfile.mkdtemp(prefix="sparse-oracle-"))
corpus = work / "corpus"
print("working in", work)

# a manifest pointing at fake URLs, and a transport that serves them
matrices = desk_corpus(seed=0)
served, entries = {}, []
for mid, m in list(matrices.items())[:3]:
    data = dumps_matrix_market(m).encode()
    url = f"https://matrices.invalid/{mid}.mtx"
    served[url] = data
    entries.append(CorpusEntry(mid, "desk", url, m.nrows, m.ncols, m.nnz,
                               "sha256:" + hashlib.sha256(data).hexdigest()))
write_manifest(entries, work / "manifest.csv")
report = fetch_corpus(work / "manifest.csv", corpus, transport=served.__getitem__)
print(f"fetched {report.downloaded}, skipped {report.skipped}")
report = fetch_corpus(work / "manifest.csv", corpus, transport=served.__getitem__)
print(f"second run: fetched {report.downloaded}, skipped {report.skipped}")

# the rest of the corpus is written locally
for mid, m in matrices.items():
    if not (corpus / f"{mid}.mtx").exists():
        write_matrix_market(m, corpus / f"{mid}.mtx")

(work / "grid.txt").write_text("n_estimators = 10, 20\nmax_depth = none, 4\n")

steps = [
    ["--reps", reps, "profile", corpus, "-o", work / "profile.csv"],
    ["features", corpus, "-o", work / "features.csv"],
    ["label", work / "features.csv", work / "profile.csv", "-o", work / "training.csv"],
    ["train", work / "training.csv", "--grid", work / "grid.txt", "-o", work / "model.txt"],
    ["predict", corpus / "band00.mtx", "--model", work / "model.txt"],
    ["--reps", reps, "bench", corpus, "--model", work / "model.txt", "-o", work / "bench.csv"],
]
for argv in steps:
    argv = [str(a) for a in argv]
    print("\n$ sparse-oracle", " ".join(argv))
    if main(argv) != 0:
        sys.exit(f"step failed: {argv}")

print("\nformat distribution:")
print((work / "profile_distribution.csv").read_text())
print("bench summary:")
print((work / "bench_summary.csv").read_text())
