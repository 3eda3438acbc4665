"""
The ten matrix features
=======================

Features are what the model sees instead of the matrix. They are cheap:
two passes over the nonzeros, whatever the active format.
"""

import numpy as np

from sparse_oracle import FEATURE_NAMES, CooMatrix, FormatId, extract_features, from_coo
from sparse_oracle.synthetic import banded_coo, powerlaw_coo

A = CooMatrix.from_triplets(3, 3, [0, 0, 1, 2, 2], [0, 2, 1, 0, 2], [1.0, 2.0, 3.0, 4.0, 5.0])

# at ratio 0.5 a diagonal needs 2 nonzeros to count as "true"; only the main one has them
f = extract_features(from_coo(A), true_diag_ratio=0.5)
for name, value in zip(FEATURE_NAMES, f.to_row()):
    print(f"  {name:18s} {value:.4f}")

# the same numbers come out whichever format is active
rows = {fmt: extract_features(from_coo(A, fmt), 0.5).to_row() for fmt in FormatId}
assert all(np.array_equal(r, rows[FormatId.COO]) for r in rows.values())

# a band and a power-law matrix look very different in feature space
rng = np.random.default_rng(3)
for label, m in [("band", banded_coo(3000, 3)), ("power-law", powerlaw_coo(rng, 3000))]:
    f = extract_features(from_coo(m, FormatId.CSR))
    print(f"{label:10s} ndiags={f.ndiags:5d} true={f.ntrue_diags:2d} "
          f"spread={f.nnz_row_spread:8.2f} min/max row nnz={f.min_nnz_per_row}/{f.max_nnz_per_row}")
