"""
Storage formats and SpMV
========================

Build one small matrix, store it in every format, multiply, and see what
padding each layout costs.
"""

import numpy as np

from sparse_oracle import (ConversionConfig, CooMatrix, FormatId, PaddingOverflow, extract_features, from_coo, spmv,
                           spmv_parallel)
from sparse_oracle.formats import padded_size
from sparse_oracle.synthetic import banded_coo

# the 3x3 matrix used throughout the tests
A = CooMatrix.from_triplets(3, 3, [0, 0, 1, 2, 2], [0, 2, 1, 0, 2], [1.0, 2.0, 3.0, 4.0, 5.0])
x = np.ones(3)



def padding(coo, fmt):
    f = extract_features(from_coo(coo))
    return padded_size(fmt, nrows=f.m, nnz=f.nnz, max_row_nnz=f.max_nnz_per_row, ndiags=f.ndiags,
                       ntrue_diags=f.ntrue_diags)


for fmt in FormatId:
    m = from_coo(A, fmt)
    print(f"{fmt.name:4s} y = {spmv(m, x)}  padded slots = {padding(A, fmt)}")

# switching keeps the values; only the layout changes
m = from_coo(A, FormatId.COO)
m.switch(FormatId.HDC)
assert m.to_coo() == A

# a long anti-diagonal needs one DIA diagonal per row, which the padding cap refuses
n = 200
anti = CooMatrix.from_triplets(n, n, np.arange(n), np.arange(n)[::-1], np.ones(n))
try:
    from_coo(anti, FormatId.DIA)
except PaddingOverflow as exc:
    print("DIA refused:", exc)

# lifting the cap makes it possible, at a price
big = from_coo(anti, FormatId.DIA, ConversionConfig(max_padding_factor=1e6))
print("uncapped DIA stores", big.payload.values.size, "slots for", n, "nonzeros")

# row-parallel kernels give the same answer as the serial ones
band = banded_coo(5000, 4)
x = np.random.default_rng(0).standard_normal(5000)
for fmt in (FormatId.CSR, FormatId.DIA, FormatId.ELL):
    m = from_coo(band, fmt)
    diff = np.max(np.abs(spmv_parallel(m, x, 4) - spmv(m, x)))
    print(f"{fmt.name}: serial vs 4 threads max diff {diff:.1e}")
