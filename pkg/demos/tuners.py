"""
Auto-tuning a multiply
======================

Three ways to pick a format before y = A x: time every format (run-first),
ask one decision tree, or ask a forest. The ML tuners only pay for feature
extraction and a prediction.
"""

import numpy as np

from sparse_oracle import FormatId, HyperParams, TunerConfig, from_coo, train_forest, tune_multiply
from sparse_oracle.synthetic import banded_coo, powerlaw_coo, separable_dataset

rng = np.random.default_rng(1)
matrices = {"band": banded_coo(20000, 4), "power-law": powerlaw_coo(rng, 20000)}
forest = train_forest(separable_dataset(1), HyperParams(n_estimators=20))
cfg = TunerConfig(repetitions=50)

for name, coo in matrices.items():
    x = rng.standard_normal(coo.ncols)
    print(name)

    m = from_coo(coo, FormatId.CSR)
    y, out = tune_multiply(m, x, "run_first", cfg)
    for t in out.per_format_timings:
        cell = f"{1e6 * t.sample.total_seconds / cfg.repetitions:8.1f} us" if t.feasible else "  infeasible"
        print(f"  {t.format.name:4s}{cell}")
    print(f"  run-first picked {out.chosen.name} after {out.tuning_seconds:.3f} s of tuning")

    m = from_coo(coo, FormatId.CSR)
    y_ml, out = tune_multiply(m, x, forest, cfg)
    note = f" (predicted {out.predicted.name}, infeasible)" if out.fallback else ""
    print(f"  forest picked {out.chosen.name}{note} after {1e3 * out.tuning_seconds:.2f} ms")
    assert np.allclose(y, y_ml, rtol=1e-12, atol=0)
