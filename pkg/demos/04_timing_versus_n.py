"""
Cost versus problem size
========================

The Krylov dimension needed for a fixed accuracy is found once on the
smallest problem and then held fixed, so the remaining growth in time comes
from the hierarchical matrix-vector product alone.  The dense baseline
(eigendecomposition) is timed where it fits in memory.
"""

import warnings

from h2field import SampleConfig
from h2field.cli import run_bench

warnings.simplefilter("ignore")

base = SampleConfig(lowdisc=0, mu=0.5, lam=1.0, p=4, eta=1.5, c_leaf=32, batch=8)
rep = run_bench(base, [2**m for m in range(10, 15)], trials=3, dense_max=2**12)

print("     N   assembly [s]   per sample [s]   dense [s]")
for r in rep["rows"]:
    dense = f"{r['dense_sqrt_s']:.3f}" if "dense_sqrt_s" in r else "-"
    print(f"{r['N']:6d}   {r['assembly_s']:12.3f}   {r['krylov_per_sample_s']:14.4f}   {dense:>9}")
print(f"\nKrylov dimension {rep['rows'][0]['krylov_k']} for a 1e-8 increment target")
for col, s in rep["slopes"].items():
    print(f"log-log slope of {col}: {s:.2f}")
