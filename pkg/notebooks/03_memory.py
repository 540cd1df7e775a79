"""
Constant memory with the reversible solver
==========================================

Count the activation tapes held while backpropagating through the solver,
for the reversible scheme and for the store-everything baseline.
"""

import numpy as np

from sigflow.sde import LinearField, SolveMode, TapeLedger, backprop_solve, sample_brownian, solve

rng = np.random.default_rng(0)
d = 3
field = LinearField(0.3 * rng.standard_normal((d, d)), 0.2 * rng.standard_normal((d, d)))
z0 = rng.standard_normal(d)

for n in (16, 64, 256):
    bm = sample_brownian(n, 1.0 / n, d, seed=(0, n))
    grads = {}
    for mode in (SolveMode.REVERSIBLE, SolveMode.STORE_ALL):
        ledger = TapeLedger()
        res = solve(field, None, z0, bm, mode=mode, ledger=ledger)
        grads[mode] = backprop_solve(field, res, np.ones_like(res.trajectory))
        print(f"n={n:4d}  {mode.value:10s}  peak tapes {ledger.peak}")
    (za, pa), (zb, pb) = grads.values()
    print(f"          |dz0| {np.linalg.norm(za):.1f}, gradient gap {max(np.abs(za - zb).max(), np.abs(pa - pb).max())}")
