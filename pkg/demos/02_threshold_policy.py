"""Agents who only see symptoms isolate once they are sure enough.

For a frozen mean field the optimal rule is a belief threshold.  We compute
it in closed form, recover it from the value-function PDE on grids of
increasing resolution, and then push the infection rate up to see how the
threshold moves.
"""

import numpy as np

from epimfg.grids import BeliefGrid
from epimfg.hjb import policy_threshold, solve_stationary_hjb
from epimfg.model import ModelParams
from epimfg.stationary import (
    case1_limit_check,
    stationary_value_closed_form,
    threshold_constants,
    verify_switching,
)

params = ModelParams()
beta, alpha = 0.05, 0.5

consts = threshold_constants(params, None, beta, alpha)
print(f"closed-form threshold {consts.a_thresh:.6f} (valid={consts.valid})")
report = verify_switching(consts, params)
print("switching checks:", ", ".join(f"{k}={v}" for k, v in report.checks.items()))

prev = None
for n_a in (101, 201, 401):
    grid = BeliefGrid(n_a)
    phi, psi = solve_stationary_hjb(beta, alpha, grid, params)
    err = np.max(np.abs(phi - stationary_value_closed_form(grid.nodes, consts, params)))
    ratio = "" if prev is None else f"  (error ratio {prev / err:.2f})"
    print(f"n_a={n_a:4d}: PDE threshold {policy_threshold(psi, grid.nodes):.5f}, sup error {err:.2e}{ratio}")
    prev = err

print("\nsymptom onset rate ladder:")
rep = case1_limit_check(params, None, beta, alpha)
for row in rep.rows:
    print(f"  lambda_ai={row.lambda_ai:6g}  threshold {row.a_thresh:.5f}  active at a=0: {bool(row.psi0)}")
print(f"  limit of the threshold {rep.limit_a_thresh:.5f}")
