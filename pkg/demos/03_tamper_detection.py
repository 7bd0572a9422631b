"""
Catching a dishonest server
===========================

A fault corrupts one block as the server emits it. Q2 compares
(L^T r).(U r) with r^T X r for a random integer vector r; Q3 only
compares the diagonal of LU with the diagonal of X.
"""

import numpy as np

from spdc import run_protocol
from spdc.client import TamperError, authenticate, assemble, prepare, ProtocolConfig
from spdc.netsim import FaultSpec, run_simulation

rng = np.random.default_rng(11)
m = rng.uniform(-1, 1, (12, 12)) + 12 * np.eye(12)

out = run_protocol(m, n_servers=3, method="Q2", rng_seed=1)
print("honest:", out.auth)

fault = FaultSpec.parse("server=2,block=L_21,rel=1e-3")
try:
    run_protocol(m, n_servers=3, method="Q2", rng_seed=1, faults=(fault,))
except TamperError as err:
    print("tampered:", err)

# Q3's blind spot: S1 lies about U_12 consistently, S2 builds on the lie,
# so every diagonal block of LU still matches X
fault = FaultSpec.parse("server=1,block=U_12,rel=1e-3")
prep = prepare(m, ProtocolConfig(n_servers=3))
results, _ = run_simulation(prep.plan, prep.grid, faults=(fault,))
lower, upper = assemble(results, 3)
for method in ("Q2", "Q3"):
    report = authenticate(lower, upper, prep.x, method, np.random.default_rng(0), 3)
    print(f"{method}: value={report.value:.3e} eps={report.epsilon:.3e} verdict={report.verdict}")
