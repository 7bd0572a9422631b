"""
Three servers, one direction
============================

Each server owns a block row of the ciphertext. U blocks only travel from
S_i to S_(i+1); everything else goes back to the client.
"""

import numpy as np

from spdc import plan_partition, partition, run_simulation, validate_trace
from spdc.client import assemble
from spdc.matrix_core import augment, lu_plain
from spdc.netsim import LISTING_4, compare_with_listing

rng = np.random.default_rng(3)

# a 4x4 input cannot be cut into 3 block rows of size > 1, so it is bordered
plan = plan_partition(4, 3)
print("pad =", plan.pad, " block size =", plan.block_size)

x = rng.uniform(-1, 1, (4, 4)) + 4 * np.eye(4)
x = augment(x, plan.pad, rng=rng)
grid = partition(x, 3)
results, trace = run_simulation(plan, grid)
print(trace.to_text())

print("violations:", validate_trace(trace) or "none")

lower, upper = assemble(results, 3)
ref_l, ref_u = lu_plain(x)
print("max |L - L_dense| =", np.abs(lower - ref_l).max())
print("max |U - U_dense| =", np.abs(upper - ref_u).max())

# with four servers the third one also passes along U_14 and U_23,
# which the fourth needs for L_41..L_43
x = rng.uniform(-1, 1, (8, 8)) + 8 * np.eye(8)
_, trace = run_simulation(plan_partition(8, 4), partition(x, 4))
for channel, (seen, listed) in compare_with_listing(trace, LISTING_4).items():
    print(channel, "observed", seen)
    print(channel, "listed  ", listed)
