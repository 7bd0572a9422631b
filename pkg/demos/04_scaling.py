"""
Per-server work and critical path
=================================

Flop counts are exact scalar operation tallies. The critical path is the
longest chain of dependent work, carried along in message timestamps.
"""

import numpy as np

from spdc import run_protocol

rng = np.random.default_rng(5)

print(f"{'n':>4} {'N':>3} {'max server':>11} {'critical path':>14} {'messages':>9} {'reals':>7}")
for n in (24, 48, 96):
    m = rng.uniform(-1, 1, (n, n)) + n * np.eye(n)
    for n_servers in (2, 3, 4, 6, 8):
        out = run_protocol(m, n_servers=n_servers, rng_seed=n)
        print(f"{n:4d} {n_servers:3d} {out.ops['max_server']:11d} {out.ops['critical_path']:14d} "
              f"{out.trace.messages:9d} {out.trace.reals_sent:7d}")

# the client side stays cheap: n^2 to blind, a handful to decipher
out = run_protocol(rng.uniform(-1, 1, (64, 64)) + 64 * np.eye(64), n_servers=4)
print({k: v for k, v in out.ops.items() if k in ("cipher", "authenticate", "decipher")})
