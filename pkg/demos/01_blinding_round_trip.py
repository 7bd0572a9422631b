"""
Blinding a matrix and getting its determinant back
===================================================

The client never ships M itself. It scales each row by a secret factor,
rotates the result, and later corrects the determinant it receives.
"""

import numpy as np

from spdc import det_oracle, rotate, rotation_sign
from spdc.obfuscation import cipher, decipher, key_gen, seed_gen

rng = np.random.default_rng(7)
m = rng.standard_normal((6, 6))
print("det(M) =", det_oracle(m).to_float())

# a quarter turn flips the sign when floor(n/2) is odd
for theta in (90, 180, 270, 360):
    d = det_oracle(rotate(m, theta)).to_float()
    print(f"  rotate {theta:3d}: det = {d:+.6f}  (factor {rotation_sign(6, theta):+d})")

# the seed ties everything together: key product, angle and correction
seed = seed_gen(b"client secret one", m)
key = key_gen(b"client secret two", seed, 6, "EWD")
print("psi =", seed.psi, " prod(v) =", np.prod(key.v))

env = cipher(key, seed, m)
print("rotation picked from the seed:", env.theta)
print("det(X) as the servers would see it:", det_oracle(env.x).to_float())

recovered = decipher(seed, env.meta(), det_oracle(env.x))
print("recovered det(M) =", recovered.to_float())

# EWM multiplies instead of dividing; the correction divides by psi
key = key_gen(b"client secret two", seed, 6, "EWM")
env = cipher(key, seed, m)
print("EWM recovered =", decipher(seed, env.meta(), det_oracle(env.x)).to_float())
