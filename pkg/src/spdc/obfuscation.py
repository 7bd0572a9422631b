"""Client-side blinding: seed derivation, blinding keys, cipher and decipher.

The cipher scales row i of M by 1/v_i (EWD) or v_i (EWM), then rotates the
result by an angle chosen from the seed. Because prod(v) equals the seed,
the determinant of M is recoverable from det(X) and the seed alone.
"""

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .flops import FlopCounter
from .matrix_core import DetValue, as_matrix, rotate, rotation_sign

PSI_MIN = 2.0
PSI_MAX = float(2**20)
MODES = ("EWD", "EWM")

# blinding draws: log-uniform within a factor 8 of the centre, never near 1
DRAW_SPREAD = 8.0
DRAW_EXCLUDE = 1e-3
# accepted spread of the balancing last component around the centre
LAST_SPREAD = 64.0
NEAR_ONE = 1e-6
MAX_KEY_ATTEMPTS = 10_000


class KeyGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedBundle:
    lambda1: bytes
    psi: float
    mu: float
    m_max: float

    def digest(self):
        """Short fingerprint of the seed, safe to print in reports."""
        return hashlib.sha256(struct.pack(">d", self.psi)).hexdigest()[:16]


@dataclass(frozen=True)
class BlindingKey:
    v: np.ndarray
    mode: str
    lambda2: bytes

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("blinding vector must be a non-empty 1-D array")
        if np.any(np.abs(v - 1.0) <= NEAR_ONE) or np.any(v <= 0):
            raise ValueError("blinding entries must be positive and differ from 1")
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.v.size


@dataclass(frozen=True)
class CipherEnvelope:
    x: np.ndarray
    n_original: int
    theta: int
    mode: str
    pad: int = 0
    scale_ops: int = 0

    def meta(self):
        """Everything decipher needs except the seed (the matrix is dropped)."""
        return CipherMeta(self.n_original, self.theta, self.mode, self.pad)


@dataclass(frozen=True)
class CipherMeta:
    n_original: int
    theta: int
    mode: str
    pad: int = 0


def _encode_seed_input(lambda1, mu, m_max):
    return struct.pack(">Q", len(lambda1)) + bytes(lambda1) + struct.pack(">dd", mu, m_max)


def psi_from_hash(lambda1, mu, m_max):
    digest = hashlib.sha256(_encode_seed_input(lambda1, mu, m_max)).digest()
    u = int.from_bytes(digest[:8], "big")
    return PSI_MIN + (u / 2.0**64) * (PSI_MAX - PSI_MIN)


def seed_gen(lambda1, m, counter=None):
    m = as_matrix(m, square=True)
    mu = float(m.mean())
    m_max = float(m.max())
    if counter is not None:
        # one pass for the sum, one for the running maximum, plus the division
        counter.add(2 * m.size)
    return SeedBundle(bytes(lambda1), psi_from_hash(lambda1, mu, m_max), mu, m_max)


class _KeyedStream:
    """Deterministic byte stream from SHAKE-256 over (lambda2, psi, attempt)."""

    def __init__(self, lambda2, psi, attempt):
        self._prefix = (
            b"spdc-keygen" + struct.pack(">Q", len(lambda2)) + bytes(lambda2)
            + struct.pack(">dQ", psi, attempt)
        )
        self._block = 0
        self._buf = b""

    def uniform(self):
        while len(self._buf) < 8:
            self._buf += hashlib.shake_256(self._prefix + struct.pack(">Q", self._block)).digest(256)
            self._block += 1
        word, self._buf = self._buf[:8], self._buf[8:]
        # 53 random mantissa bits, in [0, 1)
        return (int.from_bytes(word, "big") >> 11) / 2.0**53


def key_gen(lambda2, seed, n, mode="EWD"):
    """Blinding vector with prod(v) == psi and no component near 1.

    Components are drawn log-uniformly within a factor DRAW_SPREAD of
    psi**(1/n); the last one balances the product and must land within a
    factor LAST_SPREAD of the same centre, otherwise the vector is redrawn.
    """
    if n < 1:
        raise ValueError("key length must be >= 1")
    psi = seed.psi
    if not (math.isfinite(psi) and psi > 0):
        raise ValueError("seed psi must be positive")
    centre = math.log(psi) / n
    half = math.log(DRAW_SPREAD)
    for attempt in range(MAX_KEY_ATTEMPTS):
        stream = _KeyedStream(lambda2, psi, attempt)
        logs = []
        while len(logs) < n - 1:
            lv = centre + (2.0 * stream.uniform() - 1.0) * half
            if abs(math.exp(lv) - 1.0) < DRAW_EXCLUDE:
                continue
            logs.append(lv)
        head = np.exp(np.array(logs))
        last = psi / float(np.prod(head)) if n > 1 else psi
        if abs(math.log(last) - centre) > math.log(LAST_SPREAD) or abs(last - 1.0) <= NEAR_ONE:
            continue
        return BlindingKey(np.append(head, last), mode, bytes(lambda2))
    raise KeyGenerationError(f"no admissible blinding vector for psi={psi!r}, n={n}")


def rotate_select(psi):
    """Rotation angle from the floor-quantized seed: (floor(psi) mod 3) + 1."""
    if not (math.isfinite(psi) and psi > 0):
        raise ValueError("psi must be finite and positive")
    return {1: 90, 2: 180, 3: 270}[int(math.floor(psi)) % 3 + 1]


def blind_rows(key, m, counter=None):
    m = as_matrix(m, square=True)
    if key.n != m.shape[0]:
        raise ValueError(f"key length {key.n} does not match matrix side {m.shape[0]}")
    if counter is not None:
        counter.add(m.size)
    if key.mode == "EWD":
        return m / key.v[:, None]
    return m * key.v[:, None]


def cipher(key, seed, m):
    """Blind rows, then rotate. Returns the ciphertext with its metadata."""
    counter = FlopCounter()
    blinded = blind_rows(key, m, counter)
    theta = rotate_select(seed.psi)
    x = rotate(blinded, theta)
    return CipherEnvelope(x, blinded.shape[0], theta, key.mode, 0, counter.count)


def correction(seed, meta):
    """det(M) / det(X) as a DetValue."""
    s = rotation_sign(meta.n_original, meta.theta)
    factor = seed.psi if meta.mode == "EWD" else 1.0 / seed.psi
    return DetValue.from_float(s * factor)


def decipher(seed, meta, det_x, counter=None):
    """Recover det(M) from det(X): EWD multiplies by s*psi, EWM divides by it.

    ``s`` is the exact rotation sign for the original size, so the result is
    correct for every n, not only n = 2, 3 (mod 4).
    """
    if meta.mode not in MODES:
        raise ValueError(f"unknown mode {meta.mode!r}")
    if det_x.is_zero:
        return DetValue.zero()
    s = rotation_sign(meta.n_original, meta.theta)
    if counter is not None:
        counter.add(2)
    scaled = det_x * s
    if meta.mode == "EWD":
        return scaled * seed.psi
    return scaled / seed.psi


def format_key_file(seed, key, theta):
    lines = [
        f"lambda1={seed.lambda1.hex()}",
        f"psi={seed.psi!r}",
        f"mode={key.mode}",
        "v=" + ",".join(repr(float(x)) for x in key.v),
        f"theta={theta}",
    ]
    return "\n".join(lines) + "\n"


def parse_key_file(text):
    """Inverse of ``format_key_file``; returns a dict of typed fields."""
    fields = {}
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key=value")
        k, val = line.split("=", 1)
        fields[k.strip()] = val.strip()
    missing = {"lambda1", "psi", "mode", "v", "theta"} - fields.keys()
    if missing:
        raise ValueError(f"missing fields: {', '.join(sorted(missing))}")
    theta = int(fields["theta"])
    if theta not in (90, 180, 270):
        raise ValueError(f"theta must be 90, 180 or 270, got {theta}")
    if fields["mode"] not in MODES:
        raise ValueError(f"mode must be EWD or EWM, got {fields['mode']!r}")
    return {
        "lambda1": bytes.fromhex(fields["lambda1"]),
        "psi": float(fields["psi"]),
        "mode": fields["mode"],
        "v": np.array([float(x) for x in fields["v"].split(",")]),
        "theta": theta,
    }
