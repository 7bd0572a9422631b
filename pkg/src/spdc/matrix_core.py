"""Dense matrix helpers: rotations, bordering, block partitioning, reference LU.

Matrices are plain ``float64`` numpy arrays. ``as_matrix`` is the single
validation gate; everything else assumes its output.
"""

import math
from dataclasses import dataclass

import numpy as np

from .flops import doolittle_ops

ROTATIONS = (90, 180, 270, 360)

# relative pivot test shared by lu_plain and the edge servers
PIVOT_RTOL = 1e-12


class SingularPivotError(ArithmeticError):
    """A pivot of an unpivoted factorization vanished (relative to its row)."""

    def __init__(self, index, pivot, row_scale):
        self.index = index
        self.pivot = pivot
        self.row_scale = row_scale
        super().__init__(
            f"singular pivot at position {index}: |{pivot:.3e}| < "
            f"{PIVOT_RTOL:g} x row scale {row_scale:.3e}"
        )


class MatrixFormatError(ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where += ": "
        super().__init__(where + message)


def as_matrix(data, square=False):
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    if square and m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape[0]}x{m.shape[1]}")
    return m


@dataclass(frozen=True)
class DetValue:
    """A determinant stored as sign and natural log of its magnitude.

    ``log_abs`` is ``-inf`` when ``sign == 0``.
    """

    sign: int
    log_abs: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign}")
        if self.sign == 0 and self.log_abs != -math.inf:
            object.__setattr__(self, "log_abs", -math.inf)

    @classmethod
    def from_float(cls, value):
        value = float(value)
        if value == 0.0:
            return cls(0, -math.inf)
        return cls(1 if value > 0 else -1, math.log(abs(value)))

    @classmethod
    def zero(cls):
        return cls(0, -math.inf)

    @property
    def is_zero(self):
        return self.sign == 0

    def to_float(self):
        """Plain value; overflows to +-inf when |det| exceeds the float range."""
        if self.sign == 0:
            return 0.0
        try:
            return self.sign * math.exp(self.log_abs)
        except OverflowError:
            return self.sign * math.inf

    def representable(self):
        return self.sign == 0 or self.log_abs < math.log(np.finfo(np.float64).max)

    def __mul__(self, other):
        if not isinstance(other, DetValue):
            other = DetValue.from_float(other)
        if self.sign == 0 or other.sign == 0:
            return DetValue.zero()
        return DetValue(self.sign * other.sign, self.log_abs + other.log_abs)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, DetValue):
            other = DetValue.from_float(other)
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero determinant")
        if self.sign == 0:
            return DetValue.zero()
        return DetValue(self.sign * other.sign, self.log_abs - other.log_abs)

    def isclose(self, other, rel=1e-8):
        """Same sign and log-magnitudes within relative tolerance ``rel``."""
        if self.sign != other.sign:
            return False
        if self.sign == 0:
            return True
        return math.isclose(self.log_abs, other.log_abs, rel_tol=rel, abs_tol=0.0)

    def __str__(self):
        return f"{'-' if self.sign < 0 else '+'}exp({self.log_abs!r})"


def rotate(m, theta):
    """Clockwise rotation by ``theta`` degrees.

    Pure index permutation: transpose then reverse the column order, once per
    quarter turn. ``theta=360`` returns a copy.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"rotation needs a square matrix, got shape {m.shape}")
    if theta not in ROTATIONS:
        raise ValueError(f"rotation must be one of {ROTATIONS}, got {theta!r}")
    out = m
    for _ in range(theta // 90 % 4):
        out = out.T[:, ::-1]
    return np.array(out, copy=True)


def rotation_sign(n, theta):
    """Factor relating det(rotate(m, theta)) to det(m) for an n x n matrix."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if theta not in ROTATIONS:
        raise ValueError(f"rotation must be one of {ROTATIONS}, got {theta!r}")
    if theta in (90, 270):
        return -1 if (n // 2) % 2 else 1
    return 1


def augment(m, p, fill="zero_col", rng=None):
    """Border ``m`` ``p`` times with a unit corner, keeping the determinant.

    ``zero_col`` appends a zero column and a random row ([[A, 0], [r, 1]]);
    ``zero_row`` appends a random column and a zero row ([[A, c], [0, 1]]).
    """
    m = as_matrix(m, square=True)
    if p < 0:
        raise ValueError("padding must be non-negative")
    if fill not in ("zero_col", "zero_row"):
        raise ValueError(f"unknown fill {fill!r}")
    if p == 0:
        return m.copy()
    if rng is None:
        rng = np.random.default_rng()
    out = m
    for _ in range(p):
        k = out.shape[0]
        bordered = np.zeros((k + 1, k + 1))
        bordered[:k, :k] = out
        bordered[k, k] = 1.0
        draws = rng.uniform(-1.0, 1.0, size=k)
        if fill == "zero_col":
            bordered[k, :k] = draws
        else:
            bordered[:k, k] = draws
        out = bordered
    return out


class BlockGrid:
    """N x N grid of equal square blocks, indexed 1..N like X_ij."""

    def __init__(self, blocks):
        self.n_servers = len(blocks)
        if self.n_servers < 1 or any(len(row) != self.n_servers for row in blocks):
            raise ValueError("block grid must be N x N")
        self.block_size = blocks[0][0].shape[0]
        for row in blocks:
            for b in row:
                if b.shape != (self.block_size, self.block_size):
                    raise ValueError("all blocks must be square and of equal size")
        if self.block_size <= 1:
            raise ValueError("block size must exceed 1")
        self._blocks = blocks

    def __getitem__(self, ij):
        i, j = ij
        if not (1 <= i <= self.n_servers and 1 <= j <= self.n_servers):
            raise IndexError(f"block ({i}, {j}) outside 1..{self.n_servers}")
        return self._blocks[i - 1][j - 1]

    def row(self, i):
        """Blocks X_i1..X_iN."""
        return [self[i, j] for j in range(1, self.n_servers + 1)]

    @property
    def side(self):
        return self.n_servers * self.block_size

    def reassemble(self):
        return np.block(self._blocks)


def partition(m, n_servers):
    m = as_matrix(m, square=True)
    side = m.shape[0]
    if n_servers < 1 or side % n_servers or side // n_servers <= 1:
        raise ValueError(
            f"a {side}x{side} matrix cannot be split across {n_servers} servers "
            "into blocks larger than 1x1; pad it first (see plan_partition/augment)"
        )
    b = side // n_servers
    blocks = [
        [m[i * b:(i + 1) * b, j * b:(j + 1) * b].copy() for j in range(n_servers)]
        for i in range(n_servers)
    ]
    return BlockGrid(blocks)


def det_oracle(m):
    """Reference determinant via LAPACK's partially pivoted LU (sign/log form)."""
    m = as_matrix(m, square=True)
    sign, logabs = np.linalg.slogdet(m)
    if sign == 0:
        return DetValue.zero()
    return DetValue(int(sign), float(logabs))


def det_cofactor(m):
    """Exact Laplace expansion along the first row; meant for n <= 4."""
    m = [list(map(float, row)) for row in np.asarray(m)]
    n = len(m)
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * det_cofactor(minor)
    return total


def lu_plain(m, counter=None):
    """Unpivoted Doolittle factorization, L unit lower and U upper triangular."""
    a = as_matrix(m, square=True).copy()
    n = a.shape[0]
    lower = np.eye(n)
    for k in range(n):
        pivot = a[k, k]
        row_scale = float(np.max(np.abs(a[k, k:])))
        if pivot == 0.0 or abs(pivot) < PIVOT_RTOL * row_scale:
            raise SingularPivotError(k, float(pivot), row_scale)
        if k + 1 < n:
            lower[k + 1:, k] = a[k + 1:, k] / pivot
            a[k + 1:, k:] -= np.outer(lower[k + 1:, k], a[k, k:])
            a[k + 1:, k] = 0.0
    if counter is not None:
        counter.add(doolittle_ops(n))
    return lower, np.triu(a)


def read_matrix(text):
    """Parse the text format: "<rows> <cols>" header, then one row per line."""
    lines = [(no, ln) for no, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise MatrixFormatError("empty matrix file")
    no, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise MatrixFormatError("header must be '<rows> <cols>'", line=no)
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise MatrixFormatError("header dimensions must be integers", line=no) from None
    if rows < 1 or cols < 1:
        raise MatrixFormatError("dimensions must be positive", line=no)
    body = lines[1:]
    if len(body) != rows:
        raise MatrixFormatError(f"expected {rows} rows, found {len(body)}")
    data = np.empty((rows, cols))
    for r, (no, ln) in enumerate(body):
        fields = ln.split()
        if len(fields) != cols:
            raise MatrixFormatError(f"expected {cols} values, found {len(fields)}", line=no)
        for c, tok in enumerate(fields):
            try:
                val = float(tok)
            except ValueError:
                raise MatrixFormatError(f"not a number: {tok!r}", line=no, column=c + 1) from None
            if not math.isfinite(val):
                raise MatrixFormatError(f"non-finite value {tok!r}", line=no, column=c + 1)
            data[r, c] = val
    return data


def format_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    out = [f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        out.append(" ".join(f"{x:.17g}" for x in row))
    return "\n".join(out) + "\n"


def load_matrix(path):
    with open(path) as fh:
        return read_matrix(fh.read())


def save_matrix(path, m):
    with open(path, "w") as fh:
        fh.write(format_matrix(m))
