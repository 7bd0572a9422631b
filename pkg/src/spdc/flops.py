"""Scalar operation accounting.

Every multiply, add, subtract and divide counts as one operation. The
counted kernels below compute with numpy but charge the counter with the
number of scalar operations a straightforward loop implementation performs.
"""

from dataclasses import dataclass

from scipy.linalg import solve_triangular


@dataclass
class FlopCounter:
    count: int = 0

    def add(self, ops):
        self.count += int(ops)
        return self


def _charge(counter, ops):
    if counter is not None:
        counter.add(ops)


def matmul(a, b, counter=None):
    """Dense product; a (p x q) @ b (q x r) costs p*r*(2q - 1)."""
    p, q = a.shape
    r = b.shape[1]
    _charge(counter, p * r * (2 * q - 1))
    return a @ b


def subtract(a, b, counter=None):
    _charge(counter, a.size)
    return a - b


def matvec(a, x, counter=None):
    p, q = a.shape
    _charge(counter, p * (2 * q - 1))
    return a @ x


def dot(x, y, counter=None):
    _charge(counter, 2 * x.size - 1)
    return float(x @ y)


def solve_unit_lower_left(l, b, counter=None):
    """Solve L @ Y = B by forward substitution, L unit lower triangular."""
    k = l.shape[0]
    # row r needs r multiplies and r subtractions per right-hand column
    _charge(counter, b.shape[1] * k * (k - 1))
    return solve_triangular(l, b, lower=True, unit_diagonal=True, check_finite=False)


def solve_upper_right(u, b, counter=None):
    """Solve Y @ U = B, U upper triangular with nonzero diagonal."""
    k = u.shape[0]
    # per left-hand row: k(k-1) mul/sub plus k divisions
    _charge(counter, b.shape[0] * k * k)
    return solve_triangular(u, b.T, trans="T", lower=False, check_finite=False).T


def doolittle_ops(k):
    """Scalar operations of an unpivoted Doolittle factorization of a k x k matrix."""
    return sum(m + 2 * m * m for m in range(k))


def sum_products(terms, counter=None):
    """Accumulate a list of (a, b) block pairs as sum a @ b in list order."""
    total = None
    for a, b in terms:
        prod = matmul(a, b, counter)
        if total is None:
            total = prod
        else:
            _charge(counter, prod.size)
            total = total + prod
    return total


__all__ = [
    "FlopCounter",
    "matmul",
    "subtract",
    "matvec",
    "dot",
    "solve_unit_lower_left",
    "solve_upper_right",
    "doolittle_ops",
    "sum_products",
]
