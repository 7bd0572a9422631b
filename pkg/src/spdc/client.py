"""Client side of the protocol: partition planning, result assembly,
authentication and the end-to-end pipeline."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .flops import FlopCounter, dot, matvec, subtract
from .matrix_core import DetValue, as_matrix, augment, partition
from .netsim import ServerFailure, Trace, run_simulation
from .obfuscation import cipher, decipher, key_gen, rotate_select, seed_gen

METHODS = ("Q1", "Q2", "Q3")
TAU0 = 2.0**-40
R_MAX = 2**16


class TamperError(RuntimeError):
    """Authentication rejected the servers' factors."""

    def __init__(self, report, trace=None):
        super().__init__(
            f"authentication failed: {report.method} = {report.value:.6g} exceeds "
            f"threshold {report.epsilon:.6g}"
        )
        self.report = report
        self.trace = trace


class SingularityError(RuntimeError):
    """Every attempt hit a singular pivot."""

    def __init__(self, attempts, last_reason):
        super().__init__(f"singular pivot on all {attempts} attempts; last: {last_reason}")
        self.attempts = attempts
        self.last_reason = last_reason


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    n_servers: int
    pad: int

    @property
    def side(self):
        return self.n + self.pad

    @property
    def block_size(self):
        return self.side // self.n_servers


def plan_partition(n, n_servers):
    """Smallest p >= 0 with (n + p) divisible by N and (n + p) / N > 1."""
    if n < 1:
        raise ValueError("matrix side must be >= 1")
    if n_servers < 2:
        raise ValueError("at least two servers are required")
    side = max(n, 2 * n_servers)
    side += (-side) % n_servers
    return PartitionPlan(n, n_servers, side - n)


def assemble(results, n_servers):
    """Place res_1..res_N into full block-triangular L and U."""
    missing = [i for i in range(1, n_servers + 1) if i not in results]
    if missing:
        names = ", ".join(f"S_{i}" for i in missing)
        raise ValueError(f"incomplete result set: missing {names}")
    b = results[1][("U", 1, 1)].shape[0]
    side = b * n_servers
    lower = np.zeros((side, side))
    upper = np.zeros((side, side))
    for i in range(1, n_servers + 1):
        res = results[i]
        for k in range(1, i + 1):
            lower[(i - 1) * b:i * b, (k - 1) * b:k * b] = res[("L", i, k)]
        for j in range(i, n_servers + 1):
            upper[(i - 1) * b:i * b, (j - 1) * b:j * b] = res[("U", i, j)]
    return lower, upper


def det_from_lu(lower, upper, counter=None):
    """prod(L_ii * U_ii) in sign/log form.

    Unit entries of L's diagonal cost nothing; every other factor costs one
    multiplication, and the running product one per factor after the first.
    """
    ld = np.diag(lower)
    ud = np.diag(upper)
    if np.any(ld == 0.0) or np.any(ud == 0.0):
        return DetValue.zero()
    factors = np.where(ld == 1.0, ud, ld * ud)
    if counter is not None:
        counter.add(int(np.count_nonzero(ld != 1.0)) + factors.size - 1)
    negatives = int(np.count_nonzero(factors < 0))
    return DetValue(-1 if negatives % 2 else 1, float(np.sum(np.log(np.abs(factors)))))


def threshold(n_servers, n, x, method, r=None, term_scale=0.0):
    """tau0 * N * n * S.

    S = 1 + |reference term| + ``term_scale``, where the reference term is
    sum |x_ii| (Q3) or |r^T X r| (Q1/Q2) and ``term_scale`` bounds the
    magnitude of the factor-side terms the check sums, so rounding in a
    large cancelling sum cannot exceed the threshold.
    """
    if method == "Q3":
        scale = float(np.sum(np.abs(np.diag(x))))
    else:
        if r is None:
            raise ValueError(f"{method} threshold needs the random vector")
        scale = abs(float(r @ (x @ r)))
    return TAU0 * n_servers * n * (1.0 + scale + term_scale)


@dataclass(frozen=True)
class AuthReport:
    method: str
    value: float
    epsilon: float
    verdict: int
    r_digest: str = ""
    ops: int = 0

    def __post_init__(self):
        if self.verdict != int(self.value <= self.epsilon):
            raise ValueError("verdict must equal [value <= epsilon]")


def q_value(lower, upper, x, method, r=None, counter=None):
    """Residual of the chosen check and the magnitude of the terms it summed.

    Returns (value, term_scale).
    """
    if method == "Q1":
        lur = matvec(lower, matvec(upper, r, counter), counter)
        resid = subtract(lur, matvec(x, r, counter), counter)
        return float(np.max(np.abs(resid))), float(np.max(np.abs(lur)))
    if method == "Q2":
        left = matvec(lower.T, r, counter)
        right = matvec(upper, r, counter)
        rx = matvec(x.T, r, counter)
        prods = left * right
        value = abs(dot(left, right, counter) - dot(rx, r, counter))
        if counter is not None:
            counter.add(2 * prods.size)
        return value, float(np.sum(np.abs(prods)))
    if method == "Q3":
        n = x.shape[0]
        total = 0.0
        scale = 0.0
        ops = 0
        for i in range(n):
            # (LU)_ii = sum_{j <= i} L_ij U_ji
            prods = lower[i, :i + 1] * upper[:i + 1, i]
            total += float(np.sum(prods)) - x[i, i]
            # (i+1) * max|term| bounds the row's term magnitude
            scale += (i + 1) * float(np.max(np.abs(prods)))
            ops += (i + 1) + i + 1 + 2
        ops += n - 1
        if counter is not None:
            counter.add(ops)
        return abs(total), scale
    raise ValueError(f"unknown method {method!r}")


def authenticate(lower, upper, x, method, rng=None, n_servers=2):
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not (lower.shape == upper.shape == x.shape and x.shape[0] == x.shape[1]):
        raise ValueError("L, U and X must be square and of equal size")
    r = None
    digest = ""
    if method != "Q3":
        if rng is None:
            rng = np.random.default_rng()
        r = rng.integers(1, R_MAX, size=x.shape[0], endpoint=True).astype(np.float64)
        digest = hashlib.sha256(r.tobytes()).hexdigest()[:16]
    counter = FlopCounter()
    value, term_scale = q_value(lower, upper, x, method, r, counter)
    value = float(value)
    eps = threshold(n_servers, x.shape[0], x, method, r, term_scale)
    return AuthReport(method, value, eps, int(value <= eps), digest, counter.count)


def _derive(seed, label, attempt=0):
    return hashlib.sha256(f"spdc:{label}:{seed}:{attempt}".encode()).digest()[:16]


@dataclass
class ProtocolConfig:
    n_servers: int = 2
    mode: str = "EWD"
    method: str = "Q3"
    lambda1: bytes = None
    lambda2: bytes = None
    rng_seed: int = 0
    max_retries: int = 3
    faults: tuple = ()
    concurrent: bool = False


@dataclass
class ProtocolOutcome:
    det_m: DetValue
    auth: AuthReport
    trace: Trace
    retries: int
    plan: PartitionPlan
    theta: int
    psi_digest: str
    ops: dict = field(default_factory=dict)


@dataclass
class Prepared:
    """Client state between dispatch and recovery for one attempt."""

    seed: object
    key: object
    env: object
    plan: PartitionPlan
    x: np.ndarray
    grid: object
    rng: object
    seed_ops: int


def _resolve(config, overrides):
    if config is None:
        return ProtocolConfig(**overrides)
    if overrides:
        raise TypeError("pass either a config or keyword overrides, not both")
    return config


def attempt_params(config, attempt, salt=0):
    lambda1 = config.lambda1 if config.lambda1 is not None else _derive(config.rng_seed, "lambda1")
    lambda2 = config.lambda2 if config.lambda2 is not None else _derive(config.rng_seed, "lambda2")
    if attempt:
        # row blinding alone cannot move a vanishing leading minor, so
        # both parameters are refreshed to change the rotation as well
        tag = b"retry" + bytes([attempt]) + salt.to_bytes(2, "big")
        lambda1 = hashlib.sha256(lambda1 + tag).digest()[:16]
        lambda2 = hashlib.sha256(lambda2 + tag).digest()[:16]
    return lambda1, lambda2


# re-derivations tried per retry when steering towards an untried rotation
ROTATION_STEER_LIMIT = 64


def prepare(m, config, attempt=0, avoid=()):
    """SeedGen, KeyGen, Cipher, padding and partitioning for one attempt.

    ``avoid`` lists rotation angles that already failed; on a retry the
    security parameters are re-derived until the seed selects another one.
    """
    m = as_matrix(m, square=True)
    n = m.shape[0]
    seed_ops = FlopCounter()
    for salt in range(ROTATION_STEER_LIMIT if attempt else 1):
        lambda1, lambda2 = attempt_params(config, attempt, salt)
        counter = FlopCounter()
        seed = seed_gen(lambda1, m, counter)
        if rotate_select(seed.psi) not in avoid:
            break
    seed_ops.add(counter.count)
    key = key_gen(lambda2, seed, n, config.mode)
    env = cipher(key, seed, m)
    plan = plan_partition(n, config.n_servers)
    rng = np.random.default_rng([config.rng_seed, attempt])
    x = augment(env.x, plan.pad, "zero_col", rng)
    return Prepared(seed, key, env, plan, x, partition(x, plan.n_servers), rng, seed_ops.count)


def finish(prep, lower, upper, method):
    """Authenticate the returned factors and decipher. Returns (det_m, report, decipher ops)."""
    report = authenticate(lower, upper, prep.x, method, prep.rng, prep.plan.n_servers)
    if not report.verdict:
        return None, report, 0
    dec_ops = FlopCounter()
    det_x = det_from_lu(lower, upper, dec_ops)
    return decipher(prep.seed, prep.env.meta(), det_x, dec_ops), report, dec_ops.count


def run_protocol(m, config=None, **overrides):
    """SeedGen -> KeyGen -> Cipher -> pad/partition -> servers -> Authenticate -> Decipher.

    A singular pivot triggers a re-randomized retry with fresh security
    parameters; authentication failure raises ``TamperError`` immediately.
    """
    config = _resolve(config, overrides)
    m = as_matrix(m, square=True)
    last_reason = ""
    failed = set()
    for attempt in range(config.max_retries + 1):
        prep = prepare(m, config, attempt, avoid=failed)
        try:
            results, trace = run_simulation(
                prep.plan, prep.grid,
                mode="concurrent" if config.concurrent else "deterministic",
                faults=config.faults,
                seed=config.rng_seed,
            )
        except ServerFailure as err:
            last_reason = str(err)
            failed.add(prep.env.theta)
            continue
        lower, upper = assemble(results, prep.plan.n_servers)
        det_m, report, dec_ops = finish(prep, lower, upper, config.method)
        if not report.verdict:
            raise TamperError(report, trace)
        ops = {
            "seed_gen": prep.seed_ops,
            "cipher": prep.env.scale_ops,
            "authenticate": report.ops,
            "decipher": dec_ops,
            "max_server": max(trace.flops.values()),
            "critical_path": trace.critical_path_flops,
        }
        return ProtocolOutcome(det_m, report, trace, attempt, prep.plan, prep.env.theta, prep.seed.digest(), ops)
    raise SingularityError(config.max_retries + 1, last_reason)


def format_report(outcome):
    det = outcome.det_m
    lines = [
        f"det_sign={det.sign}",
        f"det_log_abs={det.log_abs!r}",
        f"det_value={det.to_float()!r}" if det.representable() else "det_value=unrepresentable",
        f"auth_method={outcome.auth.method}",
        f"auth_value={outcome.auth.value!r}",
        f"auth_epsilon={outcome.auth.epsilon!r}",
        f"auth_verdict={outcome.auth.verdict}",
        f"auth_r_digest={outcome.auth.r_digest or '-'}",
        f"n={outcome.plan.n}",
        f"servers={outcome.plan.n_servers}",
        f"pad={outcome.plan.pad}",
        f"block_size={outcome.plan.block_size}",
        f"theta={outcome.theta}",
        f"psi_digest={outcome.psi_digest}",
        f"retries={outcome.retries}",
        f"messages={outcome.trace.messages}",
        f"reals_sent={outcome.trace.reals_sent}",
    ]
    lines.extend(f"ops_{k}={v}" for k, v in outcome.ops.items())
    return "\n".join(lines) + "\n"


METRICS_HEADER = (
    "n,N,method,cipher_flops,max_server_flops,critical_path_flops,"
    "auth_flops,decipher_flops,messages,reals_sent,verdict"
)


def metrics_row(outcome):
    ops = outcome.ops
    fields = [
        outcome.plan.n, outcome.plan.n_servers, outcome.auth.method,
        ops["cipher"], ops["max_server"], ops["critical_path"],
        ops["authenticate"], ops["decipher"],
        outcome.trace.messages, outcome.trace.reals_sent, outcome.auth.verdict,
    ]
    return ",".join(str(f) for f in fields)


__all__ = [
    "METHODS",
    "TAU0",
    "TamperError",
    "SingularityError",
    "PartitionPlan",
    "plan_partition",
    "assemble",
    "det_from_lu",
    "threshold",
    "AuthReport",
    "q_value",
    "authenticate",
    "ProtocolConfig",
    "ProtocolOutcome",
    "Prepared",
    "prepare",
    "finish",
    "run_protocol",
    "format_report",
    "METRICS_HEADER",
    "metrics_row",
]
