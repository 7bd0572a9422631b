"""Edge server for the row-partitioned parallel block LU.

Server i owns block row i of the ciphertext. It consumes U blocks from
server i-1, computes L_i1..L_ii and U_ii..U_iN, forwards every U block of
rows 1..i to server i+1 and returns its result bundle to the client.

Scheduling: a server performs at most one block task per incoming message
(or per idle tick once nothing is outstanding upstream). Server 1 activates
its successor after its first task, every other server after its first two.
After activation the forward queue is flushed whenever the server produces
one of its own U blocks, so received blocks ride along with the next
locally computed one.
"""

from dataclasses import dataclass, field

import numpy as np

from .flops import (
    FlopCounter,
    solve_unit_lower_left,
    solve_upper_right,
    subtract,
    sum_products,
)
from .matrix_core import SingularPivotError, lu_plain

CLIENT = 0

ASSIGN_ROW = "ASSIGN_ROW"
U_BLOCKS = "U_BLOCKS"
RESULT = "RESULT"
FAILURE = "FAILURE"
KINDS = (ASSIGN_ROW, U_BLOCKS, RESULT, FAILURE)


class ProtocolViolation(RuntimeError):
    pass


def format_label(lbl):
    kind, i, j = lbl
    if i < 10 and j < 10:
        return f"{kind}_{i}{j}"
    return f"{kind}_{i},{j}"


def parse_label(text):
    """'U_12' -> ('U', 1, 2); multi-digit indices use a comma: 'U_1,10'."""
    try:
        kind, idx = text.strip().split("_", 1)
        if "," in idx:
            i, j = (int(s) for s in idx.split(","))
        elif len(idx) == 2:
            i, j = int(idx[0]), int(idx[1])
        else:
            raise ValueError
    except ValueError:
        raise ValueError(f"bad block label {text!r}") from None
    if kind not in ("L", "U", "X"):
        raise ValueError(f"bad block kind in {text!r}")
    return kind, i, j


def node_name(node):
    return "C" if node == CLIENT else f"S{node}"


@dataclass(eq=False)
class ServerMessage:
    src: int
    dst: int
    kind: str
    blocks: dict = field(default_factory=dict)
    stamp: int = 0  # sender's flop-time when the message left
    note: str = ""

    @property
    def size(self):
        return int(sum(b.size for b in self.blocks.values()))

    @property
    def labels(self):
        return tuple(self.blocks)

    def summary(self):
        names = ",".join(format_label(lbl) for lbl in self.blocks)
        return f"{node_name(self.src)}->{node_name(self.dst)} {self.kind} {{{names}}}"


def factor_diag(x_ii, counter=None):
    """Doolittle factorization of an updated diagonal block."""
    return lu_plain(x_ii, counter)


def compute_l_block(x_ik, prior, u_kk, counter=None):
    """L_ik with L_ik @ U_kk = X_ik - prior (prior may be None)."""
    diag = np.diag(u_kk)
    if np.any(diag == 0.0):
        k = int(np.flatnonzero(diag == 0.0)[0])
        raise SingularPivotError(k, 0.0, float(np.max(np.abs(u_kk[k]))))
    rhs = x_ik if prior is None else subtract(x_ik, prior, counter)
    return solve_upper_right(u_kk, rhs, counter)


def compute_u_block(x_ij, prior, l_ii, counter=None):
    """U_ij with L_ii @ U_ij = X_ij - prior (L_ii unit lower triangular)."""
    rhs = x_ij if prior is None else subtract(x_ij, prior, counter)
    return solve_unit_lower_left(l_ii, rhs, counter)


class EdgeServer:
    """Single-owner state machine for server ``index`` of ``n_servers``."""

    def __init__(self, index, n_servers):
        if not 1 <= index <= n_servers:
            raise ValueError(f"server index {index} outside 1..{n_servers}")
        self.index = index
        self.n_servers = n_servers
        self.x_row = {}
        self.u_store = {}
        self.l_row = {}
        self.u_out = {}
        self.flops = FlopCounter()
        self.clock = 0
        self.assigned = False
        self.done = False
        self.failed = False
        self.tasks = self._plan()
        self.cursor = 0
        self.log = []  # (task name, flops) in execution order
        self._pending = []

    def _plan(self):
        i, n = self.index, self.n_servers
        tasks = [("L", k) for k in range(1, i)]
        if i > 1:
            tasks.append(("update", i))
        tasks.append(("factor", i))
        tasks.extend(("U", j) for j in range(i + 1, n + 1))
        return tasks

    @property
    def expected(self):
        """Upstream U blocks this server needs: rows 1..i-1, columns k..N."""
        i, n = self.index, self.n_servers
        return {("U", k, j) for k in range(1, i) for j in range(k, n + 1)}

    @property
    def missing(self):
        return self.expected - self.u_store.keys()

    @property
    def activation_threshold(self):
        return 1 if self.index == 1 else 2

    def _needs(self, task):
        kind, a = task
        i = self.index
        if kind == "L":
            return {("U", m, a) for m in range(1, a + 1)}
        if kind == "update":
            return {("U", k, i) for k in range(1, i)}
        if kind == "U":
            return {("U", k, a) for k in range(1, i)}
        return set()

    def ready(self):
        if self.done or not self.assigned or self.cursor >= len(self.tasks):
            return False
        return self._needs(self.tasks[self.cursor]) <= self.u_store.keys()

    def wants_tick(self):
        """True when the server can progress without waiting for a message."""
        return not self.done and self.assigned and not self.missing

    def handle_message(self, msg):
        if self.done:
            raise ProtocolViolation(f"{node_name(self.index)} received {msg.kind} after finishing")
        if msg.dst != self.index:
            raise ProtocolViolation(f"message for {node_name(msg.dst)} delivered to {node_name(self.index)}")
        if msg.kind == ASSIGN_ROW:
            if msg.src != CLIENT or self.assigned:
                raise ProtocolViolation(f"unexpected ASSIGN_ROW at {node_name(self.index)}")
            for (kind, i, j), block in msg.blocks.items():
                if kind != "X" or i != self.index:
                    raise ProtocolViolation(f"foreign block X_{i}{j} assigned to {node_name(self.index)}")
                self.x_row[j] = block
            if sorted(self.x_row) != list(range(1, self.n_servers + 1)):
                raise ProtocolViolation(f"incomplete row assigned to {node_name(self.index)}")
            self.assigned = True
        elif msg.kind == U_BLOCKS:
            if msg.src != self.index - 1:
                raise ProtocolViolation(
                    f"{node_name(self.index)} got U blocks from {node_name(msg.src)}; only the "
                    "immediate upstream server may send them"
                )
            for lbl, block in msg.blocks.items():
                if lbl not in self.expected:
                    raise ProtocolViolation(f"unexpected block {format_label(lbl)} at {node_name(self.index)}")
                if lbl in self.u_store:
                    raise ProtocolViolation(f"duplicate block {format_label(lbl)} at {node_name(self.index)}")
                self.u_store[lbl] = block
                if self.index < self.n_servers:
                    self._pending.append(lbl)
        else:
            raise ProtocolViolation(f"server cannot handle {msg.kind}")
        self.clock = max(self.clock, msg.stamp)
        return self._work()

    def advance(self):
        """Idle tick: run the next task if its inputs are present."""
        return self._work()

    def _u(self, k, j):
        if k == self.index:
            return self.u_out[j]
        return self.u_store[("U", k, j)]

    def _run(self, task):
        kind, a = task
        i = self.index
        counter = self.flops
        if kind == "L":
            prior = sum_products([(self.l_row[m], self._u(m, a)) for m in range(1, a)], counter)
            self.l_row[a] = compute_l_block(self.x_row[a], prior, self._u(a, a), counter)
        elif kind == "update":
            prior = sum_products([(self.l_row[k], self._u(k, i)) for k in range(1, i)], counter)
            self.x_row[i] = subtract(self.x_row[i], prior, counter)
        elif kind == "factor":
            l_ii, u_ii = factor_diag(self.x_row[i], counter)
            self.l_row[i] = l_ii
            self.u_out[i] = u_ii
            if i < self.n_servers:
                self._pending.append(("U", i, i))
        else:
            prior = sum_products([(self.l_row[k], self._u(k, a)) for k in range(1, i)], counter)
            self.u_out[a] = compute_u_block(self.x_row[a], prior, self.l_row[i], counter)
            if i < self.n_servers:
                self._pending.append(("U", i, a))

    def _block(self, lbl):
        kind, k, j = lbl
        if kind == "U":
            return self._u(k, j)
        return self.l_row[j]

    def _work(self):
        out = []
        produced_u = False
        if self.ready():
            task = self.tasks[self.cursor]
            before = self.flops.count
            try:
                self._run(task)
            except SingularPivotError as err:
                self.failed = True
                self.done = True
                return [ServerMessage(self.index, CLIENT, FAILURE, {}, self.clock, str(err))]
            spent = self.flops.count - before
            self.clock += spent
            self.log.append((f"{task[0]}{task[1]}", spent))
            self.cursor += 1
            produced_u = task[0] in ("factor", "U")
            activating = self.cursor == self.activation_threshold
        else:
            activating = False
        if self.index < self.n_servers and self._pending and (produced_u or activating):
            blocks = {lbl: self._block(lbl) for lbl in self._pending}
            out.append(ServerMessage(self.index, self.index + 1, U_BLOCKS, blocks, self.clock))
            self._pending = []
        if self.cursor == len(self.tasks) and not self.done:
            out.append(ServerMessage(self.index, CLIENT, RESULT, self.result_bundle(), self.clock))
            self.done = True
        return out

    def result_bundle(self):
        """res_i = {L_i1..L_ii, U_ii..U_iN}."""
        i, n = self.index, self.n_servers
        res = {("L", i, k): self.l_row[k] for k in range(1, i + 1)}
        res.update({("U", i, j): self.u_out[j] for j in range(i, n + 1)})
        return res
