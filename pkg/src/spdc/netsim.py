"""Message-passing simulator hosting the client and the N edge servers.

Two schedulers share the server state machines:

* ``deterministic``: synchronous rounds. In each round every live server, in
  index order, handles one queued message or takes an idle tick; messages
  sent in round t are delivered at the start of round t + 1.
* ``concurrent``: one thread per server with FIFO queues. Event steps are
  Lamport clocks and the trace is merged on (step, sender, sequence).

Faults model a malicious server: the named block is corrupted whenever the
target server emits it, consistently across every copy it sends.
"""

import json
import queue
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .server import (
    ASSIGN_ROW,
    CLIENT,
    FAILURE,
    RESULT,
    U_BLOCKS,
    EdgeServer,
    ServerMessage,
    format_label,
    node_name,
    parse_label,
)

CHANNELS = ("all", "result", "transit")

# U-block payloads per channel, as listed for the 3- and 4-server algorithms
LISTING_3 = {
    (1, 2): [["U_11"], ["U_12"], ["U_13"]],
    (2, 3): [["U_11", "U_12"], ["U_13", "U_22"], ["U_23"]],
}
LISTING_4 = {
    (1, 2): [["U_11"], ["U_12"], ["U_13"], ["U_14"]],
    (2, 3): [["U_11", "U_12"], ["U_13", "U_22"], ["U_14", "U_23"], ["U_24"]],
    (3, 4): [["U_11", "U_12", "U_13", "U_22"], ["U_24", "U_33"], ["U_34"]],
}


class DeadlockError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ServerFailure(RuntimeError):
    """A server hit a singular pivot and aborted the run."""

    def __init__(self, server, reason, trace):
        super().__init__(f"{node_name(server)} failed: {reason}")
        self.server = server
        self.reason = reason
        self.trace = trace


@dataclass(frozen=True)
class FaultSpec:
    target: int
    block: tuple
    perturbation: str = "additive"
    magnitude: float = 1e-3
    channel: str = "all"

    def __post_init__(self):
        if self.perturbation not in ("additive", "replace"):
            raise ValueError(f"unknown perturbation {self.perturbation!r}")
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if self.magnitude <= 0:
            raise ValueError("fault magnitude must be positive")

    @classmethod
    def parse(cls, text):
        """Parse 'server=2,block=U_22,rel=1e-2[,kind=replace][,where=result]'."""
        opts = {}
        for part in text.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                # comma inside a multi-digit label, e.g. block=U_1,10
                if "block" in opts and part.strip().isdigit():
                    opts["block"] += "," + part.strip()
                    continue
                raise ValueError(f"bad fault option {part!r}")
            k, v = part.split("=", 1)
            opts[k.strip()] = v.strip()
        unknown = set(opts) - {"server", "block", "rel", "kind", "where"}
        if unknown or "server" not in opts or "block" not in opts:
            raise ValueError(f"fault spec needs server= and block=, got {text!r}")
        return cls(
            target=int(opts["server"]),
            block=parse_label(opts["block"]),
            perturbation=opts.get("kind", "additive"),
            magnitude=float(opts.get("rel", 1e-3)),
            channel=opts.get("where", "all"),
        )

    def describe(self):
        return (
            f"server={self.target},block={format_label(self.block)},rel={self.magnitude!r},"
            f"kind={self.perturbation},where={self.channel}"
        )


def structural_mask(lbl, shape):
    """Entries a triangular block may legitimately hold."""
    kind, i, j = lbl
    if i == j and kind == "L":
        return np.tril(np.ones(shape, dtype=bool))
    if i == j and kind == "U":
        return np.triu(np.ones(shape, dtype=bool))
    return np.ones(shape, dtype=bool)


def perturb_block(block, fault, rng):
    scale = float(np.max(np.abs(block))) or 1.0
    mask = structural_mask(fault.block, block.shape)
    noise = rng.standard_normal(block.shape) * mask
    if fault.perturbation == "additive":
        return block + fault.magnitude * scale * noise
    return np.where(mask, scale * noise, block)


class _FaultInjector:
    def __init__(self, faults, seed):
        self.faults = list(faults)
        self._seed = seed
        self._cache = {}
        self.applied = []

    def __call__(self, msg):
        for idx, fault in enumerate(self.faults):
            if msg.src != fault.target or fault.block not in msg.blocks:
                continue
            if fault.channel == "result" and msg.kind != RESULT:
                continue
            if fault.channel == "transit" and msg.kind != U_BLOCKS:
                continue
            if idx not in self._cache:
                rng = np.random.default_rng([self._seed, idx])
                self._cache[idx] = perturb_block(msg.blocks[fault.block], fault, rng)
            blocks = dict(msg.blocks)
            blocks[fault.block] = self._cache[idx]
            msg = ServerMessage(msg.src, msg.dst, msg.kind, blocks, msg.stamp, msg.note)
            self.applied.append(f"{fault.describe()} on {msg.kind} to {node_name(msg.dst)}")
        return msg


@dataclass
class TraceEvent:
    step: int
    src: int
    dst: int
    kind: str
    size: int
    labels: tuple = ()

    def line(self):
        labels = ",".join(self.labels) if self.labels else "-"
        return f"{self.step} {node_name(self.src)} {node_name(self.dst)} {self.kind} {self.size} {labels}"


@dataclass
class Trace:
    n_servers: int
    events: list = field(default_factory=list)
    flops: dict = field(default_factory=dict)
    activation: dict = field(default_factory=dict)
    result_step: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)
    critical_path_flops: int = 0
    mode: str = "deterministic"

    @property
    def messages(self):
        return len(self.events)

    @property
    def reals_sent(self):
        return sum(e.size for e in self.events)

    def server_messages(self):
        return [e for e in self.events if e.src != CLIENT]

    def channel(self, src, dst):
        return [e for e in self.events if e.src == src and e.dst == dst]

    def first_send(self, node):
        steps = [e.step for e in self.events if e.src == node]
        return min(steps) if steps else None

    def to_text(self):
        out = [f"# trace N={self.n_servers} mode={self.mode}"]
        for i in range(1, self.n_servers + 1):
            out.append(
                f"# node S{i} activation={self.activation.get(i, -1)} "
                f"result={self.result_step.get(i, -1)} flops={self.flops.get(i, 0)}"
            )
        out.append(f"# critical_path_flops={self.critical_path_flops}")
        for f in self.faults:
            out.append(f"# fault {f}")
        out.extend(e.line() for e in self.events)
        return "\n".join(out) + "\n"

    def to_json(self):
        return json.dumps(
            {
                "n_servers": self.n_servers,
                "mode": self.mode,
                "events": [
                    [e.step, e.src, e.dst, e.kind, e.size, list(e.labels)] for e in self.events
                ],
                "flops": {str(k): v for k, v in sorted(self.flops.items())},
                "activation": {str(k): v for k, v in sorted(self.activation.items())},
                "result_step": {str(k): v for k, v in sorted(self.result_step.items())},
                "faults": self.faults,
                "critical_path_flops": self.critical_path_flops,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            n_servers=d["n_servers"],
            events=[TraceEvent(s, a, b, k, z, tuple(lb)) for s, a, b, k, z, lb in d["events"]],
            flops={int(k): v for k, v in d["flops"].items()},
            activation={int(k): v for k, v in d["activation"].items()},
            result_step={int(k): v for k, v in d["result_step"].items()},
            faults=list(d["faults"]),
            critical_path_flops=d["critical_path_flops"],
            mode=d.get("mode", "deterministic"),
        )

    @classmethod
    def from_text(cls, text):
        def node(tok):
            return CLIENT if tok == "C" else int(tok.lstrip("S"))

        trace = None
        for no, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                words = line[1:].split()
                if words and words[0] == "trace":
                    kv = dict(w.split("=", 1) for w in words[1:])
                    trace = cls(int(kv["N"]), mode=kv.get("mode", "deterministic"))
                elif words and words[0] == "node" and trace is not None:
                    i = node(words[1])
                    kv = dict(w.split("=", 1) for w in words[2:])
                    if int(kv["activation"]) >= 0:
                        trace.activation[i] = int(kv["activation"])
                    if int(kv["result"]) >= 0:
                        trace.result_step[i] = int(kv["result"])
                    trace.flops[i] = int(kv["flops"])
                elif words and words[0].startswith("critical_path_flops=") and trace is not None:
                    trace.critical_path_flops = int(words[0].split("=", 1)[1])
                elif words and words[0] == "fault" and trace is not None:
                    trace.faults.append(" ".join(words[1:]))
                continue
            if trace is None:
                raise ValueError(f"line {no}: event before '# trace N=' header")
            parts = line.split()
            if len(parts) not in (5, 6):
                raise ValueError(f"line {no}: expected 'step from to kind size [labels]'")
            labels = ()
            if len(parts) == 6 and parts[5] != "-":
                labels = tuple(parts[5].split(","))
            trace.events.append(
                TraceEvent(int(parts[0]), node(parts[1]), node(parts[2]), parts[3], int(parts[4]), labels)
            )
        if trace is None:
            raise ValueError("missing '# trace N=' header")
        return trace


def _event(step, msg):
    return TraceEvent(step, msg.src, msg.dst, msg.kind, msg.size, tuple(format_label(b) for b in msg.blocks))


def _assign_messages(grid):
    n = grid.n_servers
    return [
        ServerMessage(CLIENT, i, ASSIGN_ROW, {("X", i, j): grid[i, j] for j in range(1, n + 1)}, 0)
        for i in range(1, n + 1)
    ]


def run_simulation(plan, grid, mode="deterministic", faults=(), seed=0):
    """Run the N-server factorization; returns ({i: res_i}, Trace)."""
    if grid.n_servers != plan.n_servers or grid.block_size != plan.block_size:
        raise ValueError("block grid does not match the partition plan")
    if mode == "deterministic":
        return _run_rounds(grid, faults, seed)
    if mode == "concurrent":
        return _run_threads(grid, faults, seed)
    raise ValueError(f"unknown simulator mode {mode!r}")


def _finish(trace, servers, results):
    trace.flops = {i: s.flops.count for i, s in servers.items()}
    trace.critical_path_flops = max((s.clock for s in servers.values()), default=0)
    return results, trace


def _run_rounds(grid, faults, seed):
    n = grid.n_servers
    servers = {i: EdgeServer(i, n) for i in range(1, n + 1)}
    inbox = {i: deque() for i in servers}
    inject = _FaultInjector(faults, seed)
    trace = Trace(n, mode="deterministic")
    results = {}

    for msg in _assign_messages(grid):
        trace.events.append(_event(0, msg))
        inbox[msg.dst].append(msg)

    step = 0
    while len(results) < n:
        step += 1
        sent = []
        progressed = False
        for i, srv in servers.items():
            if srv.done:
                continue
            cursor = srv.cursor
            if inbox[i]:
                out = srv.handle_message(inbox[i].popleft())
                progressed = True
            elif srv.wants_tick():
                out = srv.advance()
            else:
                continue
            if srv.cursor > cursor:
                progressed = True
                trace.activation.setdefault(i, step)
            sent.extend(inject(m) for m in out)
        failure = None
        for msg in sent:
            trace.events.append(_event(step, msg))
            if msg.dst == CLIENT:
                if msg.kind == FAILURE:
                    failure = failure or msg
                else:
                    results[msg.src] = msg.blocks
                    trace.result_step[msg.src] = step
            else:
                inbox[msg.dst].append(msg)
        trace.faults = list(inject.applied)
        if failure is not None:
            _finish(trace, servers, results)
            raise ServerFailure(failure.src, failure.note, trace)
        if not progressed and not sent and not any(inbox.values()) and len(results) < n:
            _finish(trace, servers, results)
            raise DeadlockError(f"no server can progress at step {step}\n{trace.to_text()}", trace)
    return _finish(trace, servers, results)


_STOP = object()


def _run_threads(grid, faults, seed, timeout=30.0):
    n = grid.n_servers
    servers = {i: EdgeServer(i, n) for i in range(1, n + 1)}
    inbox = {i: queue.Queue() for i in servers}
    sink = queue.Queue()
    inject = _FaultInjector(faults, seed)
    inject_lock = threading.Lock()
    logs = {i: [] for i in servers}
    activation = {}
    stop = threading.Event()

    def route(clock, msg):
        if msg.dst == CLIENT:
            sink.put((clock, msg))
        else:
            inbox[msg.dst].put((clock, msg))

    def worker(i):
        srv = servers[i]
        clock = 0
        try:
            while not srv.done and not stop.is_set():
                cursor = srv.cursor
                if srv.wants_tick():
                    clock += 1
                    out = srv.advance()
                else:
                    try:
                        item = inbox[i].get(timeout=timeout)
                    except queue.Empty:
                        sink.put((clock, DeadlockError(f"{node_name(i)} starved waiting for upstream")))
                        return
                    if item is _STOP:
                        return
                    sent_clock, msg = item
                    clock = max(clock, sent_clock) + 1
                    out = srv.handle_message(msg)
                if srv.cursor > cursor:
                    activation.setdefault(i, clock)
                for seq, msg in enumerate(out):
                    with inject_lock:
                        msg = inject(msg)
                    logs[i].append((clock, i, len(logs[i]), msg))
                    route(clock, msg)
        except Exception as err:  # surfaced to the collector
            sink.put((clock, err))

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in servers]
    client_log = []
    for seq, msg in enumerate(_assign_messages(grid)):
        client_log.append((0, CLIENT, seq, msg))
        inbox[msg.dst].put((0, msg))
    for t in threads:
        t.start()

    results = {}
    failure = None
    error = None
    while len(results) < n and failure is None and error is None:
        try:
            clock, msg = sink.get(timeout=timeout * 2)
        except queue.Empty:
            error = DeadlockError("no result arrived before the timeout")
            break
        if isinstance(msg, Exception):
            error = msg
        elif msg.kind == FAILURE:
            failure = msg
        else:
            results[msg.src] = msg.blocks
    stop.set()
    for i in servers:
        inbox[i].put(_STOP)
    for t in threads:
        t.join(timeout=timeout)

    trace = Trace(n, mode="concurrent")
    merged = sorted(client_log + [rec for log in logs.values() for rec in log], key=lambda r: r[:3])
    for clock, _, _, msg in merged:
        trace.events.append(_event(clock, msg))
        if msg.dst == CLIENT and msg.kind == RESULT:
            trace.result_step[msg.src] = clock
    trace.activation = dict(activation)
    trace.faults = list(inject.applied)
    _finish(trace, servers, results)
    if error is not None:
        if isinstance(error, DeadlockError):
            error.trace = trace
        raise error
    if failure is not None:
        raise ServerFailure(failure.src, failure.note, trace)
    return results, trace


def _labelled(events):
    return [list(e.labels) for e in events if e.kind == U_BLOCKS]


def validate_trace(trace, n_servers=None):
    """Return a list of human-readable protocol violations (empty when clean)."""
    n = trace.n_servers if n_servers is None else n_servers
    problems = []
    for e in trace.events:
        if e.src != CLIENT and e.dst != CLIENT:
            if e.dst != e.src + 1:
                problems.append(
                    f"non-adjacent transfer {node_name(e.src)}->{node_name(e.dst)} at step {e.step}"
                )
            if e.kind != U_BLOCKS:
                problems.append(f"inter-server message of kind {e.kind} at step {e.step}")
        elif e.src == CLIENT and e.kind != ASSIGN_ROW:
            problems.append(f"client sent {e.kind} at step {e.step}")
        elif e.dst == CLIENT and e.kind not in (RESULT, FAILURE):
            problems.append(f"{node_name(e.src)} sent {e.kind} to the client")
    for i in range(1, n + 1):
        results = [e for e in trace.events if e.src == i and e.kind == RESULT]
        if len(results) != 1:
            problems.append(f"{node_name(i)} sent {len(results)} RESULT messages (expected 1)")
            continue
        own = [e for e in trace.events if e.src == i]
        if own[-1].kind != RESULT:
            problems.append(f"{node_name(i)} sent messages after its RESULT")
    for i in range(1, n):
        first = trace.first_send(i)
        act = trace.activation.get(i + 1)
        if first is None or act is None:
            problems.append(f"cannot check staggering between {node_name(i)} and {node_name(i + 1)}")
        elif act <= first:
            problems.append(
                f"{node_name(i + 1)} activated at step {act}, not after {node_name(i)}'s first send at {first}"
            )
    if n == 3:
        for (src, dst), expected in LISTING_3.items():
            got = _labelled(trace.channel(src, dst))
            if any(e.labels for e in trace.channel(src, dst)):
                if got != expected:
                    problems.append(
                        f"{node_name(src)}->{node_name(dst)} payloads {got} differ from the listing {expected}"
                    )
            elif len(got) != len(expected):
                problems.append(
                    f"{node_name(src)}->{node_name(dst)} sent {len(got)} U_BLOCKS messages, listing has {len(expected)}"
                )
    return problems


def compare_with_listing(trace, listing):
    """Per-channel payload differences against a reference listing.

    Returns {(src, dst): (observed, listed)} for channels that differ.
    """
    diffs = {}
    for (src, dst), expected in listing.items():
        got = _labelled(trace.channel(src, dst))
        if got != expected:
            diffs[(src, dst)] = (got, expected)
    return diffs
