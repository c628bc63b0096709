"""In-process rank and message layer with non-blocking point-to-point semantics.

Ranks run as threads of one process. Payloads are pickled on send, so the
sender may reuse its buffers immediately and the receiver gets a private
copy. Each message can be held back for a random number of polls to
scramble arrival order; results of a correct protocol must not depend on it.
"""

import enum
import itertools
import pickle
import random
import threading
import time
from dataclasses import dataclass, field


class Tag(enum.IntEnum):
    PREPARE = 1
    HALO_SIZE = 2
    HALO_BLOCK = 3
    SPMV_VECTOR = 4
    COLLECTIVE = 5
    TRANSPOSE = 6


class CommError(RuntimeError):
    pass


class CollectiveMismatchError(CommError):
    pass


@dataclass
class TraceRecord:
    sender: int
    receiver: int
    tag: object
    nbytes: int
    clock: int

    def __str__(self):
        return f"{self.sender} {self.receiver} {tag_label(self.tag)} {self.nbytes} {self.clock}"


def tag_label(tag):
    """Readable tag text, e.g. ``spmv_vector`` or ``collective:3``."""
    if isinstance(tag, tuple):
        return ":".join(tag_label(t) for t in tag)
    if isinstance(tag, Tag):
        return tag.name.lower()
    return str(tag)


@dataclass(eq=False)
class PendingOp:
    handle: int
    peer: int
    tag: object
    direction: str
    seq: int = -1
    done: bool = False
    _payload: object = field(default=None, repr=False)

    @property
    def payload(self):
        if not self.done:
            raise CommError(f"payload of {self.direction} op {self.handle} read before completion")
        return self._payload


class World:
    """Shared transport for ``n_ranks`` simulated ranks.

    ``max_delay`` > 0 holds every message for a uniformly random number of
    receiver polls in ``[0, max_delay]`` (drawn from ``seed``).
    """

    def __init__(self, n_ranks, seed=None, max_delay=0, trace=False, timeout=120.0):
        if n_ranks < 1:
            raise ValueError("need at least one rank")
        self.n_ranks = n_ranks
        self.max_delay = max_delay
        self.timeout = timeout
        self._rng = random.Random(seed)
        self._cond = threading.Condition()
        self._boxes = {}
        self._send_seq = {}
        self._recv_seq = {}
        self._handles = itertools.count()
        self._clock = 0
        self.aborted = False
        self.bytes_sent = [0] * n_ranks
        self.messages_sent = [0] * n_ranks
        self.trace = [] if trace else None

    def context(self, rank):
        return RankContext(self, rank)

    def _post(self, src, dst, tag, blob):
        key = (src, dst, tag)
        with self._cond:
            seq = self._send_seq.get(key, 0)
            self._send_seq[key] = seq + 1
            delay = self._rng.randint(0, self.max_delay) if self.max_delay else 0
            self._boxes.setdefault(key, {})[seq] = [blob, delay]
            self.bytes_sent[src] += len(blob)
            self.messages_sent[src] += 1
            self._clock += 1
            if self.trace is not None:
                self.trace.append(TraceRecord(src, dst, tag, len(blob), self._clock))
            self._cond.notify_all()

    def _next_recv_seq(self, key):
        with self._cond:
            seq = self._recv_seq.get(key, 0)
            self._recv_seq[key] = seq + 1
            return seq

    def _try_take(self, key, seq):
        with self._cond:
            box = self._boxes.get(key)
            if not box or seq not in box:
                return None
            entry = box[seq]
            if entry[1] > 0:
                entry[1] -= 1
                return None
            del box[seq]
            return entry[0]

    def _wait_for_traffic(self, timeout):
        with self._cond:
            self._cond.wait(timeout)

    def trace_lines(self):
        return [str(r) for r in (self.trace or [])]


class RankContext:
    def __init__(self, world, rank):
        if not 0 <= rank < world.n_ranks:
            raise ValueError(f"rank {rank} outside world of {world.n_ranks}")
        self.world = world
        self.rank = rank
        self._collective_seq = 0

    @property
    def n_ranks(self):
        return self.world.n_ranks

    def _check_peer(self, peer):
        if not 0 <= peer < self.world.n_ranks:
            raise CommError(f"rank {self.rank}: invalid peer {peer}")

    def isend(self, peer, tag, payload):
        self._check_peer(peer)
        blob = pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL)
        self.world._post(self.rank, peer, tag, blob)
        return PendingOp(next(self.world._handles), peer, tag, "send", done=True)

    def irecv(self, peer, tag):
        self._check_peer(peer)
        key = (peer, self.rank, tag)
        return PendingOp(next(self.world._handles), peer, tag, "recv",
                         seq=self.world._next_recv_seq(key))

    def _poll(self, op):
        if op.done:
            return True
        blob = self.world._try_take((op.peer, self.rank, op.tag), op.seq)
        if blob is None:
            return False
        op._payload = pickle.loads(blob)
        op.done = True
        return True

    def test_any(self, pending):
        """Poll every op once without blocking; return the ones now complete."""
        return [op for op in pending if self._poll(op)]

    def idle(self):
        # block briefly so other rank threads get the interpreter; held-back
        # messages count down one poll per wake-up
        self.world._wait_for_traffic(0.0002 if self.world.max_delay else 0.001)

    def wait_all(self, pending):
        deadline = time.monotonic() + self.world.timeout
        left = [op for op in pending if not op.done]
        while left:
            left = [op for op in left if not self._poll(op)]
            if left:
                if self.world.aborted:
                    raise CommError(f"rank {self.rank}: another rank failed")
                if time.monotonic() > deadline:
                    raise CommError(f"rank {self.rank}: timed out waiting on "
                                    f"{[(op.peer, op.tag) for op in left]}")
                self.idle()
        return pending

    def recv(self, peer, tag):
        return self.wait_all([self.irecv(peer, tag)])[0].payload

    def allreduce(self, value, op, name="allreduce"):
        """Reduce over a fixed binary tree by rank id, then broadcast from rank 0.

        Partial results combine as ``op(lower_rank_part, higher_rank_part)``,
        so the result is bitwise identical on every rank and every run.
        """
        seq = self._collective_seq
        self._collective_seq += 1
        tag = (Tag.COLLECTIVE, seq)
        n, r = self.n_ranks, self.rank
        acc = value
        step = 1
        parent = None
        children = []
        while step < n:
            if r % (2 * step):
                parent = r - step
                break
            if r + step < n:
                children.append(r + step)
                got_name, other = self.recv(r + step, tag)
                if got_name != name:
                    raise CollectiveMismatchError(
                        f"rank {r} in '{name}' but rank {r + step} in '{got_name}'")
                acc = op(acc, other)
            step *= 2
        if parent is not None:
            self.isend(parent, tag, (name, acc))
            got_name, acc = self.recv(parent, tag)
            if got_name != name:
                raise CollectiveMismatchError(
                    f"rank {r} in '{name}' but rank {parent} in '{got_name}'")
        for child in children:
            self.isend(child, tag, (name, acc))
        return acc

    def allreduce_sum(self, value):
        return self.allreduce(value, lambda a, b: a + b, name="sum")

    def allgather(self, value):
        merged = self.allreduce({self.rank: value}, lambda a, b: {**a, **b},
                                name="allgather")
        return [merged[i] for i in range(self.n_ranks)]

    def barrier(self):
        self.allreduce(None, lambda a, b: None, name="barrier")


def tree_reduce(values, op):
    """Serial replica of the rank-tree reduction used by ``allreduce``."""
    vals = list(values)
    step = 1
    while step < len(vals):
        for r in range(0, len(vals), 2 * step):
            if r + step < len(vals):
                vals[r] = op(vals[r], vals[r + step])
        step *= 2
    return vals[0]


def run_ranks(n_ranks, program, *args, seed=None, max_delay=0, trace=False, **kwargs):
    """Run ``program(ctx, *args, **kwargs)`` on every rank; return results and world.

    The first exception raised by any rank is re-raised here with its rank.
    """
    world = World(n_ranks, seed=seed, max_delay=max_delay, trace=trace)
    results = [None] * n_ranks
    errors = [None] * n_ranks

    def body(rank):
        try:
            results[rank] = program(world.context(rank), *args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - surfaced to the caller
            errors[rank] = exc
            world.aborted = True
            with world._cond:
                world._cond.notify_all()

    if n_ranks == 1:
        body(0)
    else:
        threads = [threading.Thread(target=body, args=(r,), name=f"rank-{r}")
                   for r in range(n_ranks)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    # report the root cause, not the ranks that merely saw the abort
    order = sorted(range(n_ranks), key=lambda r: isinstance(errors[r], CommError))
    for rank in order:
        exc = errors[rank]
        if exc is not None:
            raise RuntimeError(f"rank {rank} failed: {exc!r}") from exc
    return results, world
