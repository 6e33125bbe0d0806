"""Asynchronous parameter sharing: mailboxes, aggregation and local updates.

Each node keeps the freshest copy it has received of every other node's
parameters together with the iteration stamp of that copy. Node ``i``'s own
row in the mailbox is its current parameter, so the stamp of the self entry
always equals the local iteration counter.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, DegenerateTopologyError, ProtocolStateError
from .learning import LocalTask, check_vector, descent_direction, local_gradient

log = logging.getLogger(__name__)

_HEADER = struct.Struct("<IQI")


@dataclass(frozen=True)
class StampedParameter:
    """A parameter copy ``w_j(tau)`` as it travels between nodes."""

    sender: int
    stamp: int
    payload: np.ndarray

    def __post_init__(self):
        if self.stamp < 0:
            raise ContractViolation("stamps are non-negative")
        payload = np.array(self.payload, dtype="<f8", copy=True)
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)

    def encode(self) -> bytes:
        """Little-endian record: sender u32, stamp u64, dim u32, f64 x dim."""
        return _HEADER.pack(self.sender, self.stamp, self.payload.size) + self.payload.tobytes()

    @classmethod
    def decode_from(cls, buf: bytes | memoryview, offset: int = 0) -> tuple["StampedParameter", int]:
        sender, stamp, dim = _HEADER.unpack_from(buf, offset)
        start = offset + _HEADER.size
        end = start + 8 * dim
        if end > len(buf):
            raise ContractViolation("truncated message record")
        payload = np.frombuffer(bytes(buf[start:end]), dtype="<f8")
        return cls(sender, stamp, payload), end

    def __eq__(self, other):
        if not isinstance(other, StampedParameter):
            return NotImplemented
        return (self.sender == other.sender and self.stamp == other.stamp
                and self.payload.tobytes() == other.payload.tobytes())

    __hash__ = None


def encode_messages(messages: Iterable[StampedParameter]) -> bytes:
    return b"".join(m.encode() for m in messages)


def decode_messages(buf: bytes) -> Iterator[StampedParameter]:
    offset = 0
    while offset < len(buf):
        msg, offset = StampedParameter.decode_from(buf, offset)
        yield msg


@dataclass
class NodeState:
    """Protocol state owned by one node.

    ``payloads[j]`` holds ``w_j(tau_{i,j}(t))`` with stamp ``stamps[j]``;
    ``payloads[node_id]`` is the node's live parameter ``w_i(t)``.
    ``received`` and ``scheduled`` are the per-peer J and Q flags and
    ``is_scheduled`` is Y_i.
    """

    node_id: int
    payloads: np.ndarray
    stamps: np.ndarray
    received: np.ndarray = None
    scheduled: np.ndarray = None
    is_scheduled: bool = True
    t: int = 0
    t_s: int = 0
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        n = self.payloads.shape[0]
        if self.received is None:
            self.received = np.ones(n, dtype=bool)
        if self.scheduled is None:
            self.scheduled = np.ones(n, dtype=bool)

    @classmethod
    def initial(cls, node_id: int, initial_params: Sequence[np.ndarray]) -> "NodeState":
        """State after the start-up broadcast of every ``w_j(0)`` with stamp 0."""
        payloads = np.array([check_vector(p) for p in initial_params], dtype=float)
        return cls(node_id, payloads, np.zeros(len(initial_params), dtype=np.int64))

    @property
    def node_count(self) -> int:
        return self.payloads.shape[0]

    @property
    def w(self) -> np.ndarray:
        return self.payloads[self.node_id]

    @property
    def latest_received(self) -> dict[int, StampedParameter]:
        return {j: StampedParameter(j, int(self.stamps[j]), self.payloads[j])
                for j in range(self.node_count) if j != self.node_id and self.stamps[j] >= 0}

    def lag(self) -> int:
        """Largest ``t - tau_{i,j}(t)`` over all peers."""
        return int(self.t - self.stamps.min())

    def copy(self) -> "NodeState":
        return NodeState(self.node_id, self.payloads.copy(), self.stamps.copy(),
                         self.received.copy(), self.scheduled.copy(),
                         self.is_scheduled, self.t, self.t_s, self.dropped)


def _fraction_vector(state: NodeState, fractions) -> np.ndarray:
    alpha = np.asarray(fractions if not isinstance(fractions, Mapping)
                       else [fractions[j] for j in range(state.node_count)], dtype=float)
    if alpha.shape != (state.node_count,):
        raise ContractViolation("one fraction per node is required")
    return alpha


def _require_full_mailbox(state: NodeState) -> None:
    missing = np.nonzero(state.stamps < 0)[0]
    if missing.size:
        raise ProtocolStateError(f"node {state.node_id} has no parameter from {missing.tolist()}")


def shared_parameter(state: NodeState, fractions) -> np.ndarray:
    """``(1 / (1 - a_i)) * sum_{j != i} a_j w_j(tau_{i,j}(t))``."""
    alpha = _fraction_vector(state, fractions)
    i = state.node_id
    rest = 1.0 - alpha[i]
    if rest <= 0:
        raise DegenerateTopologyError("a node holding the whole dataset has no peers to share with")
    _require_full_mailbox(state)
    weights = alpha.copy()
    weights[i] = 0.0
    return weights @ state.payloads / rest


def aggregate(state: NodeState, fractions) -> np.ndarray:
    """Aggregated parameter ``v_i(t) = sum_j a_j w_j(tau_{i,j}(t))``."""
    alpha = _fraction_vector(state, fractions)
    _require_full_mailbox(state)
    if state.stamps[state.node_id] != state.t:
        raise ProtocolStateError("self entry is not current")
    return alpha @ state.payloads


@dataclass(frozen=True)
class StepResult:
    v: np.ndarray
    s: np.ndarray
    grad: np.ndarray


def local_step(state: NodeState, task: LocalTask, fractions, eta: float,
               window: tuple[float, float] | None = None) -> StepResult:
    """Advance the node one iteration in place: ``w <- [w - eta*grad_i F_i(v)]^+``.

    ``window`` is an optional admissible ``(lower, upper)`` learning-rate
    interval enforced before stepping.
    """
    if window is not None and not window[0] < eta < window[1]:
        raise ContractViolation(f"eta={eta} outside the admissible window {window}")
    v = aggregate(state, fractions)
    grad = local_gradient(task, v)
    s = descent_direction(task, state.w, v, eta, check_sign=False)
    i = state.node_id
    state.payloads[i] = state.payloads[i] + eta * s
    state.t += 1
    state.stamps[i] = state.t
    return StepResult(v, s, grad)


def local_update(state: NodeState, task: LocalTask, fractions, eta: float,
                 window: tuple[float, float] | None = None) -> NodeState:
    local_step(state, task, fractions, eta, window)
    return state


def deliver(state: NodeState, msg: StampedParameter) -> bool:
    """Store ``msg`` unless it is older than the copy already held.

    Returns whether the mailbox changed. Equal stamps are treated as
    duplicates and only re-assert the received flag.
    """
    j = msg.sender
    if j == state.node_id:
        raise ContractViolation("a node never delivers to itself")
    if msg.stamp < state.stamps[j]:
        log.warning("node %d dropped stale message from %d (stamp %d < %d)",
                    state.node_id, j, msg.stamp, state.stamps[j])
        state.dropped += 1
        return False
    if msg.stamp > state.t:
        raise ContractViolation(
            f"message stamped {msg.stamp} is from the future of node {state.node_id} (t={state.t})")
    state.received[j] = True
    if msg.stamp == state.stamps[j]:
        return False
    state.payloads[j] = msg.payload
    state.stamps[j] = msg.stamp
    return True


def check_staleness(state: NodeState, gamma: int) -> bool:
    """``max(t - gamma, 0) < tau_{i,j}(t) <= t`` for every peer, ``tau_{i,i} = t``."""
    t = state.t
    i = state.node_id
    if state.stamps[i] != t:
        return False
    others = np.delete(state.stamps, i)
    return bool(np.all(others > max(t - gamma, 0)) and np.all(others <= t))
