"""Slot-clocked simulation of asynchronous decentralized learning.

One slot is one learning iteration. Iteration ``t`` runs three phases:

1. messages whose arrival slot is ``t`` are delivered into mailboxes;
2. every node aggregates its mailbox into ``v_i(t)`` and takes one
   projected-gradient step, producing ``w_i(t+1)``;
3. if the current transmission epoch is over (its duration has elapsed
   and every message has landed) a new epoch is planned and each node
   sends ``w_i(t+1)`` (stamp ``t+1``) to its receivers. A message with
   a delay of ``d`` slots lands at the start of iteration ``t + 1 + d``.

The mailboxes of all nodes live in one ``(I, I, d)`` array; each node's
:class:`~asyncdfl.protocol.NodeState` is a view onto its row, so
deliveries go through :func:`asyncdfl.protocol.deliver` while the learning
step is vectorised across nodes.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from .analysis import BoundTrace, ObservedConstants, bound_trace, eta_window, u_of_eta
from .config import CENTRALISED, DEFAULT_CLASSIFIER_ETA, SimConfig
from .errors import ConfigError, ContractViolation, StalenessViolation
from .learning import (LocalTask, LossKind, Regularizer, RegularizerKind, SmoothnessConstants,
                       estimate_constants, full_gradient, local_loss, predict, project,
                       smoothness_bound, validate_fractions)
from .protocol import NodeState, StampedParameter, deliver
from .trace import DumpWriter, TraceRecord, read_dump
from .wireless import RadioEnvironment, make_environment, plan_epoch, redraw_fading

log = logging.getLogger(__name__)

_FEASIBILITY_RTOL = 1e-12


# --------------------------------------------------------------------------
# problem construction

@dataclass
class Problem:
    tasks: list
    alpha: np.ndarray
    init: np.ndarray
    test_features: np.ndarray | None = None
    test_labels: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.init.shape[1]


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each source of randomness in a run."""
    names = ("data", "init", "radio", "channel", "baseline", "probe")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_problem(cfg: SimConfig, streams: dict) -> Problem:
    t = cfg.task
    rng = streams["data"]
    reg = Regularizer(RegularizerKind(t.regularizer), t.bound)
    n = cfg.node_count
    test_x = test_y = None
    if t.loss_kind == "quadratic":
        tasks = datamod.quadratic_tasks(rng, n, t.dim, t.total_samples // n, t.curvature,
                                        t.curvature_spread, t.common_minimizer, t.spread, reg)
    else:
        if t.csv_path:
            x, y = datamod.load_csv_dataset(t.csv_path)
        elif t.idx_images:
            x, y = datamod.load_idx_dataset(t.idx_images, t.idx_labels)
        else:
            n_all = int(round(t.total_samples / (1.0 - t.test_fraction)))
            if t.loss_kind == "logistic":
                x, y = datamod.make_logistic_data(rng, n_all, t.dim, t.noise)
            else:
                x, y = datamod.make_blobs(rng, n_all, t.dim, t.classes, t.spread)
        order = rng.permutation(len(x))
        n_test = len(x) - min(t.total_samples, int(len(x) * (1.0 - t.test_fraction)))
        test_idx, train_idx = order[:n_test], order[n_test:]
        test_x, test_y = x[test_idx], y[test_idx]
        x, y = x[train_idx], y[train_idx]
        parts = datamod.partition(len(x), n, t.partition, rng, y)
        kind = LossKind(t.loss_kind)
        extra = {"hidden": t.hidden, "classes": t.classes} if kind is LossKind.MLP else {}
        tasks = datamod.tasks_from_partition(x, y, parts, kind, reg, **extra)
    validate_fractions(tasks)
    dim = tasks[0].dim
    irng = streams["init"]
    if cfg.common_init:
        init = np.tile(cfg.init_scale * irng.standard_normal(dim), (n, 1))
    else:
        init = cfg.init_scale * irng.standard_normal((n, dim))
    alpha = np.array([tk.fraction for tk in tasks])
    return Problem(tasks, alpha, init, test_x, test_y)


def _probe_points(problem: Problem, rng: np.random.Generator, count: int = 8) -> np.ndarray:
    centre = problem.alpha @ problem.init
    scale = max(1.0, float(np.abs(problem.init).max()))
    return centre + scale * rng.standard_normal((count, problem.dim))


def resolve_eta(cfg: SimConfig, problem: Problem, streams: dict) -> tuple[float, object]:
    """Learning rate to use and the admissible window (``None`` if not computed)."""
    window = None
    needs_window = cfg.strict_eta or (cfg.eta is None and cfg.eta_rule == "window")
    if needs_window and cfg.task.loss_kind != "mlp":
        c = _prior_constants(cfg, problem, streams)
        window = eta_window(c, cfg.node_count)
    eta = cfg.eta
    if eta is None and cfg.eta_rule == "smoothness":
        # the aggregate moves by (eta / I) * grad F, so this is the classic 1 / L step
        eta = cfg.node_count / smoothness_bound(problem.tasks)
    if eta is None:
        if window is not None and not window.empty:
            eta = window.midpoint
        else:
            if cfg.task.loss_kind != "mlp":
                log.warning("empty learning-rate window; falling back to %s", DEFAULT_CLASSIFIER_ETA)
            eta = DEFAULT_CLASSIFIER_ETA
    if cfg.strict_eta:
        if window is None or not window.contains(eta):
            raise ConfigError(f"eta: {eta} lies outside the admissible window {window}")
    return eta, window


def _prior_constants(cfg: SimConfig, problem: Problem, streams: dict) -> SmoothnessConstants:
    if cfg.constants is not None:
        c = cfg.constants
        return SmoothnessConstants(c.L1, c.L2, c.L3, c.delta)
    return estimate_constants(problem.tasks, _probe_points(problem, streams["probe"]))


# --------------------------------------------------------------------------
# vectorised loss helpers

class _Objective:
    """Batched losses and gradients over all nodes' tasks."""

    def __init__(self, problem: Problem):
        self.tasks = problem.tasks
        self.alpha = problem.alpha
        self.quadratic = all(t.loss_kind is LossKind.QUADRATIC for t in self.tasks)
        if self.quadratic:
            self.means = np.array([t._sample_mean for t in self.tasks])
            self.curv = np.array([t.curvature for t in self.tasks])
            self.spreads = np.array([t._sample_spread for t in self.tasks])
        regs = {t.regularizer for t in self.tasks}
        self.reg = regs.pop() if len(regs) == 1 else None
        if self.reg is not None and self.reg.kind is RegularizerKind.L2:
            self.radius = math.sqrt(2.0 * self.reg.bound)
        else:
            self.radius = None
        self.test_x = problem.test_features
        self.test_y = problem.test_labels

    def full_gradients(self, points: np.ndarray) -> np.ndarray:
        """Row ``i`` is ``grad F_i(points[i])``."""
        if self.quadratic:
            return self.curv[:, None] * (points - self.means)
        return np.array([full_gradient(t, p) for t, p in zip(self.tasks, points)])

    def losses_at(self, point: np.ndarray) -> np.ndarray:
        """``F_i(point)`` for every node at one shared point."""
        if self.quadratic:
            diff = point[None, :] - self.means
            return 0.5 * self.curv * (np.einsum("ij,ij->i", diff, diff) + self.spreads)
        return np.array([local_loss(t, point) for t in self.tasks])

    def losses_rows(self, points: np.ndarray) -> np.ndarray:
        if self.quadratic:
            diff = points - self.means
            return 0.5 * self.curv * (np.einsum("ij,ij->i", diff, diff) + self.spreads)
        return np.array([local_loss(t, p) for t, p in zip(self.tasks, points)])

    def global_loss(self, point: np.ndarray) -> float:
        return float(self.alpha @ self.losses_at(point))

    def project_rows(self, cand: np.ndarray) -> np.ndarray:
        if self.radius is not None:
            norms = np.linalg.norm(cand, axis=1)
            over = norms > self.radius * (1 + _FEASIBILITY_RTOL)
            if not np.any(over):
                return cand
            out = cand.copy()
            out[over] = cand[over] * (self.radius / norms[over])[:, None]
            return out
        return np.array([project(t.regularizer, c) for t, c in zip(self.tasks, cand)])

    def accuracy(self, point: np.ndarray) -> float:
        if self.test_x is None or len(self.test_x) == 0:
            return float("nan")
        pred = predict(self.tasks[0], point, self.test_x)
        return float(np.mean(pred == self.test_y))


# --------------------------------------------------------------------------
# channel

@dataclass
class InFlightMessage:
    sender: int
    receiver: int
    message: StampedParameter
    departure: int
    arrival: int
    superseded: bool = False

    def __post_init__(self):
        if self.arrival <= self.departure:
            raise ContractViolation("a message must arrive after it departs")


@dataclass
class MessageCounts:
    sent: int = 0
    arrived: int = 0
    accepted: int = 0
    duplicates: int = 0
    dropped: int = 0
    superseded: int = 0
    in_flight: int = 0

    @property
    def balanced(self) -> bool:
        return (self.sent == self.arrived + self.superseded + self.in_flight
                and self.arrived == self.accepted + self.duplicates + self.dropped)


@dataclass
class EpochInfo:
    start: int
    length: int
    gamma: int
    gamma_t: int
    gamma_w: int
    scheduled: int
    bandwidth_min: float
    links: int


class Channel:
    """Plans transmission epochs and holds messages in flight."""

    def __init__(self, cfg: SimConfig, allocation: str, node_count: int, dim: int, streams: dict):
        self.cfg = cfg
        self.mode = "wireless" if cfg.algorithm in ("UniformBW", "RandomBW") else cfg.channel
        self.allocation = allocation
        self.n = node_count
        self.dim = dim
        self.rng = streams["channel"]
        self.radio_rng = streams["radio"]
        self.env: RadioEnvironment | None = None
        if self.mode == "wireless":
            self.env = make_environment(cfg.wireless, self.radio_rng, count=node_count)
        g = cfg.gamma_max
        self.max_delay = max(0, (g - 1) // 2) if g >= 1 else 0
        self.pending: dict[int, list[InFlightMessage]] = defaultdict(list)
        self.latest: dict[tuple[int, int], InFlightMessage] = {}
        self.counts = MessageCounts()
        self.epochs: list[EpochInfo] = []
        self.next_epoch = 0
        self.current: EpochInfo | None = None

    def ready(self, t: int) -> bool:
        return t >= self.next_epoch and self.counts.sent == (
            self.counts.arrived + self.counts.superseded)

    def _links(self):
        """Yield ``(receiver, sender, delay)`` and the epoch description."""
        n = self.n
        if self.mode == "wireless":
            self.env = redraw_fading(self.env, self.radio_rng)
            out = plan_epoch(self.env, self.cfg.wireless, self.dim, self.allocation, self.radio_rng)
            links = [(j, i, out.slots[(j, i)] - 1) for (j, i) in sorted(out.slots)]
            length = max(1, out.gamma)
            info = (out.gamma, out.gamma_t, out.gamma_w, len(out.scheduled), out.bandwidth_min)
            return links, length, info
        pairs = [(j, i) for i in range(n) for j in range(n) if i != j]
        if self.mode == "ideal":
            delays = [0] * len(pairs)
        elif self.mode == "fixed":
            delays = [self.max_delay] * len(pairs)
        else:
            delays = self.rng.integers(0, self.max_delay + 1, size=len(pairs)).tolist()
        links = [(j, i, d) for (j, i), d in zip(pairs, delays)]
        length = 1 + max(delays)
        return links, length, (length, length, 0, n, float("nan"))

    def start_epoch(self, t: int, params: np.ndarray, states: list[NodeState]) -> EpochInfo:
        links, length, (gamma, gt, gw, sched, bmin) = self._links()
        outgoing = {}
        for j, i, d in links:
            msg = outgoing.get(i)
            if msg is None:
                msg = outgoing[i] = StampedParameter(i, t + 1, params[i])
            old = self.latest.get((j, i))
            if old is not None and not old.superseded and old.arrival > t:
                old.superseded = True
                self.counts.superseded += 1
            flight = InFlightMessage(i, j, msg, t, t + 1 + d)
            self.pending[flight.arrival].append(flight)
            self.latest[(j, i)] = flight
            states[j].received[i] = False
            self.counts.sent += 1
        targets = {st.node_id: [] for st in states}
        for j, i, _ in links:
            targets[i].append(j)
        for st in states:
            st.scheduled[:] = False
            st.scheduled[targets[st.node_id]] = True
            st.is_scheduled = bool(targets[st.node_id])
            st.t_s = t
        info = EpochInfo(t, length, gamma, gt, gw, sched, bmin, len(links))
        self.epochs.append(info)
        self.current = info
        self.next_epoch = t + length
        return info

    def arrivals(self, t: int) -> list[InFlightMessage]:
        due = self.pending.pop(t, [])
        live = [m for m in due if not m.superseded]
        live.sort(key=lambda m: (m.receiver, m.sender))
        return live

    def finish(self) -> None:
        self.counts.in_flight = sum(1 for lst in self.pending.values() for m in lst if not m.superseded)


# --------------------------------------------------------------------------
# results

@dataclass
class RunResult:
    config: SimConfig
    records: list
    eta: float
    initial_loss: float
    final_params: np.ndarray
    constants: SmoothnessConstants | None = None
    gamma_bound: int = 0
    bound: BoundTrace | None = None
    counts: MessageCounts = field(default_factory=MessageCounts)
    epochs: list = field(default_factory=list)
    staleness_violations: int = 0
    stopped_early: bool = False
    simplified: bool = False
    heuristic_bound: bool = False
    trajectory: np.ndarray | None = None

    @property
    def final_loss(self) -> float:
        return self.records[-1].global_loss if self.records else self.initial_loss

    @property
    def mean_epoch_gamma(self) -> float:
        return float(np.mean([e.gamma for e in self.epochs])) if self.epochs else float("nan")

    def summary(self) -> dict:
        out = {
            "name": self.config.name,
            "algorithm": self.config.algorithm,
            "seed": self.config.seed,
            "iterations": len(self.records),
            "eta": self.eta,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "final_accuracy": self.records[-1].accuracy if self.records else float("nan"),
            "max_gamma_realized": max((r.gamma_realized for r in self.records), default=0),
            "mean_epoch_gamma": self.mean_epoch_gamma,
            "epochs": len(self.epochs),
            "messages": asdict(self.counts),
            "messages_balanced": self.counts.balanced,
            "staleness_violations": self.staleness_violations,
            "stopped_early": self.stopped_early,
            "simplified": self.simplified,
        }
        if self.constants is not None:
            out["constants"] = asdict(self.constants)
        if self.bound is not None:
            out["bound"] = self.bound.summary()
        return out


def _finalise(result: RunResult, gamma: int, constants, heuristic: bool) -> RunResult:
    result.gamma_bound = gamma
    result.constants = constants
    result.heuristic_bound = heuristic
    if constants is None:
        return result
    bt = bound_trace(result.records, result.initial_loss, constants, result.config.node_count,
                     result.eta, gamma, heuristic=heuristic)
    for rec, b in zip(result.records, bt.bound):
        rec.bound_U = float(b)
        rec.u_eta = float(bt.u)
    result.bound = bt
    return result


# --------------------------------------------------------------------------
# asynchronous decentralized run

def run(cfg: SimConfig, dump_path: str | Path | None = None,
        replay_path: str | Path | None = None, keep_params: bool = False) -> RunResult:
    """Simulate ``cfg`` and return its trace.

    ``dump_path`` records every delivery in the binary dump format;
    ``replay_path`` takes deliveries from such a dump instead of from the
    simulated channel. With ``keep_params`` the result also carries the
    aggregate parameter after every iteration in ``trajectory``.
    """
    cfg.validate()
    if cfg.algorithm == "FedAvg":
        return run_fedavg(cfg, keep_params=keep_params)
    if cfg.algorithm in ("FedAvgPartial", "FedSemiAsync"):
        return run_variant(cfg, keep_params=keep_params)
    streams = rng_streams(cfg.seed)
    problem = build_problem(cfg, streams)
    eta, _ = resolve_eta(cfg, problem, streams)
    obj = _Objective(problem)
    n, dim = cfg.node_count, problem.dim
    alpha = problem.alpha

    mail = np.repeat(problem.init[None, :, :], n, axis=0)
    stamps = np.zeros((n, n), dtype=np.int64)
    states = [NodeState(i, mail[i], stamps[i]) for i in range(n)]
    diag = np.arange(n)
    off = ~np.eye(n, dtype=bool)

    allocation = {"UniformBW": "uniform", "RandomBW": "random"}.get(cfg.algorithm, "optimal")
    channel = Channel(cfg, allocation, n, dim, streams)
    replay = _load_replay(replay_path, n, dim) if replay_path is not None else None
    writer = DumpWriter(dump_path, n, dim) if dump_path is not None else None

    observed = ObservedConstants()
    gmax = cfg.gamma_max
    check = channel.mode != "ideal" and gmax >= 1
    violations = 0
    max_lag = 0
    records = []
    w_bar = alpha @ problem.init
    initial_loss = obj.global_loss(w_bar)
    stopped = False
    path = [] if keep_params else None
    try:
        for t in range(cfg.iterations):
            for st in states:
                st.t = t
            # phase 1: deliveries
            if replay is not None:
                channel.arrivals(t)
                batch = replay.get(t, [])
            else:
                batch = [(m.receiver, m.message) for m in channel.arrivals(t)]
            if writer is not None and batch:
                _write_frames(writer, t, batch)
            for rx, msg in batch:
                st = states[rx]
                before = st.dropped
                changed = deliver(st, msg)
                channel.counts.arrived += 1
                if st.dropped > before:
                    channel.counts.dropped += 1
                elif changed:
                    channel.counts.accepted += 1
                else:
                    channel.counts.duplicates += 1

            # staleness bookkeeping at read time
            lag = int(t - stamps[off].min()) if n > 1 else 0
            max_lag = max(max_lag, lag)
            if check and t >= gmax:
                floor = max(t - gmax, 0)
                bad = off & ((stamps <= floor) | (stamps > t))
                if np.any(bad):
                    violations += 1
                    if not cfg.observe_gamma:
                        rx, tx = map(int, np.argwhere(bad)[0])
                        raise StalenessViolation(
                            f"iteration {t}: node {rx} holds stamp {int(stamps[rx, tx])} from node "
                            f"{tx}, outside the staleness bound {gmax}")

            # phase 2: learning
            W = mail[diag, diag]
            v = np.einsum("j,ijd->id", alpha, mail)
            grads = alpha[:, None] * obj.full_gradients(v)
            s = (obj.project_rows(W - eta * grads) - W) / eta
            W_new = W + eta * s
            observed.update(s, grads)
            dv = v - w_bar
            dm = mail - W[None, :, :]
            consensus = math.sqrt(float(np.einsum("id,id->i", dv, dv).max()))
            stale = math.sqrt(float(np.einsum("ijd,ijd->ij", dm, dm).max()))
            mail[diag, diag] = W_new
            stamps[diag, diag] = t + 1
            w_bar = alpha @ W_new
            if path is not None:
                path.append(w_bar)

            # phase 3: transmissions
            if channel.ready(t):
                channel.start_epoch(t, W_new, states)
            ep = channel.current
            rec = TraceRecord(
                slot=t, iteration=t + 1, algorithm=cfg.algorithm,
                global_loss=obj.global_loss(w_bar), bound_U=float("nan"), u_eta=float("nan"),
                grad_norm_sq=float(np.einsum("ij,ij->", s, s)), consensus_max=consensus,
                accuracy=obj.accuracy(w_bar), gamma_realized=lag,
                bandwidth_min=ep.bandwidth_min if ep else float("nan"),
                scheduled_count=ep.scheduled if ep else n, consensus_stale=stale)
            records.append(rec)
            if cfg.stop_epsilon > 0 and np.all(obj.losses_rows(v) <= cfg.stop_epsilon):
                stopped = True
                break
    finally:
        if writer is not None:
            writer.close()
    channel.finish()

    result = RunResult(cfg, records, eta, initial_loss, mail[diag, diag].copy(),
                       counts=channel.counts, epochs=channel.epochs,
                       staleness_violations=violations, stopped_early=stopped,
                       simplified=cfg.algorithm in ("UniformBW", "RandomBW"),
                       trajectory=np.array(path) if path is not None else None)
    constants, heuristic = _posterior_constants(cfg, problem, streams, observed)
    if channel.mode == "ideal":
        gamma = 0
    elif cfg.observe_gamma or not check:
        gamma = max_lag + 1
    else:
        gamma = gmax
    return _finalise(result, gamma, constants, heuristic)


def _posterior_constants(cfg, problem, streams, observed: ObservedConstants):
    """Constants for the bound and whether they are heuristic estimates."""
    if cfg.constants is not None:
        c = cfg.constants
        return SmoothnessConstants(c.L1, c.L2, c.L3, c.delta), False
    if all(t.loss_kind is LossKind.QUADRATIC for t in problem.tasks):
        return observed.constants(max(t.curvature for t in problem.tasks)), False
    try:
        est = estimate_constants(problem.tasks, _probe_points(problem, streams["probe"]))
    except Exception as exc:  # estimation can fail on degenerate data
        log.warning("could not estimate constants: %s", exc)
        return None, True
    return observed.constants(est.L1), True


def _write_frames(writer: DumpWriter, t: int, batch) -> None:
    by_rx: dict[int, list] = defaultdict(list)
    for rx, msg in batch:
        by_rx[rx].append(msg)
    for rx in sorted(by_rx):
        writer.frame(t, rx, by_rx[rx])


def _load_replay(path, n, dim) -> dict[int, list]:
    nodes, d, frames = read_dump(path)
    if nodes != n or d != dim:
        raise ConfigError(f"{path}: dump is for {nodes} nodes of dimension {d}, run has {n} x {dim}")
    out: dict[int, list] = defaultdict(list)
    for fr in frames:
        out[fr.slot].extend((fr.receiver, m) for m in fr.messages)
    return out


# --------------------------------------------------------------------------
# centralised baselines

def _central_loop(cfg: SimConfig, combine, keep_params: bool = False) -> RunResult:
    streams = rng_streams(cfg.seed)
    problem = build_problem(cfg, streams)
    eta = cfg.eta if cfg.eta is not None else resolve_eta(cfg, problem, streams)[0]
    obj = _Objective(problem)
    n = cfg.node_count
    w = problem.alpha @ problem.init
    initial_loss = obj.global_loss(w)
    rng = streams["baseline"]
    records = []
    path = [] if keep_params else None
    stopped = False
    for t in range(cfg.iterations):
        base = np.tile(w, (n, 1))
        grads = obj.full_gradients(base)
        local = obj.project_rows(base - eta * grads)
        s = (local - base) / eta
        w, count = combine(w, local, problem.alpha, rng)
        if path is not None:
            path.append(w)
        records.append(TraceRecord(
            slot=t, iteration=t + 1, algorithm=cfg.algorithm, global_loss=obj.global_loss(w),
            bound_U=float("nan"), u_eta=float("nan"), grad_norm_sq=float(np.einsum("ij,ij->", s, s)),
            consensus_max=0.0, accuracy=obj.accuracy(w), gamma_realized=0,
            bandwidth_min=float("nan"), scheduled_count=count, consensus_stale=0.0))
        if cfg.stop_epsilon > 0 and np.all(obj.losses_at(w) <= cfg.stop_epsilon):
            stopped = True
            break
    return RunResult(cfg, records, eta, initial_loss, np.tile(w, (n, 1)), stopped_early=stopped,
                     simplified=cfg.algorithm != "FedAvg",
                     trajectory=np.array(path) if path is not None else None)


def _fedavg_combine(w, local, alpha, rng):
    return alpha @ local, len(alpha)


def run_fedavg(cfg: SimConfig, keep_params: bool = False) -> RunResult:
    """Server-side averaging of one local projected-gradient step per node and round."""
    return _central_loop(cfg, _fedavg_combine, keep_params)


def run_variant(cfg: SimConfig, keep_params: bool = False) -> RunResult:
    """Simplified baselines: partial participation, semi-asynchronous
    aggregation, or wireless runs with a non-optimal bandwidth split."""
    if cfg.algorithm in ("UniformBW", "RandomBW"):
        return run(cfg, keep_params=keep_params)
    if cfg.algorithm == "FedAvgPartial":
        frac = cfg.participation

        def combine(w, local, alpha, rng):
            n = len(alpha)
            k = max(1, int(round(frac * n)))
            chosen = np.sort(rng.choice(n, size=k, replace=False))
            if k == n:
                return alpha @ local, n
            a = alpha[chosen]
            return (a / a.sum()) @ local[chosen], k

        return _central_loop(cfg, combine, keep_params)
    if cfg.algorithm == "FedSemiAsync":
        k = cfg.semi_async_k or math.ceil(cfg.node_count / 2)
        delay_cap = max(1, (cfg.gamma_max - 1) // 2)

        def combine(w, local, alpha, rng):
            delays = rng.integers(0, delay_cap + 1, size=len(alpha))
            first = np.lexsort((np.arange(len(alpha)), delays))[:k]
            first.sort()
            a = alpha[first]
            return a @ local[first] + (1.0 - a.sum()) * w, k

        return _central_loop(cfg, combine, keep_params)
    raise ConfigError(f"algorithm: {cfg.algorithm} is not a variant")


def run_any(cfg: SimConfig, **kwargs) -> RunResult:
    """Dispatch on the algorithm; dump and replay options apply to decentralized runs only."""
    if cfg.algorithm in CENTRALISED:
        keep = kwargs.get("keep_params", False)
        return run_fedavg(cfg, keep) if cfg.algorithm == "FedAvg" else run_variant(cfg, keep)
    return run(cfg, **kwargs)
