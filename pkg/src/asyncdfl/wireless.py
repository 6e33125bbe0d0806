"""Radio model for parameter exchange inside one cell.

Nodes are dropped uniformly in a disk, links see Rayleigh block fading
(power gain ~ Exp(1)) and power-law path loss. Links whose SINR clears a
threshold are scheduled, and the shared band is split among transmitting
nodes so that the slowest scheduled link is as fast as possible.

Indexing convention: ``sinr[j, i]`` is the SINR at receiver ``j`` for a
transmission from node ``i``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractViolation

log = logging.getLogger(__name__)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class WirelessConfig:
    cell_radius_m: float = 500.0
    path_loss_exponent: float = 4.0
    bandwidth_hz: float = 1e7
    tx_power_dbm: float = 30.0
    noise_dbm_per_hz: float = -174.0
    quant_bits: int = 16
    gamma_db: float = 0.0
    w0_slots: int = 1
    training_latency_s: float = 0.25
    sparsity: float = 1.0
    payload_params: int | None = None
    multi_cell: bool = False

    @property
    def noise_w(self) -> float:
        """Noise power over the whole band."""
        return dbm_to_watts(self.noise_dbm_per_hz) * self.bandwidth_hz

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def gamma_linear(self) -> float:
        return db_to_linear(self.gamma_db)

    def payload_bits(self, model_dim: int) -> float:
        params = self.payload_params if self.payload_params is not None else model_dim
        return float(params * self.quant_bits)


def place_nodes(rng: np.random.Generator, radius: float, count: int | None = None,
                density: float | None = None) -> np.ndarray:
    """Uniform points in a disk of ``radius`` centred at the origin.

    With ``density`` (nodes per square metre) the count is Poisson, redrawn
    until at least two nodes are present.
    """
    if count is None:
        if density is None or density <= 0:
            raise ConfigError("give a node count or a positive density")
        mean = density * math.pi * radius ** 2
        count = 0
        while count < 2:
            count = int(rng.poisson(mean))
    if count < 2:
        raise ConfigError(f"at least two nodes are required, got {count}")
    r = radius * np.sqrt(rng.random(count))
    theta = 2.0 * np.pi * rng.random(count)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _hex_ring_centres(radius: float) -> np.ndarray:
    spacing = math.sqrt(3.0) * radius
    angles = np.pi / 6 + np.arange(6) * np.pi / 3
    return spacing * np.column_stack([np.cos(angles), np.sin(angles)])


@dataclass(frozen=True)
class RadioEnvironment:
    """Node geometry, fading draw and link budget for one coherence block.

    ``fading[j, i]`` is the gain on the link from ``i`` to ``j``. Out-of-cell
    co-channel transmitters (multi-cell mode) sit at ``interferers`` with
    gains ``interferer_fading[j, x]`` towards in-cell receiver ``j``.
    """

    positions: np.ndarray
    cell_radius: float
    path_loss_exponent: float
    tx_power_w: float
    noise_w: float
    fading: np.ndarray
    interferers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    interferer_fading: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if not self.path_loss_exponent > 2:
            raise ConfigError("path loss exponent must exceed 2")
        d = self.distances()
        off = ~np.eye(len(self.positions), dtype=bool)
        if np.any(d[off] <= 0):
            raise ContractViolation("two nodes share a location")

    @property
    def node_count(self) -> int:
        return self.positions.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def interference(self) -> np.ndarray:
        """Total out-of-cell power at each in-cell receiver."""
        if self.interferers.shape[0] == 0:
            return np.zeros(self.node_count)
        diff = self.positions[:, None, :] - self.interferers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        return (self.tx_power_w * self.interferer_fading * dist ** -self.path_loss_exponent).sum(axis=1)


def make_environment(cfg: WirelessConfig, rng: np.random.Generator,
                     positions: np.ndarray | None = None, count: int | None = None) -> RadioEnvironment:
    if positions is None:
        positions = place_nodes(rng, cfg.cell_radius_m, count)
    n = len(positions)
    interferers = np.zeros((0, 2))
    if cfg.multi_cell:
        centres = _hex_ring_centres(cfg.cell_radius_m)
        interferers = centres + place_nodes(rng, cfg.cell_radius_m, len(centres))
    env = RadioEnvironment(positions, cfg.cell_radius_m, cfg.path_loss_exponent,
                           cfg.tx_power_w, cfg.noise_w, np.ones((n, n)), interferers,
                           np.ones((n, len(interferers))))
    return redraw_fading(env, rng)


def redraw_fading(env: RadioEnvironment, rng: np.random.Generator) -> RadioEnvironment:
    """New independent Exp(1) gains on every link (block fading)."""
    n = env.node_count
    fading = rng.exponential(1.0, size=(n, n))
    np.fill_diagonal(fading, 1.0)
    return replace(env, fading=fading,
                   interferer_fading=rng.exponential(1.0, size=(n, env.interferers.shape[0])))


def sinr(env: RadioEnvironment, tx: int, rx: int) -> float:
    if tx == rx:
        raise ContractViolation("SINR of a node towards itself is undefined")
    d = np.linalg.norm(env.positions[rx] - env.positions[tx])
    signal = env.tx_power_w * env.fading[rx, tx] * d ** -env.path_loss_exponent
    return float(signal / (env.interference()[rx] + env.noise_w))


def sinr_matrix(env: RadioEnvironment) -> np.ndarray:
    """``S[j, i]`` = SINR at ``j`` for transmitter ``i``; NaN on the diagonal."""
    d = env.distances()
    np.fill_diagonal(d, 1.0)
    signal = env.tx_power_w * env.fading * d ** -env.path_loss_exponent
    out = signal / (env.interference()[:, None] + env.noise_w)
    np.fill_diagonal(out, np.nan)
    return out


@dataclass(frozen=True)
class Schedule:
    receivers: dict[int, frozenset[int]]
    scheduled: frozenset[int]


def build_schedule(sinr_mat: np.ndarray, gamma: float) -> Schedule:
    """Receivers of ``i`` are the peers whose SINR exceeds ``gamma`` (linear)."""
    if not gamma > 0:
        raise ContractViolation("the SINR threshold must be positive")
    n = sinr_mat.shape[0]
    receivers = {}
    for i in range(n):
        col = sinr_mat[:, i]
        receivers[i] = frozenset(j for j in range(n) if j != i and col[j] > gamma)
    return Schedule(receivers, frozenset(i for i, r in receivers.items() if r))


def min_rates(schedule: Schedule, sinr_mat: np.ndarray) -> dict[int, float]:
    """Worst-receiver spectral efficiency ``R_i`` (bit/s/Hz) of each scheduled node."""
    return {i: min(math.log2(1.0 + sinr_mat[j, i]) for j in schedule.receivers[i])
            for i in sorted(schedule.scheduled)}


def _usable(schedule: Schedule, rates: dict[int, float]) -> tuple[Schedule, dict[int, float]]:
    dead = [i for i, r in rates.items() if not r > 0]
    if not dead:
        return schedule, rates
    log.warning("excluding nodes %s with zero achievable rate", dead)
    keep = schedule.scheduled.difference(dead)
    recv = {i: (r if i in keep else frozenset()) for i, r in schedule.receivers.items()}
    return Schedule(recv, keep), {i: rates[i] for i in sorted(keep)}


def allocate_bandwidth(schedule: Schedule, sinr_mat: np.ndarray, total: float) -> dict[int, float]:
    """Max-min optimal split of ``total`` Hz: ``B_i`` proportional to ``1 / R_i``.

    Every scheduled node ends up with the same worst-link throughput
    ``B_i * R_i``; unscheduled nodes get zero.
    """
    schedule, rates = _usable(schedule, min_rates(schedule, sinr_mat))
    n = sinr_mat.shape[0]
    out = {i: 0.0 for i in range(n)}
    if not rates:
        return out
    inv = {i: 1.0 / r for i, r in rates.items()}
    norm = math.fsum(inv.values())
    for i, x in inv.items():
        out[i] = total * x / norm
    return out


def uniform_allocation(schedule: Schedule, sinr_mat: np.ndarray, total: float) -> dict[int, float]:
    schedule, rates = _usable(schedule, min_rates(schedule, sinr_mat))
    out = {i: 0.0 for i in range(sinr_mat.shape[0])}
    for i in rates:
        out[i] = total / len(rates)
    return out


def random_allocation(schedule: Schedule, sinr_mat: np.ndarray, total: float,
                      rng: np.random.Generator) -> dict[int, float]:
    """Uniformly random point of the bandwidth simplex."""
    schedule, rates = _usable(schedule, min_rates(schedule, sinr_mat))
    out = {i: 0.0 for i in range(sinr_mat.shape[0])}
    if rates:
        share = rng.dirichlet(np.ones(len(rates)))
        for i, s in zip(rates, share):
            out[i] = total * float(s)
    return out


def min_throughput(schedule: Schedule, sinr_mat: np.ndarray, bandwidths: dict[int, float]) -> float:
    """Objective of the allocation problem: ``min_{i, j in Y_i} B_i log2(1 + SINR_{j,i})``."""
    vals = [bandwidths[i] * math.log2(1.0 + sinr_mat[j, i])
            for i in schedule.scheduled for j in schedule.receivers[i]]
    return min(vals) if vals else float("nan")


def transmission_durations(schedule: Schedule, bandwidths: dict[int, float], sinr_mat: np.ndarray,
                           sparsity: float, payload_bits: float, latency_s: float):
    """Per-link durations ``q S / (T B_i log2(1 + SINR_{j,i}))`` in iterations.

    Returns ``(durations, slots, gamma_t)``: real durations keyed by
    ``(j, i)``, the same ceiled to whole slots, and their maximum.
    """
    if latency_s <= 0 or payload_bits <= 0:
        raise ContractViolation("latency and payload size must be positive")
    durations, slots = {}, {}
    for i in sorted(schedule.scheduled):
        b = bandwidths.get(i, 0.0)
        if not b > 0:
            raise ContractViolation(f"scheduled node {i} has no bandwidth")
        for j in sorted(schedule.receivers[i]):
            dur = sparsity * payload_bits / (latency_s * b * math.log2(1.0 + sinr_mat[j, i]))
            durations[(j, i)] = dur
            slots[(j, i)] = max(1, math.ceil(dur))
    return durations, slots, max(slots.values(), default=0)


def waiting_duration(schedule: Schedule, node_count: int, w0_slots: int = 1) -> int:
    """Slots reserved for the nodes left out of the schedule."""
    return w0_slots * (node_count - len(schedule.scheduled))


@dataclass(frozen=True)
class ScheduleOutcome:
    receivers: dict[int, frozenset[int]]
    scheduled: frozenset[int]
    min_rates: dict[int, float]
    bandwidths: dict[int, float]
    durations: dict[tuple[int, int], float]
    slots: dict[tuple[int, int], int]
    gamma_t: int
    gamma_w: int

    @property
    def gamma(self) -> int:
        return self.gamma_w + self.gamma_t

    @property
    def bandwidth_min(self) -> float:
        vals = [self.bandwidths[i] for i in self.scheduled]
        return min(vals) if vals else float("nan")


def plan_epoch(env: RadioEnvironment, cfg: WirelessConfig, model_dim: int,
               allocation: str = "optimal", rng: np.random.Generator | None = None) -> ScheduleOutcome:
    """Schedule, allocate and time one parameter-transmission epoch."""
    smat = sinr_matrix(env)
    sched = build_schedule(smat, cfg.gamma_linear)
    if allocation == "optimal":
        bw = allocate_bandwidth(sched, smat, cfg.bandwidth_hz)
    elif allocation == "uniform":
        bw = uniform_allocation(sched, smat, cfg.bandwidth_hz)
    elif allocation == "random":
        if rng is None:
            raise ContractViolation("random allocation needs a generator")
        bw = random_allocation(sched, smat, cfg.bandwidth_hz, rng)
    else:
        raise ConfigError(f"unknown allocation {allocation!r}")
    sched, rates = _usable(sched, min_rates(sched, smat))
    durations, slots, gamma_t = transmission_durations(
        sched, bw, smat, cfg.sparsity, cfg.payload_bits(model_dim), cfg.training_latency_s)
    return ScheduleOutcome(sched.receivers, sched.scheduled, rates, bw, durations, slots,
                           gamma_t, waiting_duration(sched, env.node_count, cfg.w0_slots))
