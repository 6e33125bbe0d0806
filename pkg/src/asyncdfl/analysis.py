"""Convergence-bound bookkeeping for simulation traces.

The decrease guarantee evaluated here reads

    F(w(t+1)) <= F(w(0)) - eta * u(eta) * sum_{tau <= t} ||g(tau)||^2

with ``g`` the stacked descent directions of all nodes and ``u`` the
coefficient computed by :func:`u_of_eta`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .learning import LocalTask, SmoothnessConstants, local_loss


def global_loss(tasks: Sequence[LocalTask], w: np.ndarray) -> float:
    """Fraction-weighted sum of local losses at a single point."""
    return math.fsum(t.fraction * local_loss(t, w) for t in tasks)


def u_of_eta(c: SmoothnessConstants, node_count: int, eta: float, gamma: float) -> float:
    I = node_count
    return (I / c.L3
            - c.delta * (I - 1) / c.L2
            - (I * (3.0 + eta) - 1.0) * c.L1 / 2.0
            - (3 * I - 1) * eta ** 2 * c.L1 * gamma ** 2 / 2.0)


@dataclass(frozen=True)
class EtaWindow:
    lower: float
    upper: float

    @property
    def empty(self) -> bool:
        return not self.lower < self.upper

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, eta: float) -> bool:
        return self.lower < eta < self.upper


def eta_window(c: SmoothnessConstants, node_count: int, delta: float | None = None) -> EtaWindow:
    """Admissible learning rates ``delta < eta < min(2/(L1 L3) - (3I-1)/I, sqrt(delta))``."""
    delta = c.delta if delta is None else delta
    I = node_count
    upper = min(2.0 / (c.L1 * c.L3) - (3 * I - 1) / I, math.sqrt(delta))
    return EtaWindow(delta, upper)


@dataclass
class BoundTrace:
    """Per-iteration loss next to the running bound.

    ``global_loss[t]`` is the loss after update ``t`` and ``bound[t]`` the
    bound accumulated through ``g(t)``.
    """

    initial_loss: float
    u: float
    eta: float
    global_loss: np.ndarray
    grad_norm_sq: np.ndarray
    bound: np.ndarray
    consensus: np.ndarray
    consensus_stale: np.ndarray
    heuristic: bool = False
    rtol: float = 1e-9

    @property
    def vacuous(self) -> bool:
        return not self.u > 0

    @property
    def violations(self) -> np.ndarray:
        if self.vacuous:
            return np.zeros(0, dtype=int)
        slack = self.rtol * np.abs(self.bound)
        return np.nonzero(self.global_loss > self.bound + slack)[0]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "global_loss", "grad_norm_sq", "bound_U", "u_eta",
                         "consensus_max", "consensus_stale"])
            for t in range(len(self.global_loss)):
                wr.writerow([t, repr(float(self.global_loss[t])), repr(float(self.grad_norm_sq[t])),
                             repr(float(self.bound[t])), repr(self.u),
                             repr(float(self.consensus[t])), repr(float(self.consensus_stale[t]))])

    def summary(self) -> dict:
        return {"initial_loss": self.initial_loss, "u_eta": self.u, "eta": self.eta,
                "vacuous": self.vacuous, "heuristic": self.heuristic,
                "final_loss": float(self.global_loss[-1]) if len(self.global_loss) else None,
                "final_bound": float(self.bound[-1]) if len(self.bound) else None,
                "violations": int(len(self.violations))}


def bound_trace(records, initial_loss: float, constants: SmoothnessConstants, node_count: int,
                eta: float, gamma: float, heuristic: bool = False) -> BoundTrace:
    """Evaluate the running bound over a sequence of trace records."""
    loss = np.array([r.global_loss for r in records], dtype=float)
    g2 = np.array([r.grad_norm_sq for r in records], dtype=float)
    u = u_of_eta(constants, node_count, eta, gamma)
    bound = initial_loss - eta * u * np.cumsum(g2)
    return BoundTrace(initial_loss, u, eta, loss, g2, bound,
                      np.array([r.consensus_max for r in records], dtype=float),
                      np.array([r.consensus_stale for r in records], dtype=float),
                      heuristic=heuristic)


def consensus_metrics(records) -> tuple[np.ndarray, np.ndarray]:
    """``max_i ||w(t) - v_i(t)||`` and ``max_{i,j} ||w_i(t) - w_i(tau_{j,i}(t))||`` per iteration."""
    return (np.array([r.consensus_max for r in records], dtype=float),
            np.array([r.consensus_stale for r in records], dtype=float))


@dataclass
class ObservedConstants:
    """Running extremes of the quantities bounded by the smoothness constants.

    ``ratio_min``/``ratio_max`` track ``||s_i|| / ||grad_i||`` and
    ``delta`` tracks ``||s_i - s_j|| / min(||s_i||, ||s_j||)``. Pairs with a
    zero norm below ``floor`` carry no information and are skipped.
    """

    ratio_min: float = math.inf
    ratio_max: float = 0.0
    delta: float = 0.0
    floor: float = 1e-300
    samples: int = field(default=0, compare=False)

    def update(self, directions: Sequence[np.ndarray], gradients: Sequence[np.ndarray]) -> None:
        s = np.asarray(directions)
        g = np.asarray(gradients)
        sn = np.sqrt(np.einsum("ij,ij->i", s, s))
        gn = np.sqrt(np.einsum("ij,ij->i", g, g))
        ok = (gn > self.floor) & (sn > self.floor)
        if np.any(ok):
            r = sn[ok] / gn[ok]
            self.ratio_min = min(self.ratio_min, float(r.min()))
            self.ratio_max = max(self.ratio_max, float(r.max()))
        idx = np.nonzero(sn > self.floor)[0]
        if idx.size > 1:
            sub = s[idx]
            d = sub[:, None, :] - sub[None, :, :]
            diff = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
            m = np.minimum(sn[idx][:, None], sn[idx][None, :])
            np.fill_diagonal(diff, 0.0)
            self.delta = max(self.delta, float((diff / m).max()))
        self.samples += 1

    def constants(self, L1: float) -> SmoothnessConstants:
        lo = self.ratio_min if math.isfinite(self.ratio_min) else 1.0
        hi = self.ratio_max if self.ratio_max > 0 else 1.0
        return SmoothnessConstants(L1=L1, L2=lo, L3=hi, delta=self.delta)


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
