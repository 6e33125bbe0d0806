"""Decentralized federated learning with asynchronous parameter sharing
over a modelled wireless network."""

from .analysis import BoundTrace, EtaWindow, bound_trace, eta_window, global_loss, u_of_eta
from .config import ExperimentSuite, SimConfig, TaskConfig, dump_config, load_config
from .duality import DualityGapEstimate, double_well_instance, estimate_duality_gap
from .engine import RunResult, run, run_fedavg, run_variant
from .learning import (LocalTask, LossKind, Regularizer, RegularizerKind, SmoothnessConstants,
                       descent_direction, estimate_constants, local_gradient, local_loss, project)
from .protocol import NodeState, StampedParameter, aggregate, check_staleness, deliver, local_update, shared_parameter
from .trace import TraceRecord
from .wireless import RadioEnvironment, ScheduleOutcome, WirelessConfig

__version__ = "0.1.0"
