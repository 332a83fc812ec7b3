"""Simulation and multiple-timescale analysis of PPN neuron models."""

from .model import ModelSpec, GateKinetics, ChannelDef, CalciumParams, build_model, load_model
from .integrate import IntegratorConfig, Trace, integrate, settle, detect_spikes
from .protocols import Protocol, Segment, make_protocol, run
from .nondim import Scales, classify, nondimensionalize
from .continuation import Branch, Shooting, continue_equilibria, continue_cycles, find_equilibrium
from .gspt import Partition, freeze, manifold_slice, detect_crossings
from .scenarios import SCENARIOS, run_scenario

__version__ = "0.1.0"
