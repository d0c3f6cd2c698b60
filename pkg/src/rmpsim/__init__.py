"""Riemannian motion policies for multi-robot teams."""

from .core import (BarrierDomainError, CanonicalRMP, ContractViolation, EvaluationError,
                   GDSLeaf, NaturalRMP, RMPTree, State, TaskMap, pullback, pushforward, resolve,
                   rmpflow_policy)
from .centralized import ConfigurationError, RobotTeamSpec, SubtaskAssignment, build_rmp_tree, \
    compute_control
from .decentralized import build_forest, compute_control_decentralized, team_control
from .scenario import Scenario, builtin, load, parse
from .sim import SimConfig, run, simulate

__version__ = "0.1.0"
