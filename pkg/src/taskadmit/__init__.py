"""Admission control for multi-class tasks on parallel servers with time-varying
arrivals: exact finite-horizon value iteration, a stationary average-reward
solver, state aggregation, baselines and an event simulator."""
from .domain import (AtomicPrice, CombinationSpace, ConstantRate, EmpiricalPrice, LomaxPrice, MixturePrice,
                     PiecewiseLinearRate, ProblemInstance, SinusoidRate, StepRate, SumRate, TaskClass,
                     enumerate_combinations, mean_shortage, successor_on_accept)
from .errors import BudgetExceeded, ConfigError, ConvergenceError, MemoryBudgetExceeded

__version__ = "0.1.0"
