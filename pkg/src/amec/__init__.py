"""Energy-minimal scheduling and resource allocation for asynchronous
wireless-powered edge computing: scenario modeling, a low-complexity
frequency allocator, convex oracles, a Benders-style scheduling loop,
baseline schemes and a benchmark CLI."""

from .scenario import (
    PhysicalParams, DeviceTask, Scenario, Schedule, TimeAllocation,
    ScenarioConfig, Tolerances, generate_scenario, load_config, save_config,
    save_report, path_loss, sample_channel, harvested_energy, offload_power,
)
from .freq_alloc import (
    FreqDuals, FreqSolution, TransitionVerdict, allocate_frequencies,
    bisect_alpha, eval_energy, primal_from_duals, required_fmax,
    transition_point,
)
from .errors import (
    AmecError, ConfigError, InfeasibleError, EnergyCausalityError,
    NonConvergenceError, AllSchedulesInfeasibleError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
