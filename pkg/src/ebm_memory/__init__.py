"""Energy balance models with memory: forward solvers, Budyko regularization and inverse tools."""
from .budyko import BudykoSolution, InclusionReport, solve_budyko, verify_inclusion
from .errors import (BoundViolation, DivisionUnstable, EBMError, IntegrityError, InvalidArgument,
                     InvalidState, NoConvergence, ParseError, Unsupported, ValidationError)
from .grid import DiffusionOperator, Grid, ImplicitSolver, apply_diffusion, assemble_diffusion, build_grid
from .inverse import (AdmissibleSetSpec, ObservationSet, ReconstructionResult, observe_localized,
                      reconstruct_q_direct, reconstruct_q_leastsq, stability_ratio,
                      stability_sweep, uniqueness_experiment)
from .io import Scenario, load_preset, load_scenario, parse_scenario, read_trajectory, write_trajectory
from .memory import HistoryBuffer, MemoryKernel, eval_history, init_history, push_state
from .physics import CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec, linf_bound
from .stepper import ModelParams, Trajectory, select_dt, simulate

__version__ = "0.1.0"
