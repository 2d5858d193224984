"""Moments, auto-covariances and generating functions of infinite-server
queues fed by a Hawkes process, with a Monte Carlo cross-check, an
admission-rate control solver and click-impact calculators."""

from .errors import *  # noqa: F401,F403
from .hawkes_core import (HawkesParams, HawkesMoments, lambda_inf, transient_moments,
                          unstable_means, autocov_count, general_moment_ode)
from .phase_type import PhaseTypeDist, erlang, exponential, hyperexp, mean_service_time
from .queue_moments import (QueueModel, MomentCurve, mean_vector, cov_lambda_q, cov_matrix,
                            moments, moment_curve, erlang_moments, hyperexp_moments,
                            unstable_mean, autocov_q, minf_autocov, ode_reference)
from .det_queue import DetQueueModel
from .generating import CgfQuery, cgf, mgf, cgf_pde_residual
from .simulate import (SamplePath, EstimateReport, Statistic, Deterministic, Lognormal, Hook,
                       simulate_hawkes, simulate_queue, run_replications, estimate, evaluate,
                       quartile_fraction, click_gap)
from .control import ControlProblem, ControlSolution, optimal_rate, objective, solve
from .applications import ClickImpactQuery, count_gap, dwell_time, revenue_gap

__version__ = "0.1.0"
