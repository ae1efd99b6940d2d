"""Over-the-air phase calibration of a reconfigurable intelligent surface.

Estimates every element's phase at every gear from despread SIMO pilot
measurements by training a small two-branch network with backpropagation,
and computes the Cramer-Rao bound on those phases.
"""

__version__ = "0.1.0"
CONFIG_SCHEMA_VERSION = 1

from .model import (  # noqa: E402
    ChannelSet, MeasurementSet, PhaseTable, RisConfig, nominal_table, sample_deviated_table,
    wrap_2pi, wrap_pm_pi,
)
from .schedule import GearSchedule, build_schedule, min_measurements, phases_for  # noqa: E402
from .channel import (  # noqa: E402
    ChannelModelSpec, PilotSequence, despread, generate_channels, generate_pilot, measure_set,
    simulate_rx_off, simulate_rx_on,
)
from .estimator import (  # noqa: E402
    CalibrationReport, DivergenceError, QnnState, calibrate, cost, forward, grad_hcas, grad_phi,
    per_iteration_flops, sgd_step,
)
from .crb import CrbResult, SingularFisherError, fisher, group_mean, jacobian_h, jacobian_omega  # noqa: E402
from .harness import ExperimentConfig, TrialResult, align_and_rmse  # noqa: E402
