"""bitvolt: distributed volt/var control on radial feeders with two-bit
messaging, a DistFlow/linear plant pair, and executable convergence
certificates."""

from .grid import LinearModel, RadialNetwork, build_matrices, voltage_map
from .plant import (
    DistFlowNonConvergence,
    DistFlowPlant,
    LinearPlant,
    OperatingCondition,
    Plant,
    constant_term,
    evaluate_voltage,
    linearization_gap,
)
from .control import (
    ControllerParams,
    ControllerState,
    DualPair,
    QuantizedMessage,
    Variant,
    step_round,
)

__version__ = "0.1.0"
