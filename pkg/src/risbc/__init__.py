"""Sum-rate maximization for RIS-aided MIMO broadcast channels via the dual MAC."""

from .drivers import (
    ALGORITHMS,
    ComplexityParams,
    Instance,
    RunOptions,
    RunTrace,
    make_instance,
    predict_complexity,
    run_algorithm,
    run_ao,
    run_apgm,
    run_approx_ao,
)
from .duality import mac_to_bc, verify_duality
from .model import composite_channel, mac_sum_rate, objective
from .scenario import (
    ChannelSet,
    PlacementSpec,
    SystemConfig,
    build_geometry,
    make_rng,
    sample_channels,
)

__version__ = "0.1.0"
