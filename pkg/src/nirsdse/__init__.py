"""Monte Carlo photon transport in layered media with a NIRS design-space sweep."""
from .analysis import (build_metric_table, min_input_power, penetration_fraction, photon_energy,
                       sensitivity_percent, transmission_ratio)
from .harness import SweepGrid, expand_grid, run_sweep
from .medium import (DetectorSpec, Layer, OpticalProperties, SceneConfig, SuperAbsorbentLayer, layer_at_depth,
                     load_scene, properties_for)
from .rng import RngStream
from .tally import TallySet, merge, record_exit, standard_error
from .transport import TransportOptions, simulate, trace

__version__ = "0.1.0"
