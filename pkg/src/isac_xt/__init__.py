"""Extended-target sensing for wideband MIMO-OFDM joint radar/communication."""
from .model import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    DegenerateGeometryError,
    GeometricParams,
    RcsPrior,
    ScattererGrid,
    generate_user_channels,
    grid_from_geometry,
    grid_sizes,
    resolution_cells,
    steering_derivatives,
    steering_vector,
    target_response,
)
from .scenario import Scenario, desk_scenario, load_scenario, paper_scenario, save_scenario

__version__ = "0.1.0"
