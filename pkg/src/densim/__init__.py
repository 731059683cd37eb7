"""Density estimation from imperfect mobile sensors."""
from .theory import (bound_from_sampled_density, bound_loose, bound_tight, closed_form_error,
                     mean_density, normalized_error, project, shape_c, unbiased_h)
from .world_graph import WorldGraph, astar_path, build_grid_world, load_graph

__version__ = "0.1.0"
