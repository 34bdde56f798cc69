"""Band simulation package"""
from .band_state import (BandState, init_band, medial_axis_sample, projected_crossings,
                         surface_sample, true_sdf, true_sdf_gradient)
from .obstacles import Capsule, Cylinder, GroovedCylinder, Obstacle, Plane
from .simulator import Gripper, Scene, SimConfig, step
from .renderer import hidden_point_removal, render_complete, render_partial, sample_viewpoint

__all__ = ['BandState', 'init_band', 'medial_axis_sample', 'projected_crossings',
           'surface_sample', 'true_sdf', 'true_sdf_gradient',
           'Capsule', 'Cylinder', 'GroovedCylinder', 'Obstacle', 'Plane',
           'Gripper', 'Scene', 'SimConfig', 'step',
           'hidden_point_removal', 'render_complete', 'render_partial', 'sample_viewpoint']
