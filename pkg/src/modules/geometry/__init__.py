"""Geometry modules package"""
from .metrics import chamfer, emd, emd_with_solver
from .sampling import fps, fps_indices
from .meshing import (GridSpec, Mesh, marching_cubes, reproject_vertices, sample_field,
                      surface_cloud)

__all__ = ['chamfer', 'emd', 'emd_with_solver', 'fps', 'fps_indices',
           'GridSpec', 'Mesh', 'marching_cubes', 'reproject_vertices', 'sample_field', 'surface_cloud']
