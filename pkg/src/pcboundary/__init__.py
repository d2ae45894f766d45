"""Boundary detection on point clouds and graph PDE solvers built on it."""
from .pointcloud import (
    Annulus,
    Ball,
    Box,
    PointCloud,
    Sinusoidal,
    Uniform,
    ground_truth,
    load,
    sample,
    save_binary,
    save_csv,
)
from .spatial import SpatialIndex
from .normals import first_order_normals, second_order_normals, smooth_normals
from .boundary import (
    TestParams,
    boundary_percentile,
    boundary_test,
    detect_boundary,
    detection_metrics,
    distance_estimates,
    recommended_params,
    theory_constants,
)
from .graphpde import (
    BoundaryConditions,
    build_epsilon_graph,
    build_knn_gaussian_graph,
    depth_rank,
    laplacian_matrix,
    solve_dirichlet_eigen,
    solve_eikonal,
    solve_robin,
)

__version__ = "0.1.0"

__all__ = [
    "Annulus",
    "Ball",
    "Box",
    "PointCloud",
    "Sinusoidal",
    "Uniform",
    "ground_truth",
    "load",
    "sample",
    "save_binary",
    "save_csv",
    "SpatialIndex",
    "first_order_normals",
    "second_order_normals",
    "smooth_normals",
    "TestParams",
    "boundary_percentile",
    "boundary_test",
    "detect_boundary",
    "detection_metrics",
    "distance_estimates",
    "recommended_params",
    "theory_constants",
    "BoundaryConditions",
    "build_epsilon_graph",
    "build_knn_gaussian_graph",
    "depth_rank",
    "laplacian_matrix",
    "solve_dirichlet_eigen",
    "solve_eikonal",
    "solve_robin",
]
