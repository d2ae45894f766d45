"""Recover the distance to the boundary of a disk from samples alone.

Boundary points are found by the test, then the graph eikonal equation
turns them into a distance function that is compared with the exact one.
Run: python3 demos/eikonal_distance.py
"""
import numpy as np

from pcboundary import Ball, SpatialIndex, detect_boundary, sample, solve_eikonal

dom = Ball(1.0)
for n in (2_000, 8_000, 16_000):
    cloud = sample(dom, None, n=n, seed=1)
    index = SpatialIndex(cloud)
    eps = 2.0 * (np.log(n) / n) ** 0.25
    lab = detect_boundary(index, min(0.5, 2 * np.sqrt(eps)), eps=eps / 4, order="second").label
    sol = solve_eikonal(index, 3 * np.sqrt(np.log(n) / n), np.flatnonzero(lab))
    err = np.max(np.abs(sol.u - dom.dist(cloud.points)))
    print(f"n={n:6d}: {lab.sum():5d} boundary points, sup |u - dist| = {err:.4f}")
