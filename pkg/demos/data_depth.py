"""Rank points of a two-cluster cloud by data depth.

Each cluster is a uniformly sampled disk, so the deepest points should sit
near the disk centres. Run: python3 demos/data_depth.py
"""
import warnings

import numpy as np

from pcboundary import Ball, SpatialIndex, depth_rank, sample

centres = np.array([[0.0, 0.0], [3.0, 1.0]])
pts = np.concatenate([sample(Ball(0.5), n=1500, seed=s).points + c for s, c in enumerate(centres)])
for method in ("eikonal", "eigen"):
    with warnings.catch_warnings():
        # the two disks form separate components; that is expected here
        warnings.simplefilter("ignore", RuntimeWarning)
        res = depth_rank(SpatialIndex(pts), k=30, p=10, method=method)
    print(f"{method}: five deepest points")
    for x in pts[res.order[:5]]:
        print(f"  ({x[0]:+.3f}, {x[1]:+.3f})  distance to nearest centre {np.min(np.linalg.norm(centres - x, axis=1)):.3f}")
