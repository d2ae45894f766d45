import json
import math

import numpy as np
import pytest

from pcboundary.experiments import (
    PopulationOracle,
    fit_loglog,
    metric_mask,
    population_bias_check,
    run_distance_scatter,
    run_eikonal_convergence,
    run_scaling_sweep,
    run_secondorder_convergence,
    run_tfr_sweep,
)
from pcboundary.pointcloud import Annulus, Ball, Box, Sinusoidal

from oracles import slab_mean_displacements, slab_theta

# -- fitting ----------------------------------------------------------------


def test_fit_exact_power_laws():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    s, b, r2 = fit_loglog(x, x**2)
    assert s == pytest.approx(2.0) and b == pytest.approx(0.0, abs=1e-12) and r2 == pytest.approx(1.0)
    fit = fit_loglog(x, 3 * x)
    assert fit.slope == pytest.approx(1.0) and fit.intercept == pytest.approx(math.log(3))


def test_fit_noisy_known_slope():
    rng = np.random.default_rng(0)
    x = np.geomspace(1e-3, 1, 50)
    y = 2.0 * x**1.5 * np.exp(0.05 * rng.standard_normal(50))
    assert abs(fit_loglog(x, y).slope - 1.5) < 0.1


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_loglog([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_loglog([1.0, 2.0], [0.0, 1.0])


# -- population oracle ------------------------------------------------------


def _angle(a, b):
    return math.acos(max(-1.0, min(1.0, float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))))


def test_oracle_resolution_converged():
    o = PopulationOracle(Ball(0.5), Sinusoidal(2.0))
    x0, r = np.array([0.3, 0.3]), 0.1
    v, m = o.v_bar(x0, r)
    half = o._polar(x0, r, m // 2, 2, True)
    assert _angle(v, half) < 1e-6


def test_oracle_matches_slab_quadrature():
    # independent route: a one-dimensional chord integral on the lower face of a box
    box = Box((0.0, 0.0), (1.0, 0.5))
    dens = Sinusoidal(2 * math.pi)
    rho = lambda x: 1 + 0.5 * np.sin(math.pi * x)  # noqa: E731
    mass = 0.5 * (1 + 1 / math.pi)
    o = PopulationOracle(box, dens)
    for c, r in ((0.3, 0.1), (0.6, 0.05)):
        v, _ = o.v_bar(np.array([c, 0.0]), r)
        v1, _ = slab_mean_displacements(rho, c, r)
        assert np.allclose(v, v1 / mass, rtol=1e-5, atol=0)
    for y in ((0.3, 0.02), (0.5, 0.2)):
        assert o.theta(np.array(y), 0.1) == pytest.approx(slab_theta(rho, *y, 0.1) / mass, rel=1e-5)


def test_oracle_is_two_dimensional():
    with pytest.raises(ValueError):
        PopulationOracle(Ball(0.5, dim=3))


def test_d_bar1_uniform_ball_is_exact():
    dom = Ball(0.5)
    o = PopulationOracle(dom)
    rng = np.random.default_rng(1)
    ang = rng.uniform(0, 2 * np.pi, 10)
    depth = rng.uniform(0, 0.06, 10)
    pts = (0.5 - depth)[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    for x0, d in zip(pts, depth):
        for r in (0.05, 0.1, 0.18):
            assert abs(o.d_bar1(x0, r, nu=dom.normal(x0)) - d) <= 1e-12
            # a quadrature direction off by angle a adds about (R - d) a^2 / 2, never less
            assert -1e-12 <= o.d_bar1(x0, r) - d <= 1e-9


@pytest.mark.property
def test_bias_check_sandwich_on_ball():
    rng = np.random.default_rng(2)
    depth = rng.uniform(0, 0.05, 20)  # inside the smallest r
    ang = rng.uniform(0, 2 * np.pi, 20)
    pts = (0.5 - depth)[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rep = population_bias_check(Ball(0.5), Sinusoidal(2.0), [0.05, 0.1], pts)
    assert all(rep.column("lower_ok")) and all(rep.column("upper_ok"))


@pytest.mark.property
def test_bias_check_sandwich_and_rate():
    dom = Annulus(0.5, 0.8)
    ang = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    pts = 0.51 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rep = population_bias_check(dom, None, [0.02, 0.04, 0.08], pts)
    assert all(rep.column("lower_ok")) and all(rep.column("upper_ok"))
    assert abs(rep.fits["excess_vs_r"].slope - 2.0) <= 0.3
    ex = rep.notes["mean_excess"]
    assert ex[0] < ex[1] < ex[2] and ex[0] < 1e-3  # vanishes as r -> 0


# -- boundary-test experiments ----------------------------------------------


def test_tfr_sweep_deterministic_and_configured():
    kw = dict(domain=Ball(0.5), density=Sinusoidal(2.0), n=600, eps=0.05, r_grid=[0.15], trials=1, seed=3)
    a, b = run_tfr_sweep(**kw), run_tfr_sweep(**kw)
    assert a.rows == b.rows and a.header() == b.header()
    meta = json.loads(a.header()[2:])
    for key in ("domain", "density", "n", "eps", "r_grid", "orders", "trials", "seed", "sources"):
        assert key in meta["config"]
    assert meta["seeds"] == [3]
    assert len(a.rows) == 4  # two orders times two normal sources


def test_tfr_sweep_insufficient_neighbours():
    rep = run_tfr_sweep(Ball(0.5), None, 200, 0.05, [1e-4], orders=("first",), sources=("estimated",), seed=0)
    row = rep.records()[0]
    assert row["insufficient"] == 200


def test_tfr_true_normals_do_no_worse():
    rep = run_tfr_sweep(Ball(0.5), None, 4000, 0.03, [0.18], orders=("second",), trials=3, seed=0)
    tfr = {r["normals"]: r["TFR"] for r in rep.records()}
    assert tfr["true"] <= tfr["estimated"]


def test_scaling_sweep_monotone_and_censored():
    rep = run_scaling_sweep(Ball(0.5), Sinusoidal(2.0), [0.06, 0.12], 0.05, n_cap=4000, trials=2, seed=0)
    rows = rep.records()
    assert not any(r["censored"] for r in rows)
    assert rows[0]["n_min"] >= rows[1]["n_min"]
    assert all(r["tfr_at_n_min"] <= 0.05 for r in rows)
    cens = run_scaling_sweep(Ball(0.5), None, [0.01], 0.0, n_cap=300, trials=1, seed=0)
    assert cens.records()[0]["censored"] and "n_vs_eps" not in cens.fits


def test_metric_mask_annulus():
    pts = np.array([[0.55, 0.0], [0.7, 0.0], [0.75, 0.0]])
    assert metric_mask(Annulus(0.5, 0.8), pts, 0.1).tolist() == [True, True, False]
    assert metric_mask(Ball(0.5), pts, 0.1).all()


def test_distance_scatter_rows():
    rep = run_distance_scatter(Ball(0.5), None, 1000, 0.03, 0.12, seed=1)
    true = rep.column("true_dist")
    assert np.all(true <= 0.12) and len(true) > 0
    assert set(rep.notes) == {"mean_err1", "mean_err2", "mae1", "mae2"}


# -- PDE experiments --------------------------------------------------------


@pytest.mark.property
def test_eikonal_convergence_small():
    rep = run_eikonal_convergence(Ball(1.0), n_grid=(2**9, 2**11), trials=2, seed=0)
    err = rep.column("sup_error")
    assert np.all(rep.column("boundary_max_u") == 0.0)
    assert err[-1] <= err[0]
    assert "error_vs_eps" in rep.fits


@pytest.mark.parametrize("problem", ["robin", "eigen"])
def test_secondorder_smoke(problem, tmp_path):
    rep = run_secondorder_convergence(problem, n_grid=(2**9, 2**10), trials=1, seed=0, last=2)
    assert np.all(np.isfinite(rep.column("sup_error")))
    assert np.all(rep.column("boundary_points") > 0)
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == ",".join(rep.columns)
    assert len(lines) == 2 + len(rep.rows)


def test_secondorder_rejects_problem():
    with pytest.raises(ValueError):
        run_secondorder_convergence("heat")
