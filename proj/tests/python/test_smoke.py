import itertools
import json
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

import sixmap


def test_hungarian_matches_scipy():
    rng = np.random.default_rng(0)
    for n in range(1, 8):
        cost = rng.uniform(-10, 10, size=(n, n))
        cols, total = sixmap.hungarian(cost)
        rows_ref, cols_ref = linear_sum_assignment(cost)
        assert sorted(cols) == list(range(n))
        assert total == pytest.approx(cost[rows_ref, cols_ref].sum(), abs=1e-9)
        assert sum(cost[i, c] for i, c in enumerate(cols)) == pytest.approx(total, abs=1e-9)


def test_location_heatmap_binning():
    grid = sixmap.location_heatmap(np.array([[52.5, 34.0]]))
    assert grid.shape == (35, 50)
    assert grid[17, 25] == 1 and grid.sum() == 1

    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 105, 2000), rng.uniform(0, 68, 2000)])
    grid = sixmap.location_heatmap(pts)
    ref, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=[35, 50], range=[[0, 68], [0, 105]])
    assert np.array_equal(grid, ref.astype(np.int32))


def test_heatmap_additivity():
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(-5, 110, 900), rng.uniform(-5, 73, 900)])
    cut = 311
    whole = sixmap.location_heatmap(pts)
    parts = sixmap.location_heatmap(pts[:cut]) + sixmap.location_heatmap(pts[cut:])
    assert np.array_equal(whole, parts)


def test_direction_heatmap_threshold():
    vel = np.array([[3.9, 0.0], [0.0, 4.0], [6.0, -2.0], [0.5, 0.5]])
    grid = sixmap.direction_heatmap(vel)
    assert grid.sum() == 2
    assert sixmap.direction_heatmap(vel, threshold=0.0).sum() == 4


def test_binomial():
    assert sixmap.binomial(10, 3) == 120
    assert sixmap.binomial(5, 3) == 10
    assert sixmap.binomial(3, 5) == 0


def test_triplet_loss():
    a, p, n = [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]
    assert sixmap.triplet_loss(a, p, n, 0.1) == pytest.approx(2.1)
    assert sixmap.triplet_loss(a, n, p, 0.1) == 0.0


def test_atl_sim():
    v = [-3.0, -1.0, -2.0, -5.0]
    assert sixmap.atl_sim(v, 1) == -1.0
    assert sixmap.atl_sim(v, 2) == -1.5
    assert sixmap.atl_sim(v, 4) == pytest.approx(np.mean(v))
    values = [sixmap.atl_sim(v, m) for m in range(1, 5)]
    assert all(x >= y for x, y in itertools.pairwise(values))
    with pytest.raises(sixmap.SixmapError):
        sixmap.atl_sim(v, 0)


def test_gaussian_log_density_matches_scipy():
    rng = np.random.default_rng(3)
    train = rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4))
    test = rng.normal(size=(7, 4))
    got = sixmap.gaussian_log_density(train, test, ridge=1e-3)
    cov = np.cov(train, rowvar=False, bias=True) + 1e-3 * np.eye(4)
    ref = multivariate_normal(train.mean(axis=0), cov).logpdf(test)
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-9)


def test_embeddings_are_unit_vectors():
    rng = np.random.default_rng(4)
    loc = rng.uniform(size=(3, 35, 50)).astype(np.float32)
    loc /= loc.sum(axis=(1, 2), keepdims=True)
    direction = rng.uniform(size=(3, 35, 50)).astype(np.float32)
    direction /= direction.sum(axis=(1, 2), keepdims=True)
    f = sixmap.embed(loc, direction, seed=5)
    assert f.shape == (3, 20)
    assert np.allclose(np.linalg.norm(f, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(f, sixmap.embed(loc, direction, seed=5))
    with pytest.raises(ValueError):
        sixmap.embed(loc[:, :34], direction)


def test_branch_shapes():
    shapes = dict(sixmap.branch_shapes())
    assert shapes["conv1a"] == (36, 48, 4)
    assert shapes["maxpool3"] == (5, 6, 32)
    assert shapes["conv4b"] == (5, 6, 64)
    assert shapes["fc1"] == (1, 1, 128)
    assert shapes["fc2"] == (1, 1, 10)
    assert math.prod(shapes["conv4b"]) == 1920


def test_config_and_stage_errors(tmp_path):
    cfg = json.loads(sixmap.default_config())
    assert cfg["train"]["alpha"] == 0.1
    assert cfg["heatmap"]["threshold"] == 4.0
    assert sixmap.stage_names()[0] == "synth"
    with pytest.raises(sixmap.SixmapError, match="missing input"):
        sixmap.run_stage("ingest", str(tmp_path))
    with pytest.raises(sixmap.SixmapError, match="unknown key"):
        sixmap.run_stage("synth", str(tmp_path), json.dumps({"bogus": 1}))


def test_synth_and_ingest_stages(tmp_path):
    cfg = json.dumps(
        {
            "seed": 1,
            "synth": {
                "teams": 1,
                "matches_per_team": 1,
                "half_duration": 700,
                "cuts_first_half": 0,
                "cuts_second_half": 0,
            },
        }
    )
    sixmap.run_stage("synth", str(tmp_path), cfg)
    sixmap.run_stage("ingest", str(tmp_path), cfg)
    index = (tmp_path / "phases" / "index.txt").read_text().split()
    assert len(index) == 2
    for phase in index:
        assert (tmp_path / "phases" / f"{phase}.csv").exists()
    header = (tmp_path / "tracking.csv").read_text().splitlines()[0]
    assert header == "match_id,team,player_id,t,x,y,speed"
