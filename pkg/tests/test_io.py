import json

import numpy as np
import pytest

from spingarch import io
from spingarch.graph import from_edge_list, torus_grid
from spingarch.inference.fit import PosteriorChains


def test_edges_round_trip(tmp_path):
    g = torus_grid(3, 4)
    path = tmp_path / "edges.txt"
    io.write_edges(path, g)
    h = io.read_edges(path)
    assert h.n_sites == g.n_sites and h.edges == g.edges


def test_edges_errors(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("n=3\n0,1\n1,x\n")
    with pytest.raises(io.FormatError, match=":3:"):
        io.read_edges(path)
    with pytest.raises(FileNotFoundError):
        io.read_edges(tmp_path / "missing.txt")


def test_counts_round_trip_and_checks(tmp_path):
    z = np.arange(12).reshape(3, 4)
    path = tmp_path / "counts.csv"
    io.write_counts(path, z)
    assert path.read_text().startswith("# spingarch-counts v1\n")
    np.testing.assert_array_equal(io.read_counts(path, 3), z)
    with pytest.raises(io.FormatError):
        io.read_counts(path, 4)
    # unversioned hand-written files are read as version 1
    path.write_text("site_id,t,count\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n")
    np.testing.assert_array_equal(io.read_counts(path), [[1, 2], [3, 4]])


def test_counts_rejects_unknown_version_and_bad_cells(tmp_path):
    path = tmp_path / "counts.csv"
    path.write_text("# spingarch-counts v9\nsite_id,t,count\n0,0,1\n")
    with pytest.raises(io.FormatError, match="version 9"):
        io.read_counts(path)
    path.write_text("site_id,t,count\n0,0,1\n0,1,-2\n")
    with pytest.raises(io.FormatError):
        io.read_counts(path)
    path.write_text("site_id,t,count\n0,0,1\n1,1,2\n")
    with pytest.raises(io.FormatError):
        io.read_counts(path)
    path.write_text("# spingarch-chains v1\nsite_id,t,count\n0,0,1\n")
    with pytest.raises(io.FormatError, match="expected a counts file"):
        io.read_counts(path)


def test_covariates_and_latent_round_trip(tmp_path):
    x = np.array([[1.0, 0.5], [1.0, -0.25], [1.0, 2.0]])
    io.write_covariates(tmp_path / "x.csv", x, ["const", "pop"])
    back, names = io.read_covariates(tmp_path / "x.csv", 3)
    np.testing.assert_array_equal(back, x)
    assert names == ["const", "pop"]
    fields = {"Y": np.random.default_rng(0).normal(size=(3, 4)), "U": np.array([0.1, -0.2, 0.3])}
    io.write_latent(tmp_path / "lat.csv", fields)
    out = io.read_latent(tmp_path / "lat.csv")
    np.testing.assert_array_equal(out["Y"], fields["Y"])
    np.testing.assert_array_equal(out["U"], fields["U"])


def test_chains_round_trip(tmp_path):
    draws = np.random.default_rng(1).normal(size=(2, 5, 3))
    pc = PosteriorChains(["alpha", "eta", "kappa"], draws)
    io.write_chains(tmp_path / "c.csv", pc)
    back = io.read_chains(tmp_path / "c.csv")
    assert back.names == pc.names
    np.testing.assert_array_equal(back.draws, draws)


def test_config_errors_name_the_line(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[model]\nvariant = spingarch\neta = abc\n")
    cfg = io.read_config(path)
    with pytest.raises(io.ConfigError, match=r"c.ini:3"):
        cfg.get_float("model", "eta")
    with pytest.raises(io.ConfigError, match="kappa"):
        cfg.get_float("model", "kappa")
    with pytest.raises(io.ConfigError):
        cfg.get_str("model", "variant", choices=("ingarch",))
    path.write_text("[model]\nthis line is broken\n")
    with pytest.raises(io.ConfigError, match=r":2"):
        io.read_config(path)


def test_graph_from_config(tmp_path):
    path = tmp_path / "g.ini"
    path.write_text("[graph]\ntorus = 3x4\n")
    assert io.graph_from_config(io.read_config(path)).n_sites == 12
    path.write_text("[graph]\ntorus = 3by4\n")
    with pytest.raises(io.ConfigError):
        io.graph_from_config(io.read_config(path))
    io.write_edges(tmp_path / "e.txt", from_edge_list(3, [(0, 1), (1, 2)]))
    path.write_text("[graph]\nedges = e.txt\n")
    assert io.graph_from_config(io.read_config(path), tmp_path).n_edges == 2


def test_manifest_round_trip_and_tamper(tmp_path):
    m = io.build_manifest("fit", 3, {"a": 1, "b": [1, 2]}, {"out": "abc"})
    assert "morans_i" in m["statistic_definitions"]
    path = tmp_path / "manifest.json"
    io.write_manifest(path, m)
    assert io.read_manifest(path) == m
    data = json.loads(path.read_text())
    data["seed"] = 4
    path.write_text(json.dumps(data))
    with pytest.raises(io.ManifestError, match="hash"):
        io.read_manifest(path)
    path.write_text("{not json")
    with pytest.raises(io.ManifestError):
        io.read_manifest(path)
