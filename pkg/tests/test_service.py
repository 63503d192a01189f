import json
import warnings

import numpy as np
import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from sgdlab.model import ModelSpec, init_weights, load_weight_values, save_weights
from sgdlab.service.app import create_app

GRID_CONFIG = {
    "schema_version": 1,
    "data": {"kind": "synthetic", "n": 101, "d": 3, "separation": 2.0, "seed": 2},
    "split": {"test_fraction": 0.2, "seed": 0},
    "family": {"member_indices": [1, 2]},
    "grid": {"seeds": [1, 2, 3], "init_modes": ["vary"]},
    "model": {"kind": "logreg"},
    "train": {"learning_rate": 0.5, "batch_size": 8, "total_steps": 40, "checkpoint_steps": [0, 40]},
}


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app(), raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="module")
def populated_store(client, tmp_path_factory):
    store_dir = str(tmp_path_factory.mktemp("svc") / "store")
    response = client.post("/grid/run", json={"config": GRID_CONFIG, "out_dir": store_dir})
    assert response.status_code == 200, response.text
    return store_dir


class TestHealth:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"


class TestTheoryBounds:
    def test_closed_forms(self, client):
        response = client.post(
            "/theory/bounds",
            json={"k": 1, "lipschitz": 1.41421, "learning_rate": 0.5, "n_rows": 10, "batch_size": 1},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["variability_bound"] == pytest.approx(14.1421, rel=1e-4)
        assert body["variability_to_sensitivity_ratio"] == pytest.approx(10.0)

    def test_validation(self, client):
        response = client.post(
            "/theory/bounds",
            json={"k": -1, "lipschitz": 1.0, "learning_rate": 0.5, "n_rows": 10},
        )
        assert response.status_code == 422


class TestGenerate:
    def test_writes_csv(self, client, tmp_path):
        path = str(tmp_path / "ds.csv")
        response = client.post(
            "/data/generate",
            json={"out_path": path, "n": 10, "d": 2, "separation": 1.0, "seed": 3},
        )
        assert response.status_code == 200
        assert response.json()["n"] == 10
        assert open(path).readline().strip() == "f0,f1,label"

    def test_invalid_n(self, client, tmp_path):
        response = client.post(
            "/data/generate",
            json={"out_path": str(tmp_path / "x.csv"), "n": 1, "d": 2, "separation": 1.0},
        )
        assert response.status_code == 422


class TestGridRun:
    def test_inline_config(self, client, populated_store):
        response = client.post(
            "/grid/run", json={"config": GRID_CONFIG, "out_dir": populated_store}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["total"] == 6 and body["new"] == 0 and body["skipped"] == 6

    def test_config_path(self, client, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(GRID_CONFIG))
        response = client.post(
            "/grid/run", json={"config_path": str(path), "out_dir": str(tmp_path / "store")}
        )
        assert response.status_code == 200
        assert response.json()["new"] == 6

    def test_missing_config_path_names_file(self, client, tmp_path):
        response = client.post(
            "/grid/run",
            json={"config_path": str(tmp_path / "missing.json"), "out_dir": str(tmp_path / "s")},
        )
        assert response.status_code == 400
        assert "missing.json" in response.json()["detail"]

    def test_exactly_one_config_source(self, client, tmp_path):
        response = client.post("/grid/run", json={"out_dir": str(tmp_path / "s")})
        assert response.status_code == 400
        assert "exactly one" in response.json()["detail"]


class TestAnalysisEndpoints:
    def test_deltas(self, client, populated_store):
        response = client.post("/analysis/deltas", json={"store_dir": populated_store})
        assert response.status_code == 200
        body = response.json()
        assert body["records"] == 6
        assert set(body["kinds"]) == {"S", "V_vary", "S_plus_V"}

    def test_epsilon(self, client, populated_store):
        response = client.post("/analysis/epsilon", json={"store_dir": populated_store})
        assert response.status_code == 200
        body = response.json()
        assert body["sigma_i"] > 0
        assert body["empirical_sensitivity"] > 0
        assert body["epsilon_empirical"]["value"] > 0
        assert "not a privacy guarantee" in body["notes"][0]

    def test_unknown_store(self, client, tmp_path):
        response = client.post("/analysis/epsilon", json={"store_dir": str(tmp_path / "nope")})
        assert response.status_code == 400


class TestPrivatize:
    def test_delta_out_of_range(self, client):
        response = client.post("/privacy/privatize", json={"epsilon": 1.0, "delta": 2.0})
        assert response.status_code == 422
        assert any("delta" in str(item["loc"]) for item in response.json()["detail"])

    def test_requires_paths(self, client):
        response = client.post(
            "/privacy/privatize", json={"epsilon": 1.0, "delta": 1e-6, "sensitivity": 0.1}
        )
        assert response.status_code == 400
        assert "required" in response.json()["detail"]

    def test_adds_calibrated_noise(self, client, tmp_path):
        spec = ModelSpec("logreg", input_dim=3)
        w = init_weights(spec, 5, "vary")
        src = str(tmp_path / "in.sgdw")
        dst = str(tmp_path / "out.sgdw")
        save_weights(src, w)
        response = client.post(
            "/privacy/privatize",
            json={
                "weights_path": src,
                "out_path": dst,
                "epsilon": 1.0,
                "delta": 1e-6,
                "sensitivity": 0.1,
                "sigma_intrinsic": 0.05,
                "seed": 4,
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["sigma_augment"] < body["sigma_target"]
        noisy = load_weight_values(dst)
        assert noisy.shape == w.values.shape
        assert not np.array_equal(noisy, w.values)

    def test_clipped_when_intrinsic_noise_sufficient(self, client, tmp_path):
        spec = ModelSpec("logreg", input_dim=2)
        src = str(tmp_path / "in2.sgdw")
        dst = str(tmp_path / "out2.sgdw")
        save_weights(src, init_weights(spec, 1, "vary"))
        response = client.post(
            "/privacy/privatize",
            json={
                "weights_path": src,
                "out_path": dst,
                "epsilon": 1.0,
                "delta": 1e-6,
                "sensitivity": 0.01,
                "sigma_intrinsic": 10.0,
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["clipped"] is True and body["sigma_augment"] == 0.0
        assert np.array_equal(load_weight_values(dst), load_weight_values(src))


class TestUtilityEndpoint:
    def test_paired_comparison(self, client, populated_store):
        response = client.post(
            "/utility/evaluate",
            json={"store_dir": populated_store, "epsilons": [1.0], "significance_threshold": 0.05},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["models_used"] == 6
        kinds = {row["sensitivity_kind"] for row in body["rows"]}
        assert kinds == {"empirical", "theoretical"}
        for row in body["rows"]:
            assert row["sigma_augment"] <= row["sigma_target"]


class TestNormalityEndpoint:
    def test_sweep(self, client, populated_store):
        response = client.post("/stats/normality", json={"store_dir": populated_store})
        assert response.status_code == 200
        body = response.json()
        assert body["tested"] + body["untestable"] == 2 * 4  # 2 members x (d+1) coords
        assert body["hypothesis_count"] == body["records_used"] * 4


class TestReportsEndpoint:
    def test_bundle(self, client, populated_store, tmp_path):
        out_dir = str(tmp_path / "bundle")
        response = client.post(
            "/reports/make",
            json={"store_dir": populated_store, "out_dir": out_dir, "epsilons": [1.0]},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["records"] == 6
        assert body["items"]["epsilon_summary"]["status"] == "written"
        assert (tmp_path / "bundle" / "epsilon_summary.json").exists()
