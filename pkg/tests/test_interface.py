import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from masklab import blur_baseline, load_toy_cnn, score
from masklab.cli import main
from masklab.manifest import load_manifest, sha256_file
from masklab.metrics import read_curve_csv
from masklab.perturbation import PatchGrid, PatchSubset
from masklab.sag import confidence_of, sag_from_json
from masklab.service import create_app, load_session


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One trained model plus dumped images and a SAG, shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    model_file = root / "model.sfm"
    images_dir = root / "images"
    rc = main(["train-toy", "--out", str(model_file), "--seed", "7",
               "--dataset-size", "450", "--dump-images", str(images_dir),
               "--dump-count", "12"])
    assert rc == 0
    return root, model_file, images_dir


@pytest.fixture(scope="module")
def sag_workspace(workspace):
    root, model_file, images_dir = workspace
    sag_dir = root / "sag_img1"
    rc = main(["sag", "--model", str(model_file), "--image", str(images_dir / "img_0001.png"),
               "--class", "1", "--beam", "20", "--max-size", "6",
               "--out", str(sag_dir)])
    assert rc == 0
    return sag_dir


# ---------------------------------------------------------------------------
# CLI


def test_train_toy_writes_model_and_manifest(workspace):
    root, model_file, images_dir = workspace
    assert model_file.exists()
    manifest = load_manifest(str(model_file) + ".manifest.json")
    assert manifest.tool == "masklab"
    assert str(model_file) in manifest.outputs
    assert (images_dir / "labels.csv").exists()
    for out in manifest.outputs:
        assert Path(out).exists()


def test_explain_outputs_consistent_curves(workspace):
    root, model_file, images_dir = workspace
    out_dir = root / "explain_out"
    rc = main(["explain", "--model", str(model_file), "--image",
               str(images_dir / "img_0001.png"), "--class", "1",
               "--method", "igospp", "--resolution", "7", "--seed", "3",
               "--max-iterations", "8", "--out", str(out_dir)])
    assert rc == 0
    payload = json.loads((out_dir / "curves.json").read_text())
    for name in ("deletion", "insertion"):
        curve = read_curve_csv(out_dir / f"{name}.csv")
        assert payload[name]["auc"] == pytest.approx(curve.auc, rel=1e-9)
    assert (out_dir / "heatmap.png").exists()
    assert (out_dir / "overlay.png").exists()
    assert (out_dir / "curves.svg").exists()
    manifest = load_manifest(out_dir / "manifest.json")
    assert manifest.seeds == {"seed": 3}
    assert manifest.config["resolution"] == 7


def test_evaluate_matches_auc_of_parsed_curve(workspace):
    root, model_file, images_dir = workspace
    explain_dir = root / "explain_out"
    out_dir = root / "evaluate_out"
    rc = main(["evaluate", "--model", str(model_file), "--image",
               str(images_dir / "img_0001.png"), "--class", "1",
               "--mask", str(explain_dir / "mask.json"), "--steps", "20",
               "--out", str(out_dir)])
    assert rc == 0
    payload = json.loads((out_dir / "curves.json").read_text())
    for name in ("deletion", "insertion"):
        curve = read_curve_csv(out_dir / f"{name}.csv")
        assert payload[name]["auc"] == pytest.approx(curve.auc, rel=1e-9)


def test_sag_command_emits_wellformed_graph(workspace, sag_workspace):
    root, model_file, images_dir = workspace
    sag = sag_from_json((sag_workspace / "sag.json").read_text())
    assert sag.image_id == "img_0001"
    assert sag.nodes, "expected a non-empty SAG on a stamped image"
    by_id = {n.id: set(n.patches) for n in sag.nodes}
    for a, b in sag.edges:
        assert len(by_id[a]) == len(by_id[b]) + 1 and by_id[b] < by_id[a]
    assert (sag_workspace / "sag.dot").read_text().startswith("digraph")


def test_stats_command(workspace):
    root, model_file, images_dir = workspace
    out_dir = root / "stats_out"
    # a small directory of stamped images only
    subset_dir = root / "stats_imgs"
    subset_dir.mkdir(exist_ok=True)
    for name in ("img_0001.png", "img_0004.png", "img_0007.png"):
        (subset_dir / name).write_bytes((images_dir / name).read_bytes())
    rc = main(["stats", "--model", str(model_file), "--images", str(subset_dir),
               "--class", "1", "--beam", "15", "--max-size", "5",
               "--out", str(out_dir)])
    assert rc == 0
    payload = json.loads((out_dir / "stats.json").read_text())
    assert payload["image_count"] == 3
    fractions = payload["explainable_fraction"]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))
    assert (out_dir / "stats.csv").exists() and (out_dir / "stats.svg").exists()


def test_xnn_train_command(workspace):
    root, model_file, _ = workspace
    out_dir = root / "xnn_out"
    rc = main(["xnn", "train", "--model", str(model_file), "--class", "1",
               "--n", "2", "--beta", "0.02", "--eta", "0.2", "--q", "5",
               "--seed", "0", "--max-epochs", "300", "--dataset-size", "240",
               "--out", str(out_dir)])
    assert rc == 0
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert "heldout" in metrics and "orthogonality" in metrics
    assert (out_dir / "srae.sfm").exists()


def test_render_command(workspace):
    root, model_file, images_dir = workspace
    out = root / "render.png"
    rc = main(["render", "--model", str(model_file), "--image",
               str(images_dir / "img_0001.png"), "--patches", "0,1,2",
               "--class", "1", "--out", str(out)])
    assert rc == 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_unknown_flag_exits_with_usage_error(workspace):
    root, model_file, images_dir = workspace
    with pytest.raises(SystemExit) as exc:
        main(["explain", "--model", str(model_file), "--bogus-flag", "1"])
    assert exc.value.code == 2


def test_runtime_error_exits_nonzero(tmp_path):
    rc = main(["explain", "--model", str(tmp_path / "missing.sfm"),
               "--image", str(tmp_path / "missing.png"), "--class", "0",
               "--out", str(tmp_path / "out")])
    assert rc == 1


def test_config_file_defaults_and_override(tmp_path):
    config = tmp_path / "train.conf"
    config.write_text("epochs=1\ndataset_size=90\n")
    out_a = tmp_path / "a.sfm"
    rc = main(["train-toy", "--config", str(config), "--out", str(out_a)])
    assert rc == 0
    manifest = load_manifest(str(out_a) + ".manifest.json")
    assert manifest.config["epochs"] == 1

    out_b = tmp_path / "b.sfm"
    rc = main(["train-toy", "--config", str(config), "--epochs", "2",
               "--out", str(out_b)])
    assert rc == 0
    manifest = load_manifest(str(out_b) + ".manifest.json")
    assert manifest.config["epochs"] == 2  # explicit flag wins


# ---------------------------------------------------------------------------
# HTTP service


@pytest.fixture(scope="module")
def service(workspace, sag_workspace):
    root, model_file, images_dir = workspace
    sag_dir = root / "sags"
    sag_dir.mkdir(exist_ok=True)
    (sag_dir / "img_0001.json").write_text((sag_workspace / "sag.json").read_text())
    session = load_session(model_file, images_dir, sag_dir)
    return TestClient(create_app(session)), session


def test_health_reports_model_hash(service, workspace):
    client, session = service
    _, model_file, _ = workspace
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["model_hash"] == sha256_file(model_file)


def test_sag_listing_and_fetch(service, sag_workspace):
    client, _ = service
    assert "img_0001" in client.get("/sags").json()["sag_ids"]
    body = client.get("/sags/img_0001").json()
    expected = json.loads((sag_workspace / "sag.json").read_text())
    assert body == expected


def test_whatif_full_set_ratio_one(service):
    client, session = service
    response = client.post("/whatif", json={
        "image_id": "img_0001", "class_index": 1, "patches": list(range(49))})
    body = response.json()
    assert body["ratio"] == pytest.approx(1.0, abs=1e-6)
    assert body["confidence"] == pytest.approx(body["full_confidence"], abs=1e-9)


def test_whatif_empty_set_equals_baseline_confidence(service):
    client, session = service
    body = client.post("/whatif", json={
        "image_id": "img_0001", "class_index": 1, "patches": []}).json()
    image = session.images["img_0001"]
    baseline = blur_baseline(image, session.baseline_sigma, session.scorer, 1,
                             session.baseline_epsilon)
    assert body["confidence"] == pytest.approx(score(session.scorer, baseline, 1), abs=1e-9)


def test_whatif_matches_engine_confidence(service):
    client, session = service
    rng = np.random.default_rng(0)
    image = session.images["img_0001"]
    grid = PatchGrid(7, 7, 32, 32)
    baseline = session.baseline_for("img_0001", 1)
    for _ in range(5):
        patches = sorted(int(p) for p in rng.choice(49, size=6, replace=False))
        body = client.post("/whatif", json={
            "image_id": "img_0001", "class_index": 1, "patches": patches}).json()
        engine = confidence_of(session.scorer, image, baseline,
                               PatchSubset(grid, tuple(patches)), 1)
        assert abs(body["confidence"] - engine) < 1e-9


def test_nearest_exact_root_first(service):
    client, _ = service
    sag = client.get("/sags/img_0001").json()
    root = next(n for n in sag["nodes"] if n["is_root"])
    patches = ",".join(str(p) for p in root["patches"])
    body = client.get(f"/nearest?sag_id=img_0001&patches={patches}").json()
    assert body["node_ids"][0] == root["id"]
    assert body["distances"][0] == 0
    # ranking is by distance with node-id tie break
    pairs = list(zip(body["distances"], body["node_ids"]))
    assert pairs == sorted(pairs)


def test_render_endpoint_returns_masked_png(service):
    client, session = service
    response = client.get("/render?image_id=img_0001&patches=0,1&class_index=1")
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_service_error_codes(service):
    client, _ = service
    assert client.get("/sags/nope").json()["error"]["code"] == "unknown_sag"
    r = client.post("/whatif", json={"image_id": "nope", "class_index": 1, "patches": []})
    assert r.status_code == 404
    assert r.json()["error"]["code"] == "unknown_image"
    r = client.post("/whatif", json={"image_id": "img_0001", "class_index": 1,
                                     "patches": [99]})
    assert r.status_code == 422
    assert r.json()["error"]["code"] == "invalid_patch_index"
    r = client.post("/whatif", json={"image_id": "img_0001", "class_index": 1,
                                     "patches": [1, 1]})
    assert r.json()["error"]["code"] == "invalid_patch_list"
    r = client.get("/render?image_id=img_0001&patches=a,b")
    assert r.json()["error"]["code"] == "invalid_patch_list"
    r = client.post("/whatif", json={"image_id": "img_0001", "class_index": 7,
                                     "patches": []})
    assert r.json()["error"]["code"] == "invalid_class"


def test_cors_enabled(service):
    client, _ = service
    response = client.get("/health", headers={"Origin": "http://localhost:5173"})
    assert response.headers.get("access-control-allow-origin") == "*"
