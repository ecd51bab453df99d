"""HTTP service contract: endpoints, error codes, immutability."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from compositetasking import palette as pal, synth, trainer, visualize
from compositetasking.network import ModelBundle, ModelConfig
from compositetasking.server import create_app

TINY_MODEL = dict(enc_widths=[4, 6, 8, 10, 12], dec_widths=[10, 8, 6, 5, 4],
                  n_w=8, embed_hidden=8, height=32, width=32)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


@pytest.fixture(scope="module")
def bundles():
    ctn = ModelBundle(ModelConfig(variant="ctn", **TINY_MODEL, seed=1))
    predictor = ModelBundle(ModelConfig(variant="palette_predictor", **TINY_MODEL, seed=2))
    return ctn, predictor


@pytest.fixture(scope="module")
def payload():
    scene = synth.generate_scene(0, 32, 32)
    image = _b64(visualize.image_to_png_bytes(scene.image))
    palette = _b64(pal.palette_to_png_bytes(np.full((32, 32), 1, dtype=np.uint8)))
    return image, palette


def test_tasks_endpoint(bundles):
    client = TestClient(create_app(bundles[0]))
    entries = client.get("/v1/tasks").json()
    assert [e["id"] for e in entries] == list(range(5))
    assert [e["name"] for e in entries] == pal.TASK_NAMES
    assert all(len(e["color"]) == 3 for e in entries)


def test_predict_round_trip_and_determinism(bundles, payload):
    client = TestClient(create_app(bundles[0]))
    image, palette = payload
    r1 = client.post("/v1/predict", json={"image": image, "palette": palette})
    assert r1.status_code == 200
    body = r1.json()
    assert set(body) == {"composite", "raw", "overlays", "palette"}
    assert set(body["overlays"]) == set(pal.TASK_NAMES)
    # palette echoed back verbatim
    assert np.array_equal(
        pal.palette_from_png_bytes(base64.b64decode(body["palette"])),
        np.full((32, 32), 1, dtype=np.uint8),
    )
    # composite render matches the input dimensions
    composite = visualize.image_from_png_bytes(base64.b64decode(body["composite"]))
    assert composite.shape == (3, 32, 32)
    r2 = client.post("/v1/predict", json={"image": image, "palette": palette})
    assert r2.json()["raw"] == body["raw"]


def test_error_codes(bundles, payload):
    client = TestClient(create_app(bundles[0]))
    image, palette = payload
    assert client.post("/v1/predict", json={"image": "%%%", "palette": palette}).status_code == 400
    assert client.post("/v1/predict", json={"image": _b64(b"not a png"), "palette": palette}).status_code == 400
    small = _b64(pal.palette_to_png_bytes(np.zeros((8, 8), dtype=np.uint8)))
    assert client.post("/v1/predict", json={"image": image, "palette": small}).status_code == 422
    invalid = _b64(pal.palette_to_png_bytes(np.full((32, 32), 99, dtype=np.uint8)))
    assert client.post("/v1/predict", json={"image": image, "palette": invalid}).status_code == 422
    # "auto" without a deployed predictor
    assert client.post("/v1/predict", json={"image": image, "palette": "auto"}).status_code == 409
    assert client.post("/v1/palette/predict", json={"image": image}).status_code == 409


def test_request_size_limit(bundles, payload):
    client = TestClient(create_app(bundles[0]))
    image, palette = payload
    r = client.post(
        "/v1/predict",
        json={"image": image, "palette": palette},
        headers={"content-length": str(20 * 1024 * 1024)},
    )
    assert r.status_code == 413


def test_palette_predictor_endpoints(bundles, payload):
    ctn, predictor = bundles
    client = TestClient(create_app(ctn, predictor))
    image, _ = payload
    r = client.post("/v1/palette/predict", json={"image": image})
    assert r.status_code == 200
    p = pal.palette_from_png_bytes(base64.b64decode(r.json()["palette"]))
    assert p.shape == (32, 32) and p.max() < 5
    r2 = client.post("/v1/predict", json={"image": image, "palette": "auto"})
    assert r2.status_code == 200


def test_service_never_mutates_bundle(bundles, payload):
    ctn, _ = bundles
    client = TestClient(create_app(ctn))
    image, palette = payload
    before = ctn.checksum()
    for _ in range(25):
        assert client.post("/v1/predict", json={"image": image, "palette": palette}).status_code == 200
    assert ctn.checksum() == before


def test_edited_palette_changes_only_through_network(bundles, payload):
    ctn, _ = bundles
    client = TestClient(create_app(ctn))
    image, _ = payload
    base = np.full((32, 32), 1, dtype=np.uint8)
    edited = base.copy()
    edited[:8, :8] = 3
    r1 = client.post("/v1/predict", json={"image": image, "palette": _b64(pal.palette_to_png_bytes(base))})
    r2 = client.post("/v1/predict", json={"image": image, "palette": _b64(pal.palette_to_png_bytes(edited))})
    p1 = pal.palette_from_png_bytes(base64.b64decode(r1.json()["palette"]))
    p2 = pal.palette_from_png_bytes(base64.b64decode(r2.json()["palette"]))
    assert np.array_equal(p1, base) and np.array_equal(p2, edited)
