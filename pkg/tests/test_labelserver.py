import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from pupilkit.harness import SynthSpec, generate_dataset
from pupilkit.labelserver import make_server
from pupilkit.raster import load_gray


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    spec = SynthSpec(width=100, height=80, frames=3, noise_sigma=0.0,
                     circumference=70.0)
    generate_dataset(spec, seed=1, out_dir=out, trials=1)
    (out / "trial_0001" / "results.jsonl").write_text(
        '{"frame": 0, "detected": true}\n')
    return out


@pytest.fixture(scope="module")
def server(dataset, tmp_path_factory):
    static = tmp_path_factory.mktemp("static")
    (static / "index.html").write_text("<html>labeler</html>")
    srv = make_server(dataset / "manifest.json", port=0, static_dir=static)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def get(url):
    with urllib.request.urlopen(url, timeout=5) as resp:
        return resp.status, resp.headers.get("Content-Type"), resp.read()


def post(url, body):
    req = urllib.request.Request(url, data=body, method="POST")
    with urllib.request.urlopen(req, timeout=5) as resp:
        return resp.status, json.loads(resp.read())


def test_manifest_endpoint(server):
    status, ctype, body = get(server + "/manifest")
    assert status == 200 and ctype == "application/json"
    data = json.loads(body)
    assert data["width"] == 100
    assert data["trials"][0]["id"] == "trial_0001"
    assert data["trials"][0]["frames"] == 3
    assert data["trials"][0]["has_labels"] is True


def test_frame_endpoint_serves_png(server, dataset, tmp_path):
    status, ctype, body = get(server + "/frame/trial_0001/1")
    assert status == 200 and ctype == "image/png"
    probe = tmp_path / "frame.png"
    probe.write_bytes(body)
    img = load_gray(probe)
    assert img.shape == (80, 100)
    reference = load_gray(dataset / "trial_0001" / "frame_0001.png")
    assert np.array_equal(img, reference)


def test_frame_endpoint_404(server):
    with pytest.raises(urllib.error.HTTPError) as exc:
        get(server + "/frame/trial_0001/99")
    assert exc.value.code == 404
    with pytest.raises(urllib.error.HTTPError) as exc:
        get(server + "/frame/nope/0")
    assert exc.value.code == 404


def test_labels_get_and_post_round_trip(server):
    _, _, body = get(server + "/labels/trial_0001")
    original = json.loads(body)
    assert len(original) == 3

    edited = list(original)
    edited[0] = {**edited[0], "cx": 42.5}
    status, reply = post(server + "/labels/trial_0001",
                         json.dumps(edited).encode())
    assert status == 200 and reply == {"saved": 3}
    _, _, body = get(server + "/labels/trial_0001")
    assert json.loads(body)[0]["cx"] == 42.5
    # Restore for other tests.
    post(server + "/labels/trial_0001", json.dumps(original).encode())


def test_labels_post_validation(server):
    with pytest.raises(urllib.error.HTTPError) as exc:
        post(server + "/labels/trial_0001", b"not json")
    assert exc.value.code == 400
    with pytest.raises(urllib.error.HTTPError) as exc:
        post(server + "/labels/trial_0001", json.dumps([{"frame": 0}]).encode())
    assert exc.value.code == 400
    with pytest.raises(urllib.error.HTTPError) as exc:
        post(server + "/labels/ghost", b"[]")
    assert exc.value.code == 404


def test_results_endpoint(server):
    status, ctype, body = get(server + "/results/trial_0001")
    assert status == 200
    assert json.loads(body.splitlines()[0])["frame"] == 0


def test_static_and_traversal_guard(server):
    status, _, body = get(server + "/")
    assert status == 200 and b"labeler" in body
    with pytest.raises(urllib.error.HTTPError) as exc:
        get(server + "/../manifest.json")
    assert exc.value.code == 404
