"""HTTP server for the browser labelling and inspection UI.

Serves the dataset manifest, individual frames, label files and detection
results over a small JSON API, plus the static UI assets.  Label writes are
atomic (write to a temp file, then rename), so a crashed POST never leaves a
truncated labels file behind.
"""

from __future__ import annotations

import json
import mimetypes
import os
import re
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .harness import DatasetManifest, load_manifest

_FRAME_RE = re.compile(r"^/frame/([\w.-]+)/(\d+)$")
_LABELS_RE = re.compile(r"^/labels/([\w.-]+)$")
_RESULTS_RE = re.compile(r"^/results/([\w.-]+)$")


def default_static_dir() -> Path:
    return Path(__file__).resolve().parents[2] / "frontend" / "dist"


class LabelServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, manifest: DatasetManifest, static_dir: Path):
        self.manifest = manifest
        self.static_dir = static_dir
        self.write_lock = threading.Lock()
        super().__init__(addr, LabelHandler)


class LabelHandler(BaseHTTPRequestHandler):
    server: LabelServer

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _reply(self, code: int, body: bytes, ctype: str):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, obj):
        self._reply(code, json.dumps(obj).encode(), "application/json")

    def _error(self, code: int, message: str):
        self._json(code, {"error": message})

    def do_GET(self):
        manifest = self.server.manifest
        path = self.path.split("?", 1)[0]
        if path == "/manifest":
            trials = []
            for t in manifest.trials:
                trials.append({
                    "id": t.id,
                    "frames": len(manifest.frame_paths(t)),
                    "has_labels": bool(t.labels) and os.path.exists(
                        os.path.join(manifest.root, t.labels)),
                })
            self._json(200, {"fps": manifest.fps, "width": manifest.width,
                             "height": manifest.height, "trials": trials})
            return
        m = _FRAME_RE.match(path)
        if m:
            trial_id, index = m.group(1), int(m.group(2))
            try:
                frames = manifest.frame_paths(manifest.trial(trial_id))
                frame = frames[index]
            except (KeyError, IndexError):
                self._error(404, "no such frame")
                return
            with open(frame, "rb") as fh:
                data = fh.read()
            ctype = "image/png" if frame.endswith(".png") else "image/x-portable-graymap"
            self._reply(200, data, ctype)
            return
        m = _LABELS_RE.match(path)
        if m:
            label_path = self._label_path(m.group(1))
            if label_path is None:
                self._error(404, "no such trial")
            elif not os.path.exists(label_path):
                self._json(200, [])
            else:
                with open(label_path) as fh:
                    self._json(200, json.load(fh))
            return
        m = _RESULTS_RE.match(path)
        if m:
            try:
                t = manifest.trial(m.group(1))
            except KeyError:
                self._error(404, "no such trial")
                return
            results = os.path.join(manifest.root, t.frames_dir, "results.jsonl")
            if not os.path.exists(results):
                self._error(404, "no results for trial")
                return
            with open(results, "rb") as fh:
                self._reply(200, fh.read(), "application/jsonl")
            return
        self._static(path)

    def _label_path(self, trial_id: str):
        manifest = self.server.manifest
        try:
            t = manifest.trial(trial_id)
        except KeyError:
            return None
        rel = t.labels or os.path.join(t.frames_dir, "labels.json")
        return os.path.join(manifest.root, rel)

    def _static(self, path: str):
        if path == "/":
            path = "/index.html"
        base = self.server.static_dir.resolve()
        target = (base / path.lstrip("/")).resolve()
        if not str(target).startswith(str(base)) or not target.is_file():
            self._error(404, "not found")
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        with open(target, "rb") as fh:
            self._reply(200, fh.read(), ctype)

    def do_POST(self):
        m = _LABELS_RE.match(self.path.split("?", 1)[0])
        if not m:
            self._error(404, "not found")
            return
        label_path = self._label_path(m.group(1))
        if label_path is None:
            self._error(404, "no such trial")
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            records = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            self._error(400, "invalid JSON body")
            return
        if not isinstance(records, list):
            self._error(400, "expected a JSON array of label records")
            return
        required = {"frame", "cx", "cy", "a", "b", "angle_deg"}
        for rec in records:
            if not isinstance(rec, dict) or not required.issubset(rec):
                self._error(400, f"label record missing fields {sorted(required)}")
                return
        with self.server.write_lock:
            directory = os.path.dirname(label_path) or "."
            fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w") as fh:
                    json.dump(records, fh, indent=1)
                os.replace(tmp, label_path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        self._json(200, {"saved": len(records)})


def make_server(manifest_path, port: int,
                static_dir=None) -> LabelServer:
    manifest = load_manifest(manifest_path)
    static = Path(static_dir) if static_dir else default_static_dir()
    return LabelServer(("127.0.0.1", port), manifest, static)


def serve(manifest_path, port: int, static_dir=None) -> None:
    server = make_server(manifest_path, port, static_dir)
    print(f"label server on http://127.0.0.1:{port}/ "
          f"(static: {server.static_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
