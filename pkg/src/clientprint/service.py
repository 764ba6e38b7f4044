"""HTTP classification service over one immutable trained model.

Endpoints::

    GET  /healthz         -> {"status": "ok", "model_id": ...}
    GET  /model           -> model metadata
    POST /classify        -> ClassifyResponse for one raw reward record
    POST /classify/batch  -> list of ClassifyResponse, request order kept

Records are extracted server side, so clients never send feature vectors.
"""
from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .features import DEFAULT_IDEAL_REWARD, FEATURE_SCHEMA, SchemaError, extract_features
from .ingest import load_model, model_id, record_from_dict

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


class RequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class Classifier:
    """Model plus identity; everything here is read-only after construction."""

    def __init__(self, model, model_id: str, ideal_reward: float = DEFAULT_IDEAL_REWARD):
        self.model = model
        self.model_id = model_id
        self.ideal_reward = ideal_reward

    @classmethod
    def from_file(cls, path, ideal_reward: float = DEFAULT_IDEAL_REWARD) -> "Classifier":
        return cls(load_model(path), model_id(path), ideal_reward)

    def metadata(self) -> dict:
        return {"model_id": self.model_id, "kind": self.model.kind, "class_names": list(self.model.class_names),
                "classifier": self.model.describe(), "feature_schema": FEATURE_SCHEMA,
                "ideal_reward": self.ideal_reward}

    def _response(self, pred: int, probs: np.ndarray) -> dict:
        return {"model_id": self.model_id,
                "predicted": self.model.class_names[pred],
                "probabilities": {n: float(p) for n, p in zip(self.model.class_names, probs)},
                "schema_version": FEATURE_SCHEMA}

    def classify_records(self, bodies: list) -> list[dict]:
        vectors = []
        for i, body in enumerate(bodies):
            where = "" if len(bodies) == 1 else f"item {i}: "
            if isinstance(body, dict) and body.get("feature_schema", FEATURE_SCHEMA) != FEATURE_SCHEMA:
                raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY,
                                   f"{where}feature schema {body['feature_schema']!r} != {FEATURE_SCHEMA!r}")
            try:
                vectors.append(extract_features(record_from_dict(body), self.ideal_reward))
            except SchemaError as e:
                raise RequestError(HTTPStatus.BAD_REQUEST, f"{where}{e}") from None
            except (TypeError, ValueError) as e:
                raise RequestError(HTTPStatus.BAD_REQUEST, f"{where}invalid record: {e}") from None
        out = []
        # one row at a time: batched BLAS may round differently, and a batch
        # must equal the single endpoint mapped over its items
        for v in vectors:
            preds, probs = self.model.predict_batch(v[None, :])
            if not np.all(np.isfinite(probs)):
                raise RequestError(HTTPStatus.INTERNAL_SERVER_ERROR, "non-finite model output")
            out.append(self._response(int(preds[0]), probs[0]))
        return out


def make_handler(classifier: Classifier):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "clientprint"

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status: int, message: str) -> None:
            self._send(status, {"error": message, "status": int(status)})

        def do_GET(self):
            if self.path == "/healthz":
                self._send(HTTPStatus.OK, {"status": "ok", "model_id": classifier.model_id})
            elif self.path == "/model":
                self._send(HTTPStatus.OK, classifier.metadata())
            else:
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")

        def do_POST(self):
            if self.path not in ("/classify", "/classify/batch"):
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                if length > MAX_BODY:
                    raise RequestError(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, "body too large")
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                except (UnicodeDecodeError, ValueError) as e:
                    raise RequestError(HTTPStatus.BAD_REQUEST, f"body is not valid JSON: {e}") from None
                if self.path == "/classify":
                    if not isinstance(body, dict):
                        raise RequestError(HTTPStatus.BAD_REQUEST, "expected one record object")
                    self._send(HTTPStatus.OK, classifier.classify_records([body])[0])
                else:
                    if not isinstance(body, list):
                        raise RequestError(HTTPStatus.BAD_REQUEST, "expected a JSON list of records")
                    self._send(HTTPStatus.OK, classifier.classify_records(body))
            except RequestError as e:
                self._error(e.status, str(e))
            except Exception as e:  # noqa: BLE001 - surface as 500, keep serving
                log.exception("classification failed")
                self._error(HTTPStatus.INTERNAL_SERVER_ERROR, f"internal error: {e}")

    return Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    # default backlog of 5 drops bursts of concurrent clients
    request_queue_size = 128


def make_server(classifier: Classifier, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    return _Server((host, port), make_handler(classifier))


def serve(model_path, host: str = "127.0.0.1", port: int = 8000,
          ideal_reward: float = DEFAULT_IDEAL_REWARD) -> None:
    classifier = Classifier.from_file(Path(model_path), ideal_reward)
    server = make_server(classifier, host, port)
    log.info("serving model %s on http://%s:%d", classifier.model_id, host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def start_background(classifier: Classifier, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns (server, base_url)."""
    server = make_server(classifier, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{host}:{server.server_address[1]}"
