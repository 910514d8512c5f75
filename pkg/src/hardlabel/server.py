"""HTTP decision service and the client adapter that makes it an Oracle.

The service exposes a minimal hard-label prediction API over HTTP/1.1 with
JSON bodies:

    POST /v1/predict   {"input": [floats], "dims": [C, W, H]}
                       -> {"label": int, "query_index": int}
    GET  /v1/meta      -> {"channels", "width", "height", "classes", "bounded"}
    GET  /v1/stats     -> {"total_queries": attempts, "decided": answered}

Rate limiting is a token bucket of capacity one refilling at the configured
queries-per-second; throttled requests get a 429 with a Retry-After hint
and still count toward /v1/stats. Float arrays round-trip exactly through
JSON (shortest-repr encoding), so a remote run is bit-identical to a local
one.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .core import Image, Label
from .errors import QueryBudgetExceeded, ShapeError, TransportError
from .oracles import Oracle


class _TokenBucket:
    """Capacity-one bucket: the k-th grant cannot happen before k/rate."""

    def __init__(self, qps: float):
        if qps <= 0:
            raise ValueError("rate limit must be positive")
        self.rate = float(qps)
        self.tokens = 0.0
        self.last = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self) -> float:
        """Return 0.0 when granted, otherwise seconds until the next token."""
        with self.lock:
            now = time.monotonic()
            self.tokens = min(1.0, self.tokens + (now - self.last) * self.rate)
            self.last = now
            if self.tokens >= 1.0:
                self.tokens -= 1.0
                return 0.0
            return (1.0 - self.tokens) / self.rate


class OracleService:
    """Threaded HTTP wrapper around a local oracle."""

    def __init__(
        self,
        oracle: Oracle,
        host: str = "127.0.0.1",
        port: int = 0,
        rate_limit_qps: float | None = None,
    ):
        dims = getattr(oracle, "dims", None)
        if dims is None and isinstance(oracle, Oracle):
            dims = getattr(type(oracle), "DIMS", None)
        if dims is None:
            raise ValueError("oracle does not expose input dims")
        self.oracle = oracle
        self.dims = tuple(dims)
        self.bucket = _TokenBucket(rate_limit_qps) if rate_limit_qps else None
        self.total_requests = 0
        self._decide_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # keep test output quiet
                pass

            def _send(self, status: int, payload: dict, extra: dict | None = None):
                body = json.dumps(payload, sort_keys=True).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                for key, value in (extra or {}).items():
                    self.send_header(key, value)
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/v1/meta":
                    c, w, h = service.dims
                    self._send(
                        200,
                        {
                            "channels": c,
                            "width": w,
                            "height": h,
                            "classes": service.oracle.class_count,
                            "bounded": service.oracle.bounded,
                        },
                    )
                elif self.path == "/v1/stats":
                    with service._stats_lock:
                        total = service.total_requests
                    self._send(
                        200,
                        {"total_queries": total, "decided": service.oracle.query_count},
                    )
                else:
                    self._send(404, {"error": {"code": "not_found"}})

            def do_POST(self):
                if self.path != "/v1/predict":
                    self._send(404, {"error": {"code": "not_found"}})
                    return
                with service._stats_lock:
                    service.total_requests += 1
                if service.bucket is not None:
                    wait = service.bucket.acquire()
                    if wait > 0.0:
                        self._send(
                            429,
                            {"error": {"code": "throttled", "retry_after": wait}},
                            extra={"Retry-After": f"{wait:.4f}"},
                        )
                        return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    payload = json.loads(self.rfile.read(length))
                    values = payload["input"]
                    dims = tuple(payload["dims"])
                except (ValueError, KeyError, TypeError):
                    self._send(400, {"error": {"code": "bad_request"}})
                    return
                if dims != service.dims:
                    self._send(
                        400,
                        {"error": {"code": "shape_mismatch", "expected": list(service.dims)}},
                    )
                    return
                try:
                    img = Image(values, *dims)
                    with service._decide_lock:
                        label = service.oracle.decide(img)
                        idx = service.oracle.query_count
                except (ShapeError, ValueError):
                    self._send(400, {"error": {"code": "bad_request"}})
                    return
                except QueryBudgetExceeded:
                    self._send(429, {"error": {"code": "budget_exhausted"}})
                    return
                except Exception:  # noqa: BLE001 - surface as a 500, keep serving
                    self._send(500, {"error": {"code": "internal"}})
                    return
                self._send(200, {"label": label, "query_index": idx})

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "OracleService":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


class RemoteOracle(Oracle):
    """Client adapter: every decide is one POST to a remote service.

    Throttle responses are honored with the server's Retry-After hint and
    retried without inflating the logical query count (the service's
    /v1/stats still counts them). Transient transport failures are retried
    a few times with backoff before surfacing as a fatal TransportError.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, max_retries: int = 4):
        super().__init__()
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        meta = self._get_json("/v1/meta")
        self.dims = (int(meta["channels"]), int(meta["width"]), int(meta["height"]))
        self.class_count = int(meta["classes"])
        self.bounded = bool(meta.get("bounded", True))

    def _get_json(self, path: str) -> dict:
        try:
            with urllib.request.urlopen(self.endpoint + path, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportError(f"GET {path} failed: {exc}") from exc

    def stats(self) -> dict:
        return self._get_json("/v1/stats")

    def _decide(self, x: Image) -> Label:
        self._require_dims(x, self.dims)
        payload = json.dumps(
            {"input": [float(v) for v in x.data], "dims": list(self.dims)}
        ).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint + "/v1/predict",
            data=payload,
            headers={"Content-Type": "application/json"},
        )
        transient = 0
        while True:
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    return int(json.loads(resp.read())["label"])
            except urllib.error.HTTPError as exc:
                if exc.code == 429:
                    hint = exc.headers.get("Retry-After")
                    try:
                        wait = float(hint) if hint else 0.05
                    except ValueError:
                        wait = 0.05
                    time.sleep(min(max(wait, 1e-3), 5.0))
                    continue
                raise TransportError(f"server rejected query: HTTP {exc.code}") from exc
            except (urllib.error.URLError, OSError, ValueError) as exc:
                transient += 1
                if transient > self.max_retries:
                    raise TransportError(f"predict failed after retries: {exc}") from exc
                time.sleep(0.05 * 2 ** (transient - 1))


def remote_oracle(endpoint: str, **kwargs) -> RemoteOracle:
    return RemoteOracle(endpoint, **kwargs)
