"""JSON-over-HTTP API in front of a :class:`Gateway` (stdlib server, no framework)."""

from __future__ import annotations

import json
import logging
import re
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import parse_qs, urlsplit

from ..errors import ConfigError, NetfenceError, UnknownTopic
from ..tracker import ProbeEvent
from .service import Gateway

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 8 * 1024 * 1024
_DEVICE_ID_RE = re.compile(r"[0-9a-f]{32}")
_FENCE_DEVICES_RE = re.compile(r"/v1/fences/([^/]+)/devices")


class ApiError(Exception):
    def __init__(self, status: HTTPStatus, message: str):
        super().__init__(message)
        self.status = status


def _require_str(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value:
        raise ApiError(HTTPStatus.BAD_REQUEST, f"field {key!r} must be a non-empty string")
    return value


def _device_id(body: dict) -> str:
    value = _require_str(body, "device_id")
    if not _DEVICE_ID_RE.fullmatch(value):
        raise ApiError(HTTPStatus.BAD_REQUEST, "device_id must be 32 lowercase hex characters")
    return value


class ApiHandler(BaseHTTPRequestHandler):
    server: "ApiServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args: Any) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing --------------------------------------------------------

    def _send(self, status: HTTPStatus, obj: Any) -> None:
        body = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> Any:
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            raise ApiError(HTTPStatus.BAD_REQUEST, "bad Content-Length") from None
        if length > MAX_BODY_BYTES:
            raise ApiError(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, "request body too large")
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw)
        except ValueError:
            raise ApiError(HTTPStatus.BAD_REQUEST, "request body is not valid JSON") from None

    def _object_body(self) -> dict:
        body = self._body()
        if not isinstance(body, dict):
            raise ApiError(HTTPStatus.BAD_REQUEST, "request body must be a JSON object")
        return body

    def _dispatch(self, method: str) -> None:
        url = urlsplit(self.path)
        try:
            status, obj = self._route(method, url.path, parse_qs(url.query))
        except ApiError as exc:
            status, obj = exc.status, {"error": str(exc)}
        except Exception:  # never leak internals (or request data) in a 500
            log.exception("unhandled error serving %s %s", method, url.path)
            status, obj = HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"}
        self._send(status, obj)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    # -- routes ----------------------------------------------------------

    def _route(self, method: str, path: str, query: dict) -> tuple[HTTPStatus, Any]:
        gw = self.server.gateway
        routes = {
            "/v1/events": {"POST": self._post_events},
            "/v1/subscriptions": {"POST": self._post_subscription, "DELETE": self._delete_subscription},
            "/v1/deliveries": {"GET": lambda: self._get_deliveries(query)},
            "/v1/admin/reload": {"POST": self._reload},
        }
        m = _FENCE_DEVICES_RE.fullmatch(path)
        if m:
            if method != "GET":
                raise ApiError(HTTPStatus.METHOD_NOT_ALLOWED, f"{method} not allowed here")
            fence_id = m.group(1)
            if fence_id not in gw.engine.fences:
                raise ApiError(HTTPStatus.NOT_FOUND, f"unknown fence {fence_id!r}")
            return HTTPStatus.OK, {"fence": fence_id, "devices": gw.inside(fence_id)}
        if path not in routes:
            raise ApiError(HTTPStatus.NOT_FOUND, "no such endpoint")
        handler = routes[path].get(method)
        if handler is None:
            raise ApiError(HTTPStatus.METHOD_NOT_ALLOWED, f"{method} not allowed here")
        return handler()

    def _post_events(self) -> tuple[HTTPStatus, Any]:
        body = self._body()
        items = body if isinstance(body, list) else [body]
        events = []
        for i, item in enumerate(items):
            try:
                events.append(ProbeEvent.from_json(item))
            except (ValueError, TypeError) as exc:
                # messages from ProbeEvent never contain the submitted MAC
                raise ApiError(HTTPStatus.BAD_REQUEST, f"event {i}: {exc}") from None
        rejected = []
        fence_events = []
        for i, ev in enumerate(events):
            try:
                fence_events.extend(self.server.gateway.process(ev).fence_events)
            except NetfenceError as exc:
                rejected.append({"index": i, "error": str(exc)})
        return HTTPStatus.ACCEPTED, {
            "accepted": len(events) - len(rejected),
            "rejected": rejected,
            "fence_events": [e.to_json() for e in fence_events],
        }

    def _post_subscription(self) -> tuple[HTTPStatus, Any]:
        body = self._object_body()
        topic, device, token = _require_str(body, "topic_id"), _device_id(body), _require_str(body, "token")
        try:
            _, created = self.server.gateway.subscriptions.subscribe(topic, device, token)
        except UnknownTopic as exc:
            raise ApiError(HTTPStatus.NOT_FOUND, str(exc)) from None
        return (HTTPStatus.CREATED if created else HTTPStatus.OK), {"topic_id": topic, "device_id": device}

    def _delete_subscription(self) -> tuple[HTTPStatus, Any]:
        body = self._object_body()
        topic, device = _require_str(body, "topic_id"), _device_id(body)
        if not self.server.gateway.subscriptions.unsubscribe(topic, device):
            raise ApiError(HTTPStatus.NOT_FOUND, "no such subscription")
        return HTTPStatus.OK, {"deleted": True}

    def _get_deliveries(self, query: dict) -> tuple[HTTPStatus, Any]:
        raw = query.get("since", ["0"])[-1]
        try:
            since = int(raw)
        except ValueError:
            raise ApiError(HTTPStatus.BAD_REQUEST, "since must be an integer unix-ms timestamp") from None
        reports = self.server.gateway.deliveries(since)
        totals = {k: sum(r[k] for r in reports) for k in ("sent", "deduplicated", "defunct", "failed")}
        return HTTPStatus.OK, {"since": since, "reports": reports, "totals": totals}

    def _reload(self) -> tuple[HTTPStatus, Any]:
        try:
            res = self.server.gateway.reload()
        except ConfigError as exc:
            raise ApiError(HTTPStatus.UNPROCESSABLE_ENTITY, f"reload failed, previous config kept: {exc}") from None
        return HTTPStatus.OK, {"fences": len(res.fences), "rules": len(res.rules), "topics": len(res.topics)}


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], gateway: Gateway):
        super().__init__(address, ApiHandler)
        self.gateway = gateway

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def make_server(gateway: Gateway, address: Optional[tuple[str, int]] = None) -> ApiServer:
    return ApiServer(address or gateway.config.listen_address, gateway)
