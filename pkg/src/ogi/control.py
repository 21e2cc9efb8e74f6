"""Network control plane: newline-delimited JSON over TCP.

Each connection carries independent request lines; each line is a JSON
object {"op", "body", "auth_token", "request_id"?} and gets exactly one
{"type": "response", ...} line back. A connection that has subscribed to
telemetry additionally receives {"type": "telemetry", ...} lines pushed
between responses.

Two bearer tokens gate access: the viewer token covers read operations,
the admin token additionally covers program administration and the audit
trail. Failed authorization lands in the kernel's audit log.

Responses and telemetry for one connection are serialized through a
bounded queue drained by a writer thread, so a slow or stalled consumer
never blocks the kernel; when the queue overflows the connection is cut.
"""

from __future__ import annotations

import hmac
import json
import logging
import queue
import socket
import socketserver
import threading
from typing import Optional

from .dps import ExternalProgram
from .errors import AuthorizationError, ConfigurationError, ValidationError, VersionConflictError
from .kernel import Kernel
from .modality import canonical_json

log = logging.getLogger(__name__)

TELEMETRY_QUEUE_LIMIT = 256

READ_OPS = frozenset(
    {
        "GetProgram",
        "GetWeights",
        "GetStmSummary",
        "GetDecisionLog",
        "GetMetrics",
        "SubscribeTelemetry",
    }
)
ADMIN_OPS = frozenset({"PutProgram", "GetAuditLog"})


class ControlService:
    """TCP front door for one kernel."""

    def __init__(
        self,
        kernel: Kernel,
        admin_token: str,
        viewer_token: str,
        host: str = "127.0.0.1",
        port: int = 0,
        send_buffer_bytes: Optional[int] = None,
    ):
        if not admin_token or not viewer_token:
            raise ConfigurationError("both tokens must be non-empty")
        if admin_token == viewer_token:
            raise ConfigurationError("admin and viewer tokens must differ")
        self.kernel = kernel
        self._admin_token = admin_token
        self._viewer_token = viewer_token
        # small values make the slow-consumer cutoff trip sooner; None keeps OS defaults
        self._send_buffer_bytes = send_buffer_bytes
        self._server = _Server((host, port), _Handler, self)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="ogi-control", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5.0)
        self._thread = None

    # --- request dispatch -------------------------------------------------

    def _role_for(self, token) -> Optional[str]:
        if not isinstance(token, str):
            return None
        if hmac.compare_digest(token, self._admin_token):
            return "admin"
        if hmac.compare_digest(token, self._viewer_token):
            return "viewer"
        return None

    def _audit(self, op: str, actor: str, outcome: str) -> None:
        with self.kernel.lock:
            self.kernel.audit.append({"op": op, "actor": actor, "outcome": outcome})

    def dispatch(self, request: dict, handler: "_Handler") -> dict:
        op = request.get("op")
        request_id = request.get("request_id")

        def done(status: str, payload: dict) -> dict:
            response = {"type": "response", "status": status, "body": payload}
            if isinstance(op, str):
                response["op"] = op
            if request_id is not None:
                response["request_id"] = request_id
            return response

        if not isinstance(op, str) or not op:
            return done("bad-request", {"error": "request needs a string 'op'"})
        role = self._role_for(request.get("auth_token"))
        if role is None:
            self._audit(op, "unknown", "auth-rejected")
            return done("auth", {"error": "unrecognized auth token"})
        if op not in READ_OPS and op not in ADMIN_OPS:
            return done("unknown-op", {"error": f"unknown op {op!r}"})
        if op in ADMIN_OPS and role != "admin":
            self._audit(op, role, "auth-rejected")
            return done("auth", {"error": f"{op} requires the admin token"})
        body = request.get("body", {})
        if body is None:
            body = {}
        if not isinstance(body, dict):
            return done("bad-request", {"error": "body must be an object"})

        try:
            return done("ok", self._run_op(op, body, handler))
        except VersionConflictError as exc:
            return done("conflict", {"expected": exc.expected, "got": exc.got})
        except ValidationError as exc:
            return done("bad-request", {"error": str(exc), "problems": list(exc.problems)})
        except AuthorizationError as exc:
            return done("auth", {"error": str(exc)})
        except Exception:
            log.exception("control op %s failed", op)
            return done("server-error", {"error": "internal error"})

    def _run_op(self, op: str, body: dict, handler: "_Handler") -> dict:
        kernel = self.kernel
        if op == "GetProgram":
            with kernel.lock:
                return {"program": kernel.weighting.program.to_obj()}
        if op == "PutProgram":
            raw = body.get("program")
            if not isinstance(raw, dict):
                self._audit(op, "admin", "malformed")
                raise ValidationError("body.program must be an object")
            try:
                program = ExternalProgram.from_obj(raw)
            except ValidationError:
                self._audit(op, "admin", "malformed")
                raise
            version = kernel.put_program(program)
            return {"version": version}
        if op == "GetWeights":
            wv = kernel.current_weights()
            with kernel.lock:
                modules = list(kernel.weighting.registry.ids())
            return {
                "weights": list(wv.weights),
                "modules": modules,
                "context_revision": wv.context_revision,
                "program_version": wv.program_version,
                "profile": wv.profile_id.value,
            }
        if op == "GetStmSummary":
            prefix = body.get("prefix", "")
            if not isinstance(prefix, str):
                raise ValidationError("prefix must be a string")
            limit = body.get("limit", 50)
            if not isinstance(limit, int) or limit < 1 or limit > 10000:
                raise ValidationError("limit must be an integer in [1, 10000]")
            with kernel.lock:
                entries = [e for e in kernel.stm.entries() if e.key.startswith(prefix)]
                return {
                    "revision": kernel.stm.revision,
                    "occupancy": kernel.stm.occupancy(),
                    "entries": [
                        {
                            "key": e.key,
                            "author": e.author,
                            "strength": e.strength,
                            "revision": e.revision,
                            "payload_type": "record" if isinstance(e.payload, dict) else "modality",
                        }
                        for e in entries[-limit:]
                    ],
                }
        if op == "GetDecisionLog":
            directives = kernel.decision_log_objs()
            limit = body.get("limit")
            if limit is not None:
                if not isinstance(limit, int) or limit < 1:
                    raise ValidationError("limit must be a positive integer")
                directives = directives[-limit:]
            return {"directives": directives}
        if op == "GetMetrics":
            return kernel.metrics()
        if op == "GetAuditLog":
            with kernel.lock:
                return {"records": list(kernel.audit.records())}
        if op == "SubscribeTelemetry":
            handler.subscribe(kernel)
            return {"subscribed": True}
        raise AssertionError(f"op {op!r} slipped through the allowlist")


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, handler_cls, service: ControlService):
        self.service = service
        super().__init__(addr, handler_cls)


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        limit = self.server.service._send_buffer_bytes
        if limit is not None:
            self.connection.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, limit)
        self._out: queue.Queue = queue.Queue(maxsize=TELEMETRY_QUEUE_LIMIT)
        self._closing = threading.Event()
        self._unsubscribe = None
        self._writer = threading.Thread(target=self._drain, daemon=True)
        self._writer.start()

    def subscribe(self, kernel: Kernel) -> None:
        if self._unsubscribe is None:
            self._unsubscribe = kernel.subscribe_telemetry(self._telemetry_sink)

    def _drain(self) -> None:
        while True:
            try:
                item = self._out.get(timeout=0.1)
            except queue.Empty:
                if self._closing.is_set():
                    return
                continue
            if item is None:
                return
            try:
                self.wfile.write(canonical_json(item).encode("utf-8") + b"\n")
                self.wfile.flush()
            except OSError:
                self._cut()
                return

    def _cut(self) -> None:
        self._closing.set()
        try:
            self.connection.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    def _telemetry_sink(self, event: dict) -> None:
        if self._closing.is_set():
            return
        try:
            self._out.put_nowait({"type": "telemetry", **event})
        except queue.Full:
            # slow consumer: drop the connection rather than stall the kernel
            self._cut()

    def _enqueue_response(self, obj: dict) -> None:
        try:
            self._out.put(obj, timeout=1.0)
        except queue.Full:
            self._cut()

    def handle(self):
        service: ControlService = self.server.service
        while not self._closing.is_set():
            try:
                line = self.rfile.readline()
            except OSError:
                break
            if not line:
                break
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line.decode("utf-8"))
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
            except (ValueError, UnicodeDecodeError) as exc:
                self._enqueue_response(
                    {
                        "type": "response",
                        "status": "protocol",
                        "body": {"error": f"unparseable request: {exc}"},
                    }
                )
                continue
            self._enqueue_response(service.dispatch(request, self))

    def finish(self):
        self._closing.set()
        if self._unsubscribe is not None:
            self._unsubscribe()
            self._unsubscribe = None
        try:
            self._out.put_nowait(None)
        except queue.Full:
            pass
        self._writer.join(timeout=2.0)
        super().finish()
