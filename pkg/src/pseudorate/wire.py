"""Message schemas, transports, and service clients.

Every exchange is one canonical-encoded request frame and one response
frame. The router is total: arbitrary bytes at any endpoint produce a
protocol error response, never a crash. The in-process and socket
transports carry byte-identical frames, so behaviour is the same over
either.

Frame layout (socket transport adds a 4-byte big-endian length prefix):

    request  = {"version": 1, "endpoint": s, "correlation_id": b, "body": d}
    response = {"version": 1, "endpoint": s, "correlation_id": b,
                "status": "ok"|"error", "body": d}
"""

from __future__ import annotations

import itertools
import logging
import socket
import socketserver
import threading
from fractions import Fraction
from typing import Callable

from .charging import ChargeReceipt, ChargingProvider, Declined, PricingPolicy
from .crypto import CredentialChain
from .encoding import EncodingError, decode, encode
from .errors import TicketError
from .privacy_ca import Challenge, DeniedRequest, PrivacyCa
from .reputation import Ack, RatingPayload, Reject, ReputationSystem

logger = logging.getLogger(__name__)

WIRE_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024


class WireError(TicketError):
    code = "protocol-error"


class ServiceFault(TicketError):
    """Error response received from a remote service."""

    def __init__(self, code: str, message: str):
        super().__init__(message, code=code)


def encode_request(endpoint: str, body: dict, correlation_id: bytes) -> bytes:
    return encode(
        {"version": WIRE_VERSION, "endpoint": endpoint, "correlation_id": correlation_id, "body": body}
    )


def encode_response(endpoint: str, correlation_id: bytes, status: str, body: dict) -> bytes:
    return encode(
        {
            "version": WIRE_VERSION,
            "endpoint": endpoint,
            "correlation_id": correlation_id,
            "status": status,
            "body": body,
        }
    )


def decode_request(data: bytes) -> tuple[str, dict, bytes]:
    try:
        frame = decode(data)
    except EncodingError as exc:
        raise WireError(f"undecodable frame: {exc}") from exc
    if not isinstance(frame, dict) or set(frame) != {"version", "endpoint", "correlation_id", "body"}:
        raise WireError("bad request frame shape")
    if frame["version"] != WIRE_VERSION:
        raise WireError(f"unsupported version {frame['version']!r}", code="unsupported-version")
    endpoint, body, corr = frame["endpoint"], frame["body"], frame["correlation_id"]
    if not isinstance(endpoint, str) or not isinstance(body, dict) or not isinstance(corr, bytes):
        raise WireError("bad request frame field types")
    return endpoint, body, corr


def decode_response(data: bytes) -> tuple[str, bytes, str, dict]:
    try:
        frame = decode(data)
    except EncodingError as exc:
        raise WireError(f"undecodable frame: {exc}") from exc
    if not isinstance(frame, dict) or set(frame) != {
        "version",
        "endpoint",
        "correlation_id",
        "status",
        "body",
    }:
        raise WireError("bad response frame shape")
    if frame["version"] != WIRE_VERSION:
        raise WireError("unsupported version", code="unsupported-version")
    if frame["status"] not in ("ok", "error") or not isinstance(frame["body"], dict):
        raise WireError("bad response status")
    return frame["endpoint"], frame["correlation_id"], frame["status"], frame["body"]


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------

def _field(body: dict, name: str, kind: type):
    if name not in body:
        raise WireError(f"missing field {name!r}")
    value = body[name]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise WireError(f"field {name!r} must be {kind.__name__}")
    return value


def _exact_fields(body: dict, names: set[str]) -> None:
    if set(body) != names:
        raise WireError(f"expected fields {sorted(names)}, got {sorted(body)}")


# ---------------------------------------------------------------------------
# Router
# ---------------------------------------------------------------------------

class Router:
    """Dispatches decoded request bodies to service handlers. Total over
    arbitrary input bytes."""

    def __init__(
        self,
        pca: PrivacyCa | None = None,
        rs: ReputationSystem | None = None,
        cp: ChargingProvider | None = None,
    ):
        self._handlers: dict[str, Callable[[dict], dict]] = {}
        if pca is not None:
            self._handlers.update(
                {
                    "pca/register": lambda b: _h_register(pca, b),
                    "pca/request": lambda b: _h_request(pca, b),
                    "pca/complete": lambda b: _h_complete(pca, b),
                    "pca/resolve": lambda b: _h_resolve(pca, b),
                    "pca/blacklist": lambda b: _h_blacklist(pca, b),
                }
            )
        if rs is not None:
            self._handlers.update(
                {
                    "rs/submit": lambda b: _h_submit(rs, b),
                    "rs/score": lambda b: _h_score(rs, b),
                    "rs/admin/groups": lambda b: _h_groups(rs, b),
                }
            )
        if cp is not None:
            self._handlers.update(
                {
                    "cp/charge": lambda b: _h_charge(cp, b),
                    "cp/balance": lambda b: _h_balance(cp, b),
                    "cp/policy": lambda b: _h_policy(cp, b),
                }
            )

    @property
    def endpoints(self) -> list[str]:
        return sorted(self._handlers)

    def handle(self, data: bytes) -> bytes:
        endpoint, corr = "", b""
        try:
            endpoint, body, corr = decode_request(data)
            handler = self._handlers.get(endpoint)
            if handler is None:
                raise WireError(f"unknown endpoint {endpoint!r}", code="unknown-endpoint")
            result = handler(body)
            return encode_response(endpoint, corr, "ok", result)
        except TicketError as exc:
            return encode_response(endpoint, corr, "error", {"code": exc.code, "message": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive catch-all
            logger.exception("handler failure on %s", endpoint)
            return encode_response(endpoint, corr, "error", {"code": "internal", "message": str(exc)})


# -- handlers -----------------------------------------------------------------

def _h_register(pca: PrivacyCa, body: dict) -> dict:
    _exact_fields(body, {"ek_public", "user_account"})
    platform_id = pca.register_platform(
        _field(body, "ek_public", bytes), _field(body, "user_account", str)
    )
    return {"platform_id": platform_id}


def _h_request(pca: PrivacyCa, body: dict) -> dict:
    _exact_fields(body, {"aik_public", "group", "platform_id"})
    result = pca.request_credential(
        _field(body, "aik_public", bytes),
        _field(body, "group", int),
        _field(body, "platform_id", str),
    )
    if isinstance(result, DeniedRequest):
        return {"status": "denied", "reason": result.reason}
    return {"status": "challenge", "nonce": result.nonce, "expires": result.expires}


def _h_complete(pca: PrivacyCa, body: dict) -> dict:
    _exact_fields(body, {"nonce", "signature"})
    blob = pca.complete_handshake(_field(body, "nonce", bytes), _field(body, "signature", bytes))
    return {"activation_blob": blob}


def _h_resolve(pca: PrivacyCa, body: dict) -> dict:
    _exact_fields(body, {"aik_digest", "authority_token"})
    record = pca.resolve_identity(
        _field(body, "aik_digest", str), _field(body, "authority_token", str)
    )
    return {
        "platform_id": record.platform_id,
        "user_account": record.user_account,
        "blacklisted": int(record.blacklisted),
        "issued": [
            {"aik_digest": t.aik_digest, "group": t.group, "at": t.at} for t in record.issued
        ],
    }


def _h_blacklist(pca: PrivacyCa, body: dict) -> dict:
    _exact_fields(body, {"platform_id", "flag"})
    pca.blacklist(_field(body, "platform_id", str), bool(_field(body, "flag", int)))
    return {"ok": 1}


def _h_submit(rs: ReputationSystem, body: dict) -> dict:
    _exact_fields(body, {"payload", "chain"})
    try:
        payload = RatingPayload.from_record(_field(body, "payload", dict))
        chain = CredentialChain.from_record(_field(body, "chain", dict))
    except EncodingError as exc:
        raise WireError(f"bad submission record: {exc}") from exc
    result = rs.submit_rating(payload, chain)
    if isinstance(result, Reject):
        return {"status": "reject", "reason": result.reason, "detail": result.detail}
    return {"status": "ack", "receipt": result.receipt, "subject": result.subject, "group": result.group}


def _h_score(rs: ReputationSystem, body: dict) -> dict:
    _exact_fields(body, {"subject"})
    score = rs.aggregate(_field(body, "subject", str))
    value = rs.none_value if score.score is None else str(Fraction(score.score))
    return {"count": score.count, "score": value}


def _h_groups(rs: ReputationSystem, body: dict) -> dict:
    _exact_fields(body, {"groups"})
    raw = _field(body, "groups", dict)
    registry: dict[int, tuple[bytes, Fraction]] = {}
    try:
        for key, entry in raw.items():
            if not isinstance(entry, dict) or set(entry) != {"pub", "impact"}:
                raise WireError("bad group entry")
            registry[int(key)] = (_field(entry, "pub", bytes), Fraction(_field(entry, "impact", str)))
    except (ValueError, ZeroDivisionError) as exc:
        raise WireError(f"bad group registry: {exc}") from exc
    rs.configure_groups(registry)
    return {"count": len(registry)}


def _h_charge(cp: ChargingProvider, body: dict) -> dict:
    _exact_fields(body, {"account_id", "amount", "group", "phase"})
    result = cp.charge(
        _field(body, "account_id", str),
        _field(body, "amount", int),
        group=_field(body, "group", int),
        phase=_field(body, "phase", str),
    )
    if isinstance(result, Declined):
        return {"status": "declined", "reason": result.reason}
    return {
        "status": "receipt",
        "receipt_id": result.receipt_id,
        "amount": result.amount,
        "balance": result.balance_after,
        "at": result.at,
    }


def _h_balance(cp: ChargingProvider, body: dict) -> dict:
    _exact_fields(body, {"account_id"})
    return {"balance": cp.balance(_field(body, "account_id", str))}


def _h_policy(cp: ChargingProvider, body: dict) -> dict:
    if set(body) == {"policy"}:
        cp.set_policy(PricingPolicy.from_record(_field(body, "policy", dict)))
    elif body:
        raise WireError("expected empty body or a policy")
    return {"policy": cp.policy.to_record()}


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------

class InprocTransport:
    """Dispatches frames straight into a router; same bytes as the socket path."""

    def __init__(self, router: Router, tap: list | None = None):
        self._router = router
        self.tap = tap

    def request(self, data: bytes) -> bytes:
        if self.tap is not None:
            self.tap.append(("send", data))
        response = self._router.handle(data)
        if self.tap is not None:
            self.tap.append(("recv", response))
        return response

    def close(self) -> None:
        pass


def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("peer closed")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> bytes:
    header = _read_exact(sock, 4)
    length = int.from_bytes(header, "big")
    if length > MAX_FRAME:
        raise WireError("frame too large")
    return _read_exact(sock, length)


def _write_frame(sock: socket.socket, data: bytes) -> None:
    if len(data) > MAX_FRAME:
        raise WireError("frame too large")
    sock.sendall(len(data).to_bytes(4, "big") + data)


class SocketServer:
    """Threaded TCP server speaking length-prefixed frames into a router."""

    def __init__(self, router: Router, host: str = "127.0.0.1", port: int = 0):
        handle = router.handle

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                try:
                    while True:
                        frame = _read_frame(self.request)
                        _write_frame(self.request, handle(frame))
                except (ConnectionError, OSError, WireError):
                    return

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self.host, self.port = self._server.server_address[:2]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class SocketTransport:
    def __init__(self, host: str, port: int, tap: list | None = None):
        self._addr = (host, port)
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()
        self.tap = tap

    def request(self, data: bytes) -> bytes:
        with self._lock:
            if self._sock is None:
                self._sock = socket.create_connection(self._addr)
            if self.tap is not None:
                self.tap.append(("send", data))
            _write_frame(self._sock, data)
            response = _read_frame(self._sock)
            if self.tap is not None:
                self.tap.append(("recv", response))
            return response

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                self._sock.close()
                self._sock = None


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class _Client:
    def __init__(self, transport):
        self._transport = transport
        self._corr = itertools.count(1)

    def _call(self, endpoint: str, body: dict) -> dict:
        corr = next(self._corr).to_bytes(8, "big")
        response = self._transport.request(encode_request(endpoint, body, corr))
        r_endpoint, r_corr, status, r_body = decode_response(response)
        if r_corr != corr and r_corr != b"":
            raise WireError("correlation id mismatch")
        if status == "error":
            raise ServiceFault(str(r_body.get("code", "internal")), str(r_body.get("message", "")))
        return r_body


class PcaClient(_Client):
    def register_platform(self, ek_public: bytes, user_account: str) -> str:
        body = self._call("pca/register", {"ek_public": ek_public, "user_account": user_account})
        return _field(body, "platform_id", str)

    def request_credential(
        self, aik_public: bytes, group: int, platform_id: str
    ) -> Challenge | DeniedRequest:
        body = self._call(
            "pca/request",
            {"aik_public": aik_public, "group": group, "platform_id": platform_id},
        )
        if _field(body, "status", str) == "denied":
            return DeniedRequest(reason=_field(body, "reason", str))
        return Challenge(nonce=_field(body, "nonce", bytes), expires=_field(body, "expires", int))

    def complete_handshake(self, nonce: bytes, signature: bytes) -> bytes:
        body = self._call("pca/complete", {"nonce": nonce, "signature": signature})
        return _field(body, "activation_blob", bytes)

    def resolve_identity(self, aik_digest: str, authority_token: str) -> dict:
        return self._call(
            "pca/resolve", {"aik_digest": aik_digest, "authority_token": authority_token}
        )

    def blacklist(self, platform_id: str, flag: bool) -> None:
        self._call("pca/blacklist", {"platform_id": platform_id, "flag": int(flag)})


class RsClient(_Client):
    def submit_rating(self, payload: RatingPayload, chain: CredentialChain) -> Ack | Reject:
        body = self._call(
            "rs/submit", {"payload": payload.to_record(), "chain": chain.to_record()}
        )
        if _field(body, "status", str) == "reject":
            return Reject(reason=_field(body, "reason", str), detail=_field(body, "detail", str))
        return Ack(
            receipt=_field(body, "receipt", str),
            subject=_field(body, "subject", str),
            group=_field(body, "group", int),
        )

    def score(self, subject: str) -> tuple[int, str]:
        body = self._call("rs/score", {"subject": subject})
        return _field(body, "count", int), _field(body, "score", str)

    def configure_groups(self, registry: dict[int, tuple[bytes, Fraction]]) -> int:
        groups = {
            str(g): {"pub": pub, "impact": str(Fraction(impact))}
            for g, (pub, impact) in registry.items()
        }
        body = self._call("rs/admin/groups", {"groups": groups})
        return _field(body, "count", int)


class CpClient(_Client):
    def charge(self, account_id: str, amount: int, *, group: int, phase: str) -> dict:
        return self._call(
            "cp/charge",
            {"account_id": account_id, "amount": amount, "group": group, "phase": phase},
        )

    def balance(self, account_id: str) -> int:
        return _field(self._call("cp/balance", {"account_id": account_id}), "balance", int)

    def get_policy(self) -> dict:
        return _field(self._call("cp/policy", {}), "policy", dict)

    def set_policy(self, policy: PricingPolicy) -> dict:
        return _field(self._call("cp/policy", {"policy": policy.to_record()}), "policy", dict)
