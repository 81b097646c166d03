"""JSON client for the service; the CLI talks through this.

With no base URL the app is mounted in-process (no socket, fully
deterministic); with one, requests go over HTTP to a running instance.
Error responses are mapped back onto the library's exception types so
callers handle local and remote failures identically.
"""

from __future__ import annotations

import httpx

from .errors import DivergenceError, NumericFailure

__all__ = ["ServiceClient"]


class ServiceClient:
    def __init__(self, base_url: str | None = None):
        if base_url is None:
            from fastapi.testclient import TestClient

            from .service.app import app

            self._http = TestClient(app)
        else:
            self._http = httpx.Client(base_url=base_url, timeout=600.0)

    def get(self, path: str) -> dict:
        resp = self._http.get(path)
        if resp.status_code >= 400:
            self._raise_for(resp)
        return resp.json()

    def post(self, path: str, payload: dict) -> dict:
        resp = self._http.post(path, json=payload)
        if resp.status_code >= 400:
            self._raise_for(resp)
        return resp.json()

    @staticmethod
    def _raise_for(resp):
        try:
            detail = resp.json().get("detail")
        except Exception:
            detail = None
        if isinstance(detail, dict):
            kind = detail.get("kind", "input")
            message = detail.get("message", "request failed")
            if kind == "numeric":
                raise NumericFailure(message)
            if kind == "divergence":
                trace = [
                    (row["step"], row["loss"], row["grad_norm"],
                     float("nan") if row.get("pose_error") is None else row["pose_error"])
                    for row in detail.get("trace", [])
                ]
                raise DivergenceError(message, trace=trace)
            raise ValueError(message)
        if isinstance(detail, list):
            # pydantic validation report: summarize the first problem
            first = detail[0] if detail else {}
            loc = ".".join(str(p) for p in first.get("loc", []))
            raise ValueError(f"invalid request field {loc}: {first.get('msg', 'rejected')}")
        if isinstance(detail, str):
            raise ValueError(detail)
        raise ValueError(f"request failed with status {resp.status_code}")
