"""Thin client for the corrgroup service.

By default requests are served by an in-process app instance (no server
needed); pass a base URL to target a running `corrgroup serve` instance.
"""

from __future__ import annotations

import httpx

from .errors import CorrGroupError
from .service import schemas as s


class ServiceError(CorrGroupError):
    """A request the service rejected, carrying the server-side error name."""

    def __init__(self, error_name: str, detail: str, status_code: int):
        super().__init__(f"{error_name}: {detail}")
        self.error_name = error_name
        self.detail = detail
        self.status_code = status_code


class ServiceClient:
    def __init__(self, server: str | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app
            self._client = TestClient(create_app())

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, request, response_cls):
        resp = self._client.post(path, json=request.model_dump(mode="json"))
        if resp.status_code != 200:
            try:
                body = resp.json()
            except ValueError:
                body = {}
            name = body.get("error", f"HTTP{resp.status_code}")
            detail = body.get("detail", resp.text)
            raise ServiceError(name, str(detail), resp.status_code)
        return response_cls.model_validate(resp.json())

    def version(self) -> s.VersionResponse:
        resp = self._client.get("/version")
        resp.raise_for_status()
        return s.VersionResponse.model_validate(resp.json())

    def synthesize(self, req: s.SynthRequest) -> s.SynthResponse:
        return self._post("/synthesize", req, s.SynthResponse)

    def features(self, req: s.FeatureRequest) -> s.FeatureResponse:
        return self._post("/features", req, s.FeatureResponse)

    def train(self, req: s.TrainRequest) -> s.TrainResponse:
        return self._post("/train", req, s.TrainResponse)

    def classify(self, req: s.ClassifyRequest) -> s.ClassifyResponse:
        return self._post("/classify", req, s.ClassifyResponse)

    def group(self, req: s.GroupRequest) -> s.GroupResponse:
        return self._post("/group", req, s.GroupResponse)

    def evaluate(self, req: s.EvaluateRequest) -> s.EvaluateResponse:
        return self._post("/evaluate", req, s.EvaluateResponse)

    def register(self, req: s.RegisterRequest) -> s.RegisterResponse:
        return self._post("/register", req, s.RegisterResponse)
