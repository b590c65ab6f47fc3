"""HTTP surface: /health and the /generate NDJSON stream.

The model loads in a background thread started at app startup, so the
service answers immediately: 503 while loading or after a load failure,
200 once ready. One generation runs at a time; a second concurrent
request gets 429 and is expected to retry.
"""

from __future__ import annotations

import json
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .engine import GenerationEngine
from .model import build_model


class GenerateBody(BaseModel):
    prompt: str
    max_tokens: int = Field(default=256, ge=1)
    stop: list[str] = Field(default_factory=list)


def create_app(model_id: str = "builtin:tiny", device: str = "cpu", loader=None) -> FastAPI:
    """Build the service; `loader` overrides model construction in tests."""

    def default_loader():
        model, tokenizer = build_model(model_id, device)
        return GenerationEngine(model, tokenizer, device)

    load = loader or default_loader

    def load_in_background():
        try:
            app.state.engine = load()
            app.state.status = "ok"
        except Exception as exc:
            app.state.reason = f"{type(exc).__name__}: {exc}"
            app.state.status = "error"

    @asynccontextmanager
    async def lifespan(app_):
        threading.Thread(target=load_in_background, daemon=True).start()
        yield

    app = FastAPI(title="inference-sidecar", lifespan=lifespan)
    app.state.status = "loading"
    app.state.reason = None
    app.state.engine = None
    app.state.model_id = model_id
    app.state.busy = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    def health():
        if app.state.status == "ok":
            return {"status": "ok", "model_id": app.state.model_id}
        body = {"status": app.state.status, "model_id": app.state.model_id}
        if app.state.reason:
            body["reason"] = app.state.reason
        return JSONResponse(status_code=503, content=body)

    @app.post("/generate")
    def generate(body: GenerateBody):
        if app.state.status != "ok":
            detail = app.state.reason or "model not ready"
            return JSONResponse(status_code=503, content={"detail": detail})
        if not body.prompt:
            return JSONResponse(status_code=400, content={"detail": "prompt must be non-empty"})
        if not app.state.busy.acquire(blocking=False):
            return JSONResponse(status_code=429, content={"detail": "generation in progress"})

        def ndjson():
            try:
                for record in app.state.engine.stream(body.prompt, body.max_tokens, body.stop):
                    yield json.dumps(record, ensure_ascii=False) + "\n"
            except Exception as exc:
                yield json.dumps({"finish_reason": "error", "message": str(exc)}) + "\n"
            finally:
                app.state.busy.release()

        return StreamingResponse(ndjson(), media_type="application/x-ndjson")

    return app
