"""Entry point: `python -m sidecar` or the sidecar-serve script."""

from __future__ import annotations

import os

import uvicorn

from .app import create_app


def main() -> None:
    model_id = os.environ.get("MODEL_ID", "builtin:tiny")
    device = os.environ.get("DEVICE", "cpu")
    port = int(os.environ.get("PORT", "8077"))
    uvicorn.run(create_app(model_id, device), host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
