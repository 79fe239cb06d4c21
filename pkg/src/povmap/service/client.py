"""Minimal client for the service: remote over HTTP or in-process ASGI.

The in-process mode mounts the FastAPI app on an ``httpx.ASGITransport`` so
CLI commands and tests exercise the real endpoints without a running server.
"""

from __future__ import annotations

import asyncio

import httpx


def _body(response: httpx.Response):
    try:
        return response.json()
    except ValueError:
        return {"detail": response.text}


def request(stage: str, payload: dict, server: str | None = None) -> tuple[int, dict]:
    """POST one stage request and return (status_code, parsed JSON body)."""
    if server:
        with httpx.Client(base_url=server.rstrip("/"), timeout=None) as client:
            response = client.post(f"/{stage}", json=payload)
        return response.status_code, _body(response)

    from .app import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://povmap.local", timeout=None
        ) as client:
            return await client.post(f"/{stage}", json=payload)

    response = asyncio.run(go())
    return response.status_code, _body(response)


def get(path: str, server: str | None = None) -> tuple[int, dict]:
    """GET a service path (used for /health)."""
    if server:
        with httpx.Client(base_url=server.rstrip("/"), timeout=None) as client:
            response = client.get(f"/{path.lstrip('/')}")
        return response.status_code, _body(response)

    from .app import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://povmap.local", timeout=None
        ) as client:
            return await client.get(f"/{path.lstrip('/')}")

    response = asyncio.run(go())
    return response.status_code, _body(response)
