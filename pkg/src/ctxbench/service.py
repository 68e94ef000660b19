"""HTTP surface: dataset paging, split retrieval, evaluation and leaderboards.

All JSON bodies are rendered with sorted keys and compact separators, so a
response can be compared byte-for-byte with the library call it wraps.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
from typing import Optional

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import Response
from pydantic import BaseModel, Field

from .benchmarks import Workspace
from .datamodel import Prediction, PredictionSet
from .errors import (
    BadCursor,
    BenchError,
    DegenerateSlice,
    InvalidScore,
    NotEnoughContexts,
    UnknownDataset,
    UnknownGroup,
)
from .metrics import canonical_json

MAX_LIMIT = 10_000
_STATUS = {UnknownDataset: 404, UnknownGroup: 404, DegenerateSlice: 422, NotEnoughContexts: 422}


def json_response(obj, status: int = 200) -> Response:
    body = obj if isinstance(obj, str) else canonical_json(obj)
    return Response(content=body, status_code=status, media_type="application/json")


def encode_cursor(version: int, content_hash: str, filter: Optional[str], offset: int) -> str:
    raw = canonical_json({"f": filter or "", "h": content_hash, "o": offset, "v": version})
    return base64.urlsafe_b64encode(raw.encode()).decode().rstrip("=")


def decode_cursor(cursor: str) -> dict:
    try:
        raw = base64.urlsafe_b64decode(cursor + "=" * (-len(cursor) % 4))
        doc = json.loads(raw)
        if not (isinstance(doc, dict) and isinstance(doc.get("o"), int) and doc["o"] >= 0
                and isinstance(doc.get("v"), int) and isinstance(doc.get("h"), str)):
            raise ValueError
        return doc
    except (ValueError, binascii.Error, UnicodeDecodeError):
        raise BadCursor("cursor is not valid") from None


class PredictionRow(BaseModel):
    entity: str
    context: str
    score: float


class EvaluateBody(BaseModel):
    seed: int = 0
    predictions: list[PredictionRow]
    submission_id: Optional[str] = Field(default=None, pattern=r"^[A-Za-z0-9_.:-]{1,128}$")


def create_app(workspace: Workspace) -> FastAPI:
    app = FastAPI(title="ctxbench", version="1", openapi_url="/v1/spec", docs_url=None, redoc_url=None)
    app.state.workspace = workspace

    @app.exception_handler(BenchError)
    async def bench_error(request: Request, exc: BenchError):
        status = next((code for cls, code in _STATUS.items() if isinstance(exc, cls)), 400)
        return json_response(exc.to_dict(), status)

    @app.get("/v1/datasets")
    def list_datasets():
        manifests = workspace.registry.list_datasets()
        latest = {}
        for m in manifests:
            latest[m.name] = max(latest.get(m.name, 0), m.version)
        return json_response([
            {"name": m.name, "version": m.version, "content_hash": m.content_hash, "n_rows": m.n_rows,
             "schema": dict(m.schema), "parent": list(m.parent) if m.parent else None,
             "created_at": m.created_at, "latest": m.version == latest[m.name]}
            for m in manifests
        ])

    @app.get("/v1/datasets/{name}/{version}/rows")
    def rows(name: str, version: str, filter: Optional[str] = None, cursor: Optional[str] = None,
             limit: int = Query(100, ge=1, le=MAX_LIMIT)):
        m = workspace.registry.get(name, version)
        offset = 0
        if cursor:
            doc = decode_cursor(cursor)
            if doc["v"] != m.version or doc["h"] != m.content_hash or doc.get("f", "") != (filter or ""):
                raise BadCursor("cursor does not belong to this dataset version and filter", name=name)
            offset = doc["o"]
        page, columns, seen, more = [], None, 0, False
        for batch in workspace.registry.stream(m.name, m.version, filter, chunk_size=min(MAX_LIMIT, limit + 1)):
            columns = batch.columns
            for row in batch.rows:
                if seen >= offset + limit:
                    more = True
                    break
                if seen >= offset:
                    page.append(list(row))
                seen += 1
            if more:
                break
        if columns is None:
            columns = tuple(m.schema)
        return json_response({
            "name": m.name, "version": m.version, "content_hash": m.content_hash, "columns": list(columns),
            "rows": page, "next_cursor": encode_cursor(m.version, m.content_hash, filter, offset + limit)
            if more else None,
        })

    @app.get("/v1/benchmarks/{group_id}/split")
    def split(group_id: str, seed: int = 0):
        group = workspace.group(group_id)
        return json_response(workspace.split_document(group, seed))

    @app.post("/v1/benchmarks/{group_id}/evaluate")
    def evaluate(group_id: str, body: EvaluateBody = Body(...)):
        group = workspace.group(group_id)
        rows = []
        for i, p in enumerate(body.predictions):
            if not math.isfinite(p.score) or not 0.0 <= p.score <= 1.0:
                raise InvalidScore(f"prediction {i}: score {p.score!r} outside [0, 1]", index=i)
            rows.append(Prediction(p.entity, p.context, p.score))
        report, _ = workspace.submit(group, PredictionSet(tuple(rows)), body.seed, body.submission_id)
        return json_response(report.to_json())

    @app.get("/v1/leaderboards/{group_id}")
    def leaderboard(group_id: str):
        return json_response(workspace.leaderboard(workspace.group(group_id)))

    return app
