"""HTTP+JSON endpoints over the study service.

Task endpoints return tagged bodies ({"assignment": ...} | {"denial": ...},
{"completion_code": ...} | {"rejection": ...}) with status 200 so clients
branch on content, not status. Admin endpoints require a bearer token read
from an environment variable named in the deployment config; when that
variable is unset the endpoints stay open and a warning is logged.
"""

from __future__ import annotations

import logging
import os
from typing import Any

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from ..domain import Stage
from ..errors import ConfigurationError, OperationalError
from .service import (
    CompletionCode,
    Denial,
    StudyService,
    SubmitRejection,
    TaskAssignment,
)

logger = logging.getLogger(__name__)


class WorkerProfile(BaseModel):
    approval_rate_pct: float
    approved_hits: int


class TaskRequest(BaseModel):
    worker_id: str
    stage: Stage
    profile: WorkerProfile


class SubmitRequest(BaseModel):
    token: str
    records: list[dict[str, Any]]
    interaction_log: list[dict[str, Any]] = Field(default_factory=list)
    user_agent: str = ""
    env_checks: dict[str, Any] | None = None


class FilterRequest(BaseModel):
    stage: Stage


def _assignment_body(a: TaskAssignment) -> dict[str, Any]:
    return {
        "session_token": a.session_token,
        "worker_id": a.worker_id,
        "stage": a.stage.value,
        "group_id": a.group_id,
        "playlist": [
            {
                "sequence_id": p.sequence_id,
                "media_url": p.media_url,
                "duration_s": p.duration_s,
            }
            for p in a.playlist
        ],
        "issued_at": a.issued_at,
        "expires_at": a.expires_at,
    }


def create_app(
    service: StudyService,
    admin_token_env: str = "AVQ_ADMIN_TOKEN",
    export_dir: str = "exports",
) -> FastAPI:
    app = FastAPI(title="avqstudy", docs_url=None, redoc_url=None)

    def require_admin(authorization: str | None = Header(default=None)) -> None:
        expected = os.environ.get(admin_token_env)
        if expected is None:
            logger.warning(
                "admin endpoints are unprotected: %s is not set", admin_token_env
            )
            return
        if authorization != f"Bearer {expected}":
            raise HTTPException(status_code=401, detail="invalid admin token")

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/tasks/request")
    def request_task(req: TaskRequest) -> dict[str, Any]:
        try:
            result = service.request_task(
                req.worker_id,
                req.stage,
                req.profile.approval_rate_pct,
                req.profile.approved_hits,
            )
        except ConfigurationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if isinstance(result, Denial):
            return {"denial": {"reason": result.reason, "detail": result.detail}}
        return {"assignment": _assignment_body(result)}

    @app.post("/tasks/submit")
    def submit(req: SubmitRequest) -> dict[str, Any]:
        result = service.submit(
            req.token,
            req.records,
            req.interaction_log,
            user_agent=req.user_agent,
            env_checks=req.env_checks,
        )
        if isinstance(result, SubmitRejection):
            return {
                "rejection": {"reason": result.reason, "problems": list(result.problems)}
            }
        assert isinstance(result, CompletionCode)
        return {
            "completion_code": result.code,
            "submission_id": result.submission_id,
        }

    @app.post("/admin/filter", dependencies=[Depends(require_admin)])
    def run_filter(req: FilterRequest) -> dict[str, Any]:
        try:
            outcomes, table = service.run_stage_filter(req.stage)
        except (ConfigurationError, OperationalError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {
            "stage": req.stage.value,
            "scored": len(outcomes),
            "accepted": sum(1 for o in outcomes if o.accepted),
            "mos_sequences": len(table),
        }

    @app.post("/admin/qualify", dependencies=[Depends(require_admin)])
    def qualify() -> dict[str, Any]:
        try:
            granted = service.grade_qualification()
        except OperationalError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"granted": sorted(granted)}

    @app.get("/admin/export", dependencies=[Depends(require_admin)])
    def export() -> dict[str, Any]:
        try:
            paths = service.export_dataset(export_dir)
        except OperationalError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"written": paths}

    return app
