"""HTTP/JSON surface of the authorization service.

Thin adapter over AuthorizationService: routes validate input shape, call
the service, and map the error hierarchy onto status codes. The dashboard
and the CLI consume exactly these endpoints.
"""

from __future__ import annotations

import hmac

from fastapi import FastAPI, Header, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import (
    AdminAuthFailure,
    AlreadyResolved,
    EscalationExpired,
    InvalidRequest,
    JudgeUnavailable,
    ManifestError,
    PersistenceFailure,
    SameVersion,
    SynthesisFailed,
    TbacError,
    UnknownEscalation,
    UnknownTask,
)
from .service import AuthorizationService

_STATUS_BY_ERROR: list[tuple[type, int]] = [
    (InvalidRequest, 400),
    (UnknownTask, 404),
    (UnknownEscalation, 404),
    (AlreadyResolved, 409),
    (SameVersion, 409),
    (EscalationExpired, 410),
    (AdminAuthFailure, 403),
    (ManifestError, 400),
    (SynthesisFailed, 502),
    (JudgeUnavailable, 502),
    (PersistenceFailure, 503),
]


def _error_response(exc: TbacError) -> JSONResponse:
    for error_type, status in _STATUS_BY_ERROR:
        if isinstance(exc, error_type):
            return JSONResponse(status_code=status, content=exc.to_dict())
    return JSONResponse(status_code=500, content=exc.to_dict())


class TaskSubmission(BaseModel):
    agent_id: str
    goal: str


class VerdictBody(BaseModel):
    verdict: str
    approver_id: str
    comment: str | None = None


class RevocationBody(BaseModel):
    task_id: str


def create_app(service: AuthorizationService) -> FastAPI:
    app = FastAPI(title="tbac task authorization service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(TbacError)
    async def handle_tbac_error(_request: Request, exc: TbacError):
        return _error_response(exc)

    def check_admin(authorization: str | None) -> None:
        configured = service.config.admin_token
        if not configured:
            raise AdminAuthFailure("no admin token configured; admin API disabled")
        if not authorization or not authorization.startswith("Bearer "):
            raise AdminAuthFailure("missing bearer token")
        supplied = authorization.removeprefix("Bearer ").strip()
        if not hmac.compare_digest(supplied, configured):
            raise AdminAuthFailure("bad admin token")

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "manifest_version": service.manifest.version}

    @app.post("/v1/tasks")
    def submit_task(body: TaskSubmission):
        return service.submit_task(body.agent_id, body.goal).to_dict()

    @app.get("/v1/tasks/{task_id}")
    def get_task(task_id: str):
        return service.get_task(task_id).to_dict()

    @app.get("/v1/escalations")
    def list_escalations(status: str | None = None):
        try:
            items = service.list_escalations(status)
        except ValueError as exc:
            raise InvalidRequest(f"unknown status filter: {exc}") from exc
        return {"escalations": [item.to_dict() for item in items]}

    @app.get("/v1/escalations/{escalation_id}")
    def get_escalation(escalation_id: str):
        return service.get_escalation(escalation_id).to_dict()

    @app.post("/v1/escalations/{escalation_id}/decision")
    def resolve_escalation(escalation_id: str, body: VerdictBody):
        return service.resolve_escalation(
            escalation_id, body.verdict, body.approver_id, body.comment
        )

    @app.get("/v1/keys/public")
    def public_key():
        return service.public_key_info()

    @app.post("/v1/revocations")
    def revoke(body: RevocationBody):
        return service.revoke_task(body.task_id)

    @app.get("/v1/revocations")
    def revocations(since: int = 0):
        return service.revocations_since(since)

    @app.get("/v1/audit")
    def audit_entries(request: Request, limit: int = 100):
        # "from" is a Python keyword; read it straight off the query string.
        from_seq = int(request.query_params.get("from", 0))
        entries = [e.to_dict() for e in service.audit.entries(from_seq, limit)]
        return {
            "entries": entries,
            "chain": service.audit.chain_status().to_dict(),
            "total": len(service.audit),
        }

    @app.put("/v1/manifest")
    async def put_manifest(request: Request, authorization: str | None = Header(default=None)):
        check_admin(authorization)
        document = await request.body()
        manifest = service.swap_manifest(document)
        return {"version": manifest.version, "tools": len(manifest.tools)}

    @app.get("/v1/manifest")
    def get_manifest():
        return service.manifest.to_document()

    @app.get("/v1/config")
    def config_view():
        return service.config.public_view()

    return app
