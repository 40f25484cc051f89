"""HTTP wrapper around the simulated WMS and the provenance toolkit.

The four wrapper operations (submit, wms_get_file, jobmon, cpool_mips)
live under the configured base path, next to a few extensions used by
the CLI: workflow status, aggregation, replay, comparison, export and
clock control.  Every route sits behind HTTP basic auth.
"""

from __future__ import annotations

import logging
import secrets
import time

from fastapi import APIRouter, Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.security import HTTPBasic, HTTPBasicCredentials

from ..core import Recap
from ..errors import RecapError
from .schemas import (
    AdvanceRequest,
    AggregateResponse,
    ClockResponse,
    JobStatus,
    MipsEntry,
    ReproduceRequest,
    ReproduceResponse,
    SubmitResponse,
    WorkflowStatus,
)

log = logging.getLogger("recap.service")

BASE_PATH = "/service_wrapper/api/v1.0"

STATUS_FOR = {
    "CyclicDag": 400,
    "InvalidDag": 400,
    "MissingSourceFile": 400,
    "ConfigError": 400,
    "MalformedHostLine": 400,
    "UnknownFlavor": 400,
    "UnknownImage": 400,
    "NoResources": 503,
    "PoolExhausted": 503,
    "UnknownWorkflow": 404,
    "UnknownJob": 404,
    "NotRunning": 404,
    "UnknownObject": 404,
    "DuplicateWmsWfid": 409,
    "DuplicateMapping": 409,
    "IncompleteProvenance": 409,
    "WorkflowStillRunning": 409,
}

_TRUE = {"1", "true", "yes", "on"}


def create_app(recap: Recap, user: str, password: str, base_path: str = BASE_PATH) -> FastAPI:
    app = FastAPI(title="recap wrapper service", version="1.0")
    app.state.recap = recap
    security = HTTPBasic(auto_error=False)

    def authenticate(creds: HTTPBasicCredentials | None = Depends(security)) -> str:
        ok = creds is not None and (
            secrets.compare_digest(creds.username.encode(), user.encode())
            & secrets.compare_digest(creds.password.encode(), password.encode())
        )
        if not ok:
            raise HTTPException(401, detail="bad credentials", headers={"WWW-Authenticate": "Basic"})
        return creds.username

    api = APIRouter(prefix=base_path.rstrip("/"), dependencies=[Depends(authenticate)])

    @app.exception_handler(RecapError)
    async def recap_error(request: Request, exc: RecapError):
        return JSONResponse({"error": exc.code, "detail": str(exc)}, status_code=STATUS_FOR.get(exc.code, 500))

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        code = {401: "Unauthorized", 404: "NotFound"}.get(exc.status_code, "HTTPError")
        return JSONResponse(
            {"error": code, "detail": str(exc.detail)}, status_code=exc.status_code, headers=exc.headers
        )

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        log.info(
            "%s %s -> %d (%.1f ms)",
            request.method, request.url.path, response.status_code, (time.perf_counter() - started) * 1e3,
        )
        return response

    def wms_id(wfid: str) -> str:
        return recap.wms_wfid(int(wfid)) if wfid.isdigit() else wfid

    # wrapper operations --------------------------------------------------------------

    @api.post("/submit", response_model=SubmitResponse)
    async def submit(request: Request):
        form = await request.form()
        files = {}
        for name in ("dag", "site", "tc", "props"):
            value = form.get(name)
            if value is not None and not isinstance(value, str):
                value = (await value.read()).decode("utf-8")
            files[name] = value
        instrumented = str(form.get("instrumented", "false")).strip().lower() in _TRUE
        strategy = form.get("strategy") or None
        sub = recap.submit(
            files["dag"], files["site"], files["tc"], files["props"],
            instrumented=instrumented, strategy=strategy,
        )
        return SubmitResponse(wms_wfid=sub.wms_wfid, wf_id=sub.wf_id)

    @api.get("/wms_get_file", response_class=PlainTextResponse)
    def wms_get_file(wfid: str, kind: str = Query("stdout"), job: str | None = None):
        if kind not in ("stdout", "stderr", "submit_output"):
            raise HTTPException(400, detail=f"unknown kind {kind!r}")
        with recap.lock:
            return PlainTextResponse(recap.wms.get_file(wms_id(wfid), job, kind))

    @api.get("/jobmon", response_model=JobStatus)
    def jobmon(condor_id: int):
        with recap.lock:
            return recap.wms.condor_lookup(condor_id)

    @api.get("/cpool_mips", response_model=dict[str, MipsEntry])
    def cpool_mips():
        with recap.lock:
            return {name: {"mips": m, "kflops": k} for name, (m, k) in recap.wms.pool_mips().items()}

    # extensions ------------------------------------------------------------------------

    @api.get("/workflows/{wf_id}", response_model=WorkflowStatus)
    def status(wf_id: int):
        return recap.status(wf_id)

    @api.get("/workflows/{wf_id}/export")
    def export(wf_id: int):
        with recap.lock:
            return recap.store.export_workflow(wf_id)

    @api.post("/workflows/{wf_id}/aggregate", response_model=AggregateResponse)
    def aggregate(wf_id: int):
        out = recap.aggregate(wf_id)
        return AggregateResponse(
            wf_id=wf_id,
            mapped=len(out.mapped),
            inserted=out.inserted,
            unmapped=[[name, reason.value] for name, reason in out.unmapped],
            errors=out.errors,
        )

    @api.post("/workflows/{wf_id}/reproduce", response_model=ReproduceResponse)
    def reproduce(wf_id: int, body: ReproduceRequest | None = None):
        body = body or ReproduceRequest()
        res = recap.reproduce(
            wf_id,
            flavor_override=body.flavor_override,
            input_container=body.input_container,
            strategy=body.strategy,
            run=body.run,
        )
        return ReproduceResponse(wf_id=res.wf_id, wms_wfid=res.wms_wfid, nodenames=list(res.nodenames))

    @api.get("/compare")
    def compare(wf_a: int, wf_b: int):
        return recap.compare(wf_a, wf_b).to_dict()

    @api.post("/sim/advance", response_model=ClockResponse)
    def advance(body: AdvanceRequest):
        return ClockResponse(now=recap.advance(body.seconds))

    @api.post("/sim/run", response_model=ClockResponse)
    def run():
        return ClockResponse(now=recap.run())

    app.include_router(api)
    return app
