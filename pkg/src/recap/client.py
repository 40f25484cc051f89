"""Synchronous client for the wrapper service.

Errors come back as ``{"error": <code>, "detail": ...}`` and are re-raised
as the matching :mod:`recap.errors` class, so callers handle remote and
local failures the same way.
"""

from __future__ import annotations

import warnings
from typing import Mapping

import httpx

from .config import PegasusParser
from .errors import RecapError, from_code


class ServiceError(RecapError):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class RecapClient:
    def __init__(
        self,
        endpoint: str,
        user: str,
        password: str,
        http: httpx.Client | None = None,
        parser=PegasusParser,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.parser = parser
        self.http = http or httpx.Client(timeout=timeout)
        self.http.auth = httpx.BasicAuth(user, password)

    @classmethod
    def local(cls, recap, user: str = "recap", password: str = "recap", base_path: str | None = None):
        """Talk to an in-process app instead of a socket (used by ``--local`` and tests)."""
        with warnings.catch_warnings():
            # newer Starlette nudges towards a different HTTP backend; httpx still works
            warnings.filterwarnings("ignore", message=".*starlette.testclient.*")
            from starlette.testclient import TestClient

        from .service import BASE_PATH, create_app

        base = base_path or BASE_PATH
        app = create_app(recap, user, password, base)
        return cls("http://testserver" + base, user, password, http=TestClient(app))

    @classmethod
    def from_config(cls, cfg) -> "RecapClient":
        return cls(cfg.endpoint, cfg.service_user, cfg.service_password, parser=cfg.wms_parser)

    def close(self) -> None:
        self.http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, method: str, path: str, **kwargs) -> httpx.Response:
        resp = self.http.request(method, self.endpoint + path, **kwargs)
        if resp.status_code >= 400:
            try:
                body = resp.json()
                code, detail = body.get("error", ""), body.get("detail", "")
            except ValueError:
                code, detail = "", resp.text
            if code and code not in ("Unauthorized", "NotFound", "HTTPError"):
                raise from_code(code, detail)
            raise ServiceError(resp.status_code, f"HTTP {resp.status_code}: {detail or code}")
        return resp

    # wrapper operations ------------------------------------------------------------

    def submit(
        self,
        dag: str,
        site: str,
        tc: str,
        props: str,
        instrumented: bool = False,
        strategy: str | None = None,
    ) -> tuple[int, str]:
        files = {
            "dag": ("dag.json", dag.encode()),
            "site": ("site.json", site.encode()),
            "tc": ("tc.txt", tc.encode()),
            "props": ("pegasus.properties", props.encode()),
        }
        data = {"instrumented": "true" if instrumented else "false"}
        if strategy:
            data["strategy"] = strategy
        resp = self._call("POST", "/submit", files=files, data=data)
        return self.parser.ids_from_response(resp.json())

    def get_file(self, wfid: str | int, kind: str = "stdout", job: str | None = None) -> str:
        params = {"wfid": str(wfid), "kind": kind}
        if job is not None:
            params["job"] = job
        return self._call("GET", "/wms_get_file", params=params).text

    def jobmon(self, condor_id: int) -> dict:
        return self._call("GET", "/jobmon", params={"condor_id": condor_id}).json()

    def cpool_mips(self) -> dict[str, dict]:
        return self._call("GET", "/cpool_mips").json()

    # extensions ----------------------------------------------------------------------

    def status(self, wf_id: int) -> dict:
        return self._call("GET", f"/workflows/{wf_id}").json()

    def export(self, wf_id: int) -> dict:
        return self._call("GET", f"/workflows/{wf_id}/export").json()

    def aggregate(self, wf_id: int) -> dict:
        return self._call("POST", f"/workflows/{wf_id}/aggregate").json()

    def reproduce(
        self,
        wf_id: int,
        flavor_override: str | int | Mapping[str, str | int] | None = None,
        input_container: str | None = None,
        strategy: str | None = None,
        run: bool = True,
    ) -> dict:
        body = {
            "flavor_override": flavor_override,
            "input_container": input_container,
            "strategy": strategy,
            "run": run,
        }
        return self._call("POST", f"/workflows/{wf_id}/reproduce", json=body).json()

    def compare(self, wf_a: int, wf_b: int) -> dict:
        return self._call("GET", "/compare", params={"wf_a": wf_a, "wf_b": wf_b}).json()

    def advance(self, seconds: float) -> float:
        return self._call("POST", "/sim/advance", json={"seconds": seconds}).json()["now"]

    def run(self) -> float:
        return self._call("POST", "/sim/run").json()["now"]
