from __future__ import annotations

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field


class SubmitResponse(BaseModel):
    wms_wfid: str
    wf_id: int


class ErrorBody(BaseModel):
    error: str
    detail: str = ""


class JobStatus(BaseModel):
    state: str
    host_ip: str
    nodename: str
    wms_wfid: str
    job: str


class MipsEntry(BaseModel):
    mips: int
    kflops: int


class JobView(BaseModel):
    name: str
    state: str
    condor_id: Optional[int] = None
    host_ip: Optional[str] = None
    start_time: Optional[float] = None
    end_time: Optional[float] = None


class WorkflowStatus(BaseModel):
    wf_id: int
    wms_wfid: str
    state: str
    strategy: Optional[str] = None
    instrumented: bool
    makespan_s: Optional[float] = None
    aggregated: bool
    replay_of: Optional[int] = None
    mapped: int
    unmapped: List[List[str]] = Field(default_factory=list)
    now: float
    jobs: Optional[List[JobView]] = None


class AggregateResponse(BaseModel):
    wf_id: int
    mapped: int
    inserted: int
    unmapped: List[List[str]]
    errors: Dict[str, str] = Field(default_factory=dict)


class ReproduceRequest(BaseModel):
    flavor_override: Union[int, str, Dict[str, Union[int, str]], None] = None
    input_container: Optional[str] = None
    strategy: Optional[str] = None
    run: bool = True


class ReproduceResponse(BaseModel):
    wf_id: int
    wms_wfid: str
    nodenames: List[str]


class AdvanceRequest(BaseModel):
    seconds: float = Field(ge=0)


class ClockResponse(BaseModel):
    now: float
