"""Job-to-cloud-resource mapping.

Four strategies turn WMS job records into CAP records:

``static``
    match each job's host IP against the VMs running right now.
``eager``
    while the workflow runs, ask the pool where every running job is and
    keep a temporary mapping; at the end prefer the live VM, else promote
    the temporary mapping.
``lazy``
    keep a cloud-wide log of VM sightings; at the end pick, among VMs seen
    with the job's IP, the one created nearest to the job's start.
``snohi``
    for WMSs without host information: instrumented jobs print a
    ``RECAP_HOST`` line, which is parsed and joined with the VM list.

A :class:`Monitor` drives the periodic ticks on the virtual clock and
:func:`aggregate` runs the final step and persists everything.
"""

from __future__ import annotations

import ipaddress
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol, Sequence

from .cloud import Cloud, ObjectStore, VirtualMachine
from .errors import MalformedHostLine, NotRunning, UnknownObject, UnknownWorkflow, WorkflowStillRunning
from .events import PRIO_MONITOR, EventLoop
from .store import CAPRecord, Store, TempMapping, VmInfo
from .wms import JobRecord, JobState, WorkflowManager, WorkflowState

log = logging.getLogger(__name__)

STRATEGIES = ("static", "eager", "lazy", "snohi")
DEFAULT_POLL_S = 5.0

_HOST_RE = re.compile(r"^RECAP_HOST ip=(\S+) hostname=(\S+)$")


class Reason(str, Enum):
    NO_HOST_INFO = "NO_HOST_INFO"
    VM_GONE = "VM_GONE"
    NO_OBSERVATION = "NO_OBSERVATION"


@dataclass
class MappingOutcome:
    mapped: list[CAPRecord] = field(default_factory=list)
    unmapped: list[tuple[str, Reason]] = field(default_factory=list)
    # job -> VM description the record was built from (for CPU specs)
    sources: dict[str, VmInfo] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    inserted: int = 0

    def mapped_jobs(self) -> set[str]:
        return {r.job_name for r in self.mapped}

    def unmapped_jobs(self) -> dict[str, Reason]:
        return dict(self.unmapped)

    def add(self, rec: CAPRecord, source: VmInfo | None) -> None:
        self.mapped.append(rec)
        if source is not None:
            self.sources[rec.job_name] = source


class CloudView(Protocol):
    def list_vms(self) -> Sequence[VirtualMachine]: ...


def _by_ip(vms: Iterable[VirtualMachine]) -> dict[str, VirtualMachine]:
    return {vm.ip: vm for vm in vms}


def static_map(wf_id: int, jobs: Sequence[JobRecord], vm_list: Sequence[VirtualMachine]) -> MappingOutcome:
    """Match each job's host IP against a VM snapshot; nothing is persisted."""
    out = MappingOutcome()
    live = _by_ip(vm_list)
    for job in jobs:
        if not job.host_ip:
            out.unmapped.append((job.name, Reason.NO_HOST_INFO))
        elif job.host_ip in live:
            info = VmInfo.from_vm(live[job.host_ip])
            out.add(CAPRecord.from_vm(wf_id, job.name, info), info)
        else:
            out.unmapped.append((job.name, Reason.VM_GONE))
    return out


class Mapper:
    """Base class: one instance per workflow run."""

    kind = "none"
    needs_ticks = False

    def __init__(self, store: Store, wms: WorkflowManager, wf_id: int, wms_wfid: str):
        self.store = store
        self.wms = wms
        self.cloud: Cloud = wms.cloud
        self.wf_id = wf_id
        self.wms_wfid = wms_wfid

    def tick(self) -> None:
        pass

    def finalize(self, jobs: Sequence[JobRecord] | None = None) -> MappingOutcome:
        if jobs is None:
            jobs = self.wms.get_job_records(self.wms_wfid)
        with self.store.transaction():
            out = MappingOutcome()
            for job in jobs:
                existing = self.store.get_cap_record(self.wf_id, job.name)
                if existing is not None:
                    # already promoted by an earlier finalize
                    out.add(existing, None)
                    continue
                self._map_job(job, out)
            self._cleanup(out)
            for rec in out.mapped:
                if rec.job_name in out.sources:
                    self.store.insert_cap_record(rec)
                    out.inserted += 1
        return out

    def _map_job(self, job: JobRecord, out: MappingOutcome) -> None:
        raise NotImplementedError

    def _cleanup(self, out: MappingOutcome) -> None:
        pass

    def _cap(self, job: JobRecord, info: VmInfo) -> CAPRecord:
        return CAPRecord.from_vm(self.wf_id, job.name, info)


class StaticMapper(Mapper):
    kind = "static"

    def _map_job(self, job: JobRecord, out: MappingOutcome) -> None:
        single = static_map(self.wf_id, [job], self.cloud.list_vms())
        out.mapped.extend(single.mapped)
        out.sources.update(single.sources)
        out.unmapped.extend(single.unmapped)


class EagerMapper(Mapper):
    kind = "eager"
    needs_ticks = True

    def tick(self) -> None:
        now = self.cloud.clock.now
        live = {vm.vm_id: vm for vm in self.cloud.list_vms()}
        by_ip = _by_ip(live.values())
        for job in self.wms.get_job_records(self.wms_wfid):
            if job.state != JobState.RUNNING or job.condor_id is None:
                continue
            try:
                where = self.wms.condor_lookup(job.condor_id)
            except NotRunning:
                continue
            vm = by_ip.get(where["host_ip"])
            if vm is None:
                continue
            current = self.store.get_temp_mapping(self.wf_id, job.name)
            if current is not None and current.vm.vm_id == vm.vm_id:
                continue
            self.store.upsert_temp_mapping(TempMapping(self.wf_id, job.name, VmInfo.from_vm(vm), now))

    def _map_job(self, job: JobRecord, out: MappingOutcome) -> None:
        live = _by_ip(self.cloud.list_vms()).get(job.host_ip) if job.host_ip else None
        temp = self.store.take_temp_mapping(self.wf_id, job.name)
        if live is not None and (temp is None or job.start_time is None or live.created_at <= job.start_time):
            # a live VM created after the job started only holds a recycled IP,
            # so the temporary mapping wins in that case
            info = VmInfo.from_vm(live)
        elif temp is not None:
            info = temp.vm
        else:
            out.unmapped.append((job.name, Reason.NO_HOST_INFO if not job.host_ip else Reason.VM_GONE))
            return
        out.add(self._cap(job, info), info)


class ObservingMapper(Mapper):
    """Ticks record every running VM into the cloud-wide sighting log."""

    needs_ticks = True

    def tick(self) -> None:
        now = self.cloud.clock.now
        for vm in self.cloud.list_vms():
            self.store.record_vm_observation(VmInfo.from_vm(vm), now)

    def finalize(self, jobs: Sequence[JobRecord] | None = None) -> MappingOutcome:
        self.tick()
        return super().finalize(jobs)

    def _nearest(self, ip: str, start: float | None) -> VmInfo | None:
        obs = self.store.find_vm_by_ip_near(ip, start if start is not None else self.cloud.clock.now)
        return obs.vm if obs is not None else None


class LazyMapper(ObservingMapper):
    kind = "lazy"

    def _map_job(self, job: JobRecord, out: MappingOutcome) -> None:
        if not job.host_ip:
            out.unmapped.append((job.name, Reason.NO_HOST_INFO))
            return
        info = self._nearest(job.host_ip, job.start_time)
        if info is None:
            out.unmapped.append((job.name, Reason.NO_OBSERVATION))
        else:
            out.add(self._cap(job, info), info)


def parse_host_line(stdout: str) -> tuple[str, str] | None:
    """Return (ip, hostname) from a job's stdout, None if no line is present.

    Raises MalformedHostLine when a ``RECAP_HOST`` line exists but cannot
    be parsed.
    """
    for line in stdout.splitlines():
        if not line.startswith("RECAP_HOST"):
            continue
        m = _HOST_RE.match(line.rstrip("\r"))
        if m is None:
            raise MalformedHostLine(line)
        ip, hostname = m.groups()
        try:
            ipaddress.IPv4Address(ip)
        except ValueError:
            raise MalformedHostLine(line) from None
        return ip, hostname
    return None


class SnohiMapper(ObservingMapper):
    kind = "snohi"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._malformed: dict[str, str] = {}

    def parse_logs(self, jobs: Sequence[JobRecord]) -> None:
        for job in jobs:
            if not job.terminal:
                continue
            try:
                found = parse_host_line(job.stdout_log)
            except MalformedHostLine as exc:
                self._malformed[job.name] = str(exc)
                continue
            if found is not None:
                self.store.upsert_job_host(self.wf_id, job.name, *found)

    def finalize(self, jobs: Sequence[JobRecord] | None = None) -> MappingOutcome:
        if jobs is None:
            jobs = self.wms.get_job_records(self.wms_wfid)
        self.parse_logs(jobs)
        self._hosts = self.store.get_job_hosts(self.wf_id)
        return super().finalize(jobs)

    def _map_job(self, job: JobRecord, out: MappingOutcome) -> None:
        if job.name in self._malformed:
            out.errors[job.name] = f"MalformedHostLine: {self._malformed[job.name]}"
            out.unmapped.append((job.name, Reason.NO_HOST_INFO))
            return
        host = self._hosts.get(job.name)
        if host is None:
            out.unmapped.append((job.name, Reason.NO_HOST_INFO))
            return
        live = _by_ip(self.cloud.list_vms()).get(host.host_ip)
        if live is not None and (job.start_time is None or live.created_at <= job.start_time):
            info = VmInfo.from_vm(live)
        else:
            # VM already gone (dynamic lifecycle): fall back to the sighting log
            info = self._nearest(host.host_ip, job.start_time)
            if info is None and live is not None:
                info = VmInfo.from_vm(live)
        if info is None:
            out.unmapped.append((job.name, Reason.VM_GONE))
            return
        out.add(self._cap(job, info), info)
        self.store.delete_job_host(self.wf_id, job.name)


MAPPERS: dict[str, type[Mapper]] = {
    "static": StaticMapper,
    "eager": EagerMapper,
    "lazy": LazyMapper,
    "snohi": SnohiMapper,
}


def make_mapper(kind: str, store: Store, wms: WorkflowManager, wf_id: int, wms_wfid: str) -> Mapper:
    try:
        cls = MAPPERS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown mapping strategy {kind!r}; expected one of {STRATEGIES}") from None
    return cls(store, wms, wf_id, wms_wfid)


class Monitor:
    """Periodic tick of one mapper on the virtual clock until stopped."""

    def __init__(self, clock: EventLoop, mapper: Mapper, interval_s: float = DEFAULT_POLL_S):
        if interval_s <= 0:
            raise ValueError("poll interval must be positive")
        self.clock = clock
        self.mapper = mapper
        self.interval_s = interval_s
        self.ticks = 0
        self.running = False

    def start(self) -> None:
        if self.running:
            return
        self.running = True
        self.clock.schedule(self.clock.now, self._fire, PRIO_MONITOR)

    def stop(self) -> None:
        self.running = False

    def _fire(self) -> None:
        if not self.running:
            return
        self.mapper.tick()
        self.ticks += 1
        self.clock.after(self.interval_s, self._fire, PRIO_MONITOR)


def _file_rows(store: Store, wms: WorkflowManager, objects: ObjectStore, wf_id: int, wms_wfid: str) -> int:
    dag = wms.get_dag(wms_wfid)
    linked = 0
    for job in dag.jobs:
        for direction, lfns in (("in", job.inputs), ("out", job.outputs)):
            for lfn in lfns:
                container, key = wms.locate(wms_wfid, lfn)
                try:
                    rec = objects.head_object(container, key)
                except UnknownObject:
                    continue
                store.link_job_file(wf_id, job.name, store.upsert_cloud_file(rec), direction)
                linked += 1
    return linked


def aggregate(
    store: Store,
    wms: WorkflowManager,
    objects: ObjectStore,
    mapper: Mapper,
) -> MappingOutcome:
    """Finish mapping for a finished workflow and persist CAP, CPU and file rows."""
    wf_id, wms_wfid = mapper.wf_id, mapper.wms_wfid
    store.require(wf_id)
    try:
        state = wms.get_workflow_state(wms_wfid)
    except UnknownWorkflow:
        raise UnknownWorkflow(f"{wf_id} ({wms_wfid}) is not known to the WMS") from None
    if state == WorkflowState.RUNNING:
        raise WorkflowStillRunning(wms_wfid)
    result = wms.result(wms_wfid)
    pool = wms.pool_mips()
    with store.transaction():
        outcome = mapper.finalize(list(result.job_records))
        for job_name, info in outcome.sources.items():
            mips, kflops = info.mips, info.kflops
            if info.nodename in pool and wms.cloud.is_running(info.vm_id):
                mips, kflops = pool[info.nodename]
            store.insert_cpu_spec(wf_id, job_name, info.arch, info.os, mips, kflops)
        _file_rows(store, wms, objects, wf_id, wms_wfid)
        store.update_run(
            wf_id,
            state=state.value,
            strategy=mapper.kind,
            makespan_s=result.makespan_s,
            unmapped=[(name, reason.value) for name, reason in outcome.unmapped],
            aggregated=True,
        )
    log.info(
        "aggregated wf %s with %s: %d mapped, %d unmapped",
        wf_id, mapper.kind, len(outcome.mapped), len(outcome.unmapped),
    )
    return outcome
