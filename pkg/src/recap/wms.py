"""Simulated workflow management system (a Pegasus/Condor stand-in).

The engine plans a :class:`~recap.dax.WorkflowDAG`, places ready jobs on
idle VMs of the pool (greedy, earliest-available VM first, ties broken by
nodename), and advances everything on the shared virtual clock.  What it
records about each job, in particular whether the execution host's IP is
kept, depends on the WMS profile named in the site file:

``full``
    host IP stored with every job record (Pegasus-like).
``no_host_info``
    host IP never stored (Chimera-like).
``volatile``
    host IP stored only if the VM still exists when the record is written.

Timing model per attempt::

    duration = fixed_duration_s                                  (sleep mode)
             = length_mi / (mips * min(max_parallelism, vcpus))  (compute mode)
             (+ instrumentation delay for instrumented submissions)

An attempt fails when ``ram_req_mb > flavor.ram_mb - os_overhead_mb``.  A
failed job is retried once on a different VM when one exists.
"""

from __future__ import annotations

import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from . import kernels
from .cloud import Cloud, Flavor, ObjectStore, VirtualMachine
from .dax import JobSpec, SiteConfig, WorkflowDAG
from .errors import (
    InvalidDag,
    NameInUse,
    NoResources,
    NotRunning,
    PoolExhausted,
    UnknownJob,
    UnknownObject,
    UnknownWorkflow,
    VmNotRunning,
)
from .events import PRIO_COMPLETE, PRIO_DESTROY, PRIO_DISPATCH, PRIO_RECORD

log = logging.getLogger(__name__)

HOST_LINE = "RECAP_HOST ip={ip} hostname={hostname}"


class JobState(str, Enum):
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"


class WorkflowState(str, Enum):
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"


@dataclass(frozen=True)
class JobRecord:
    job_id: int
    wms_wfid: str
    name: str
    condor_id: int | None
    state: JobState
    host_ip: str | None = None
    start_time: float | None = None
    end_time: float | None = None
    stdout_log: str = ""
    stderr_log: str = ""
    attempts: int = 0

    @property
    def terminal(self) -> bool:
        return self.state in (JobState.SUCCEEDED, JobState.FAILED)


@dataclass(frozen=True)
class WmsRunResult:
    wms_wfid: str
    makespan_s: float
    job_records: tuple[JobRecord, ...]
    submit_output: str


@dataclass
class WmsConfig:
    os_overhead_mb: int = 64
    dispatch_latency_s: float = 0.0
    instrumentation_delay_s: float = 0.0418
    # 0 writes job records the instant a job ends; otherwise records are
    # flushed on the next multiple of the interval (a lagging WMS monitor)
    record_sync_interval_s: float = 0.0
    # dynamic lifecycle: how long a VM survives after its job ends
    vm_linger_s: float = 0.0
    max_retries: int = 1
    work_dir: str = "/var/lib/recap/work"


@dataclass(frozen=True)
class SchedulingPolicy:
    """Where and how jobs of one submission may run.

    ``static`` runs on the existing pool (optionally restricted to
    ``pool`` nodenames, with per-job ``pin`` constraints).  ``dynamic``
    provisions a fresh VM per job attempt and destroys it once the job
    ends; ``flavor="random-flavor"`` draws the flavor uniformly from the
    catalog.
    """

    lifecycle: str = "static"
    pool: tuple[str, ...] | None = None
    pin: Mapping[str, str] | None = None
    flavor: str = "m1.small"
    image: str | None = None
    nodename_prefix: str = "dyn"
    seed: int = 0

    def __post_init__(self):
        if self.lifecycle not in ("static", "dynamic"):
            raise ValueError(f"unknown lifecycle {self.lifecycle!r}")


@dataclass(eq=False)
class _JobRun:
    spec: JobSpec
    job_id: int
    pending_parents: int
    state: JobState = JobState.QUEUED
    condor_id: int | None = None
    vm_id: str | None = None
    start: float | None = None
    end: float | None = None
    attempts: int = 0
    tried: set = field(default_factory=set)
    stdout: str = ""
    stderr: str = ""
    host_ip: str | None = None
    written: bool = False


@dataclass(eq=False)
class _Run:
    wms_wfid: str
    dag: WorkflowDAG
    site: SiteConfig
    tc: dict[str, str]
    policy: SchedulingPolicy
    instrumented: bool
    jobs: dict[str, _JobRun]
    submit_output: str = ""
    state: WorkflowState = WorkflowState.RUNNING
    finished_at: float | None = None
    rng: random.Random = field(default_factory=random.Random)
    listeners: list = field(default_factory=list)


def job_duration(job: JobSpec, vm: VirtualMachine) -> float:
    if job.fixed_duration_s is not None:
        return float(job.fixed_duration_s)
    cores = min(job.max_parallelism, vm.flavor.vcpus)
    return job.length_mi / (vm.cpu_spec.mips * cores)


def ram_fits(ram_req_mb: int, flavor: Flavor, os_overhead_mb: int) -> bool:
    return ram_req_mb <= flavor.ram_mb - os_overhead_mb


class WorkflowManager:
    def __init__(
        self,
        cloud: Cloud,
        objects: ObjectStore,
        config: WmsConfig | None = None,
        run_seq_start: int = 1,
    ):
        self.cloud = cloud
        self.objects = objects
        self.clock = cloud.clock
        self.config = config or WmsConfig()
        self._runs: dict[str, _Run] = {}
        self._seq = run_seq_start
        self._next_job_id = 1
        self._next_condor_id = 1
        self._ready: deque[tuple[_Run, _JobRun]] = deque()
        self._busy: dict[str, tuple[_Run, _JobRun]] = {}
        self._available_since: dict[str, float] = {}
        self._dedicated: set[str] = set()
        self._condor: dict[int, tuple[_Run, _JobRun]] = {}
        self._dispatch_at: float | None = None
        self._dyn_counter = 0

    # submission ----------------------------------------------------------------

    def plan_and_submit(
        self,
        dag: WorkflowDAG,
        site: SiteConfig | None = None,
        policy: SchedulingPolicy | None = None,
        tc: dict[str, str] | None = None,
        instrumented: bool = False,
    ) -> str:
        site = site or SiteConfig()
        policy = policy or SchedulingPolicy()
        tc = dict(tc or {})
        for job in dag.jobs:
            try:
                kernels.resolve(job.executable, tc)
            except KeyError as exc:
                raise InvalidDag(str(exc.args[0])) from None
        if dag.jobs:
            self._check_resources(dag, policy)

        wms_wfid = f"{dag.name}-{self._seq:04d}"
        self._seq += 1
        jobs = {}
        for spec in dag.jobs:
            jobs[spec.name] = _JobRun(spec, self._next_job_id, len(dag.parents(spec.name)))
            self._next_job_id += 1
        run = _Run(
            wms_wfid=wms_wfid,
            dag=dag,
            site=site,
            tc=tc,
            policy=policy,
            instrumented=instrumented,
            jobs=jobs,
            rng=random.Random(f"{policy.seed}-{wms_wfid}"),
        )
        run.submit_output = self._planner_output(run)
        self._runs[wms_wfid] = run
        log.info("submitted %s (%d jobs, %s)", wms_wfid, len(jobs), policy.lifecycle)
        if not jobs:
            run.state = WorkflowState.DONE
            run.finished_at = self.clock.now
            return wms_wfid
        for name in dag.topological_order():
            if jobs[name].pending_parents == 0:
                self._ready.append((run, jobs[name]))
        self._request_dispatch()
        return wms_wfid

    def withdraw(self, wms_wfid: str) -> None:
        """Forget a submission that has not started any job yet (rollback of a failed submit)."""
        run = self._run(wms_wfid)
        if any(jr.attempts for jr in run.jobs.values()):
            raise ValueError(f"{wms_wfid} already started")
        self._ready = deque(entry for entry in self._ready if entry[0] is not run)
        del self._runs[wms_wfid]

    def _check_resources(self, dag: WorkflowDAG, policy: SchedulingPolicy) -> None:
        if policy.lifecycle == "dynamic":
            if policy.image is None:
                raise NoResources("dynamic lifecycle needs an image to provision from")
            self.cloud.get_image(policy.image)
            if policy.flavor != "random-flavor":
                self.cloud.get_flavor(policy.flavor)
            return
        pool = self._pool_vms(policy)
        if not pool:
            raise NoResources("no RUNNING VM in the pool")
        names = {vm.nodename for vm in pool}
        for job, node in (policy.pin or {}).items():
            if node not in names:
                raise NoResources(f"job {job} pinned to absent node {node}")

    def _planner_output(self, run: _Run) -> str:
        dag = run.dag
        return (
            f"Planning workflow {dag.name} ({len(dag.jobs)} jobs, {len(dag.edges)} edges)\n"
            f"Site: input={run.site.input_container} output={run.site.output_container} "
            f"profile={run.site.wms_profile}\n"
            f"Your workflow has been started and is running in the base directory:\n"
            f"  {self.config.work_dir}/{run.wms_wfid}\n"
            f"wfid: {run.wms_wfid}\n"
        )

    # scheduling --------------------------------------------------------------

    def _pool_vms(self, policy: SchedulingPolicy) -> list[VirtualMachine]:
        vms = [vm for vm in self.cloud.list_vms() if vm.vm_id not in self._dedicated]
        if policy.pool is not None:
            allowed = set(policy.pool)
            vms = [vm for vm in vms if vm.nodename in allowed]
        return vms

    def _eligible(self, run: _Run, jr: _JobRun) -> list[VirtualMachine]:
        vms = self._pool_vms(run.policy)
        pinned = (run.policy.pin or {}).get(jr.spec.name)
        if pinned is not None:
            vms = [vm for vm in vms if vm.nodename == pinned]
        if jr.tried:
            fresh = [vm for vm in vms if vm.vm_id not in jr.tried]
            if fresh:
                vms = fresh
        return vms

    def _request_dispatch(self) -> None:
        if self._dispatch_at == self.clock.now:
            return
        self._dispatch_at = self.clock.now
        self.clock.schedule(self.clock.now, self._dispatch, PRIO_DISPATCH)

    def _dispatch(self) -> None:
        self._dispatch_at = None
        waiting = deque()
        while self._ready:
            run, jr = self._ready.popleft()
            vm = self._acquire_vm(run, jr)
            if vm is None:
                waiting.append((run, jr))
            else:
                self._launch(run, jr, vm)
        self._ready = waiting

    def _acquire_vm(self, run: _Run, jr: _JobRun) -> VirtualMachine | None:
        if run.policy.lifecycle == "dynamic":
            if run.policy.flavor == "random-flavor":
                flavor = run.rng.choice(self.cloud.flavors()).name
            else:
                flavor = run.policy.flavor
            while True:
                self._dyn_counter += 1
                name = f"{run.policy.nodename_prefix}-{self._dyn_counter:04d}"
                try:
                    vm = self.cloud.provision(flavor, run.policy.image, name)
                except NameInUse:
                    continue
                except PoolExhausted:
                    return None
                break
            self._dedicated.add(vm.vm_id)
            return vm
        idle = [vm for vm in self._eligible(run, jr) if vm.vm_id not in self._busy]
        if not idle:
            return None
        return min(idle, key=lambda vm: (self._available_since.get(vm.vm_id, vm.created_at), vm.nodename))

    def _launch(self, run: _Run, jr: _JobRun, vm: VirtualMachine) -> None:
        self._busy[vm.vm_id] = (run, jr)
        jr.vm_id = vm.vm_id
        jr.tried.add(vm.vm_id)
        jr.attempts += 1
        latency = self.config.dispatch_latency_s
        if latency > 0:
            self.clock.after(latency, lambda: self._begin(run, jr, vm), PRIO_DISPATCH)
        else:
            self._begin(run, jr, vm)

    def _begin(self, run: _Run, jr: _JobRun, vm: VirtualMachine) -> None:
        jr.condor_id = self._next_condor_id
        self._next_condor_id += 1
        jr.state = JobState.RUNNING
        jr.start = self.clock.now
        jr.end = None
        self._condor[jr.condor_id] = (run, jr)
        ok = ram_fits(jr.spec.ram_req_mb, vm.flavor, self.config.os_overhead_mb)
        duration = job_duration(jr.spec, vm)
        if run.instrumented:
            duration += self.config.instrumentation_delay_s
        self.clock.after(duration, lambda: self._complete(run, jr, vm, ok), PRIO_COMPLETE)

    def _complete(self, run: _Run, jr: _JobRun, vm: VirtualMachine, ok: bool) -> None:
        now = self.clock.now
        jr.end = now
        del self._busy[vm.vm_id]
        self._available_since[vm.vm_id] = now
        self._condor.pop(jr.condor_id, None)

        header = ""
        if run.instrumented:
            header = HOST_LINE.format(ip=vm.ip, hostname=vm.nodename) + "\n"
        if ok:
            try:
                stdout = self._run_kernel(run, jr.spec, vm)
                jr.stdout, jr.stderr = header + stdout, ""
            except (UnknownObject, ValueError, KeyError) as exc:
                ok = False
                jr.stdout, jr.stderr = header, f"job failed: {exc}\n"
        else:
            jr.stdout = header
            jr.stderr = (
                f"job killed: requested {jr.spec.ram_req_mb} MB RAM, "
                f"{vm.flavor.name} offers {vm.flavor.ram_mb} MB "
                f"({self.config.os_overhead_mb} MB held by the OS)\n"
            )

        if run.policy.lifecycle == "dynamic":
            self.clock.after(self.config.vm_linger_s, lambda: self._teardown(vm.vm_id), PRIO_DESTROY)

        if ok:
            jr.state = JobState.SUCCEEDED
            self._schedule_record(run, jr, vm)
            for child in run.dag.children(jr.spec.name):
                cj = run.jobs[child]
                cj.pending_parents -= 1
                if cj.pending_parents == 0:
                    self._ready.append((run, cj))
        elif jr.attempts <= self.config.max_retries and self._can_retry(run, jr):
            log.info("%s/%s failed on %s, rescheduling", run.wms_wfid, jr.spec.name, vm.nodename)
            jr.state = JobState.QUEUED
            self._ready.append((run, jr))
        else:
            jr.state = JobState.FAILED
            self._schedule_record(run, jr, vm)
            self._fail_descendants(run, jr.spec.name)
        self._request_dispatch()

    def _can_retry(self, run: _Run, jr: _JobRun) -> bool:
        if run.policy.lifecycle == "dynamic":
            return True
        return any(vm.vm_id not in jr.tried for vm in self._eligible(run, jr))

    def _teardown(self, vm_id: str) -> None:
        if self.cloud.is_running(vm_id):
            self.cloud.destroy(vm_id)
        self._dedicated.discard(vm_id)

    def _run_kernel(self, run: _Run, spec: JobSpec, vm: VirtualMachine) -> str:
        fn = kernels.resolve(spec.executable, run.tc)
        inputs = {}
        for lfn in spec.inputs:
            container, key = self.locate(run.wms_wfid, lfn)
            inputs[lfn] = self.objects.get_object(container, key)[0]
        outputs, stdout = fn(spec, inputs)
        missing = set(spec.outputs) - set(outputs)
        if missing:
            raise ValueError(f"kernel did not produce {sorted(missing)}")
        for lfn in spec.outputs:
            container, key = self.locate(run.wms_wfid, lfn)
            self.objects.put_object(
                container, key, outputs[lfn], {"wms_wfid": run.wms_wfid, "job": spec.name}
            )
        return stdout

    def _schedule_record(self, run: _Run, jr: _JobRun, vm: VirtualMachine) -> None:
        now = self.clock.now
        interval = self.config.record_sync_interval_s
        at = now if interval <= 0 else math.ceil(now / interval - 1e-9) * interval
        self.clock.schedule(max(at, now), lambda: self._write_record(run, jr, vm), PRIO_RECORD)

    def _write_record(self, run: _Run, jr: _JobRun, vm: VirtualMachine) -> None:
        profile = run.site.wms_profile
        if profile == "full" or (profile == "volatile" and self.cloud.is_running(vm.vm_id)):
            jr.host_ip = vm.ip
        else:
            jr.host_ip = None
        jr.written = True
        self._maybe_finish(run)

    def _fail_descendants(self, run: _Run, name: str) -> None:
        stack = list(run.dag.children(name))
        while stack:
            child = run.jobs[stack.pop()]
            if child.written or child.state != JobState.QUEUED:
                continue
            child.state = JobState.FAILED
            child.stderr = f"not run: upstream job {name} failed\n"
            child.written = True
            stack.extend(run.dag.children(child.spec.name))

    def _maybe_finish(self, run: _Run) -> None:
        if run.state != WorkflowState.RUNNING or not all(j.written for j in run.jobs.values()):
            return
        ok = all(j.state == JobState.SUCCEEDED for j in run.jobs.values())
        run.state = WorkflowState.DONE if ok else WorkflowState.FAILED
        run.finished_at = self.clock.now
        log.info("workflow %s finished: %s", run.wms_wfid, run.state.value)
        for callback in list(run.listeners):
            callback(run.wms_wfid)

    # standalone execution ------------------------------------------------------

    def execute_job(
        self,
        job: JobSpec,
        vm: VirtualMachine,
        site: SiteConfig | None = None,
        instrumented: bool = False,
        tc: dict[str, str] | None = None,
    ) -> JobRecord:
        """Run one job on one VM outside any workflow, at the current virtual time."""
        if not self.cloud.is_running(vm.vm_id):
            raise VmNotRunning(vm.vm_id)
        site = site or SiteConfig()
        duration = job_duration(job, vm) + (self.config.instrumentation_delay_s if instrumented else 0.0)
        ok = ram_fits(job.ram_req_mb, vm.flavor, self.config.os_overhead_mb)
        stdout = HOST_LINE.format(ip=vm.ip, hostname=vm.nodename) + "\n" if instrumented else ""
        stderr = ""
        if ok:
            fn = kernels.resolve(job.executable, tc or {})
            try:
                inputs = {
                    lfn: self.objects.get_object(site.input_container, lfn)[0] for lfn in job.inputs
                }
                outputs, out = fn(job, inputs)
                for lfn in job.outputs:
                    self.objects.put_object(site.output_container, f"adhoc/{job.name}/{lfn}", outputs[lfn])
                stdout += out
            except (UnknownObject, ValueError, KeyError) as exc:
                ok, stderr = False, f"job failed: {exc}\n"
        else:
            stderr = f"job killed: requested {job.ram_req_mb} MB RAM on {vm.flavor.name}\n"
        condor_id = self._next_condor_id
        self._next_condor_id += 1
        job_id = self._next_job_id
        self._next_job_id += 1
        now = self.clock.now
        return JobRecord(
            job_id=job_id,
            wms_wfid="adhoc",
            name=job.name,
            condor_id=condor_id,
            state=JobState.SUCCEEDED if ok else JobState.FAILED,
            host_ip=vm.ip,
            start_time=now,
            end_time=now + duration,
            stdout_log=stdout,
            stderr_log=stderr,
            attempts=1,
        )

    # queries -------------------------------------------------------------------

    def _run(self, wms_wfid: str) -> _Run:
        try:
            return self._runs[wms_wfid]
        except KeyError:
            raise UnknownWorkflow(wms_wfid) from None

    def workflows(self) -> list[str]:
        return list(self._runs)

    def locate(self, wms_wfid: str, lfn: str) -> tuple[str, str]:
        """(container, keyname) of a logical file within a submission."""
        run = self._run(wms_wfid)
        if lfn in run.dag.producers():
            return run.site.output_container, f"{wms_wfid}/{lfn}"
        return run.site.input_container, lfn

    def get_dag(self, wms_wfid: str) -> WorkflowDAG:
        return self._run(wms_wfid).dag

    def get_site(self, wms_wfid: str) -> SiteConfig:
        return self._run(wms_wfid).site

    def is_instrumented(self, wms_wfid: str) -> bool:
        return self._run(wms_wfid).instrumented

    def _record(self, run: _Run, jr: _JobRun) -> JobRecord:
        if jr.written:
            state, end = jr.state, jr.end
        elif jr.state in (JobState.SUCCEEDED, JobState.FAILED):
            # finished on the pool but not yet flushed to the database
            state, end = JobState.RUNNING, None
        else:
            state, end = jr.state, None
        return JobRecord(
            job_id=jr.job_id,
            wms_wfid=run.wms_wfid,
            name=jr.spec.name,
            condor_id=jr.condor_id,
            state=state,
            host_ip=jr.host_ip if jr.written else None,
            start_time=jr.start,
            end_time=end,
            stdout_log=jr.stdout if jr.written else "",
            stderr_log=jr.stderr if jr.written else "",
            attempts=jr.attempts,
        )

    def get_job_records(self, wms_wfid: str) -> list[JobRecord]:
        run = self._run(wms_wfid)
        return [self._record(run, jr) for jr in run.jobs.values()]

    def get_workflow_state(self, wms_wfid: str) -> WorkflowState:
        return self._run(wms_wfid).state

    def result(self, wms_wfid: str) -> WmsRunResult:
        run = self._run(wms_wfid)
        records = tuple(self.get_job_records(wms_wfid))
        starts = [r.start_time for r in records if r.start_time is not None]
        ends = [r.end_time for r in records if r.end_time is not None]
        makespan = (max(ends) - min(starts)) if starts and ends else 0.0
        return WmsRunResult(run.wms_wfid, makespan, records, run.submit_output)

    def on_finished(self, wms_wfid: str, callback: Callable[[str], None]) -> None:
        run = self._run(wms_wfid)
        if run.state != WorkflowState.RUNNING:
            callback(wms_wfid)
        else:
            run.listeners.append(callback)

    def get_file(self, wms_wfid: str, job: str | None, kind: str) -> str:
        run = self._run(wms_wfid)
        if kind == "submit_output":
            return run.submit_output
        if kind not in ("stdout", "stderr"):
            raise ValueError(f"unknown file kind {kind!r}")
        if job not in run.jobs:
            raise UnknownJob(f"{wms_wfid}/{job}")
        rec = self._record(run, run.jobs[job])
        return rec.stdout_log if kind == "stdout" else rec.stderr_log

    def condor_lookup(self, condor_id: int) -> dict:
        entry = self._condor.get(condor_id)
        if entry is None:
            raise NotRunning(str(condor_id))
        run, jr = entry
        vm = self.cloud.get_vm(jr.vm_id)
        return {
            "state": "RUNNING",
            "host_ip": vm.ip,
            "nodename": vm.nodename,
            "wms_wfid": run.wms_wfid,
            "job": jr.spec.name,
        }

    def pool_mips(self) -> dict[str, tuple[int, int]]:
        return {vm.nodename: (vm.cpu_spec.mips, vm.cpu_spec.kflops) for vm in self.cloud.list_vms()}
