"""Re-provision captured infrastructure and re-run a stored workflow.

A plan holds one resource request per distinct original VM.  Executing it
provisions ``<nodename>-rep`` VMs with the same flavor and image id, pins
every job to the replacement of the VM it originally ran on, and submits
the stored workflow files again.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping

from .dax import WorkflowDAG, dump_site, parse_dag, parse_site
from .errors import IncompleteProvenance, NameInUse, RecapError
from .store import Store, WorkflowSource
from .wms import SchedulingPolicy

if TYPE_CHECKING:
    from .core import Recap

SUFFIX = "-rep"


@dataclass(frozen=True)
class ResourceRequest:
    original_nodename: str
    nodename: str
    flavor_id: int
    flavor_name: str
    image_id: str
    image_name: str
    jobs: tuple[str, ...]


@dataclass(frozen=True)
class ReplayPlan:
    source_wf_id: int
    source: WorkflowSource
    dag: WorkflowDAG
    requests: tuple[ResourceRequest, ...]
    instrumented: bool = False

    def pins(self) -> dict[str, str]:
        return {job: req.nodename for req in self.requests for job in req.jobs}


@dataclass(frozen=True)
class ReplayResult:
    wf_id: int
    wms_wfid: str
    nodenames: tuple[str, ...]


def build_plan(store: Store, wf_id: int, suffix: str = SUFFIX) -> ReplayPlan:
    source = store.get_source(wf_id)
    run = store.get_run(wf_id)
    dag = parse_dag(source.wf_dag)
    caps = store.get_cap(wf_id)
    mapped = {r.job_name for r in caps}
    missing = [j.name for j in dag.jobs if j.name not in mapped]
    if run.unmapped or missing:
        names = sorted(set(missing) | {u[0] for u in run.unmapped})
        raise IncompleteProvenance(f"workflow {wf_id} has unmapped jobs: {', '.join(names)}")

    # one request per distinct (nodename, flavor, image); a nodename reused by
    # different VMs over time gets a numbered replacement
    groups: dict[tuple, list[str]] = {}
    for rec in caps:
        groups.setdefault((rec.nodename, rec.flavor_id, rec.flavor_name, rec.image_id, rec.image_name), []).append(
            rec.job_name
        )
    requests = []
    seen: dict[str, int] = {}
    for (node, fid, fname, iid, iname), jobs in groups.items():
        seen[node] = seen.get(node, 0) + 1
        name = node + suffix + ("" if seen[node] == 1 else f"-{seen[node]}")
        requests.append(ResourceRequest(node, name, fid, fname, iid, iname, tuple(jobs)))
    return ReplayPlan(wf_id, source, dag, tuple(requests), run.instrumented)


def _flavor_for(req: ResourceRequest, override: str | int | Mapping[str, str | int] | None):
    if override is None:
        return req.flavor_id
    if isinstance(override, Mapping):
        return override.get(req.original_nodename, override.get(req.nodename, req.flavor_id))
    return override


def execute_replay(
    recap: "Recap",
    plan: ReplayPlan,
    flavor_override: str | int | Mapping[str, str | int] | None = None,
    input_container: str | None = None,
    strategy: str | None = None,
    run: bool = True,
) -> ReplayResult:
    """Provision the plan's VMs, resubmit the stored files, optionally run and aggregate."""
    cloud = recap.cloud
    with recap.lock:
        # resolve everything up front so catalog drift fails before any VM exists
        resolved = [
            (req, cloud.get_flavor(_flavor_for(req, flavor_override)), cloud.get_image(req.image_id))
            for req in plan.requests
        ]
        provisioned = []
        actual: dict[str, str] = {}
        try:
            for req, flavor, image in resolved:
                name, n = req.nodename, 1
                while True:
                    try:
                        vm = cloud.provision(flavor.flavor_id, image.image_id, name)
                        break
                    except NameInUse:
                        n += 1
                        name = f"{req.nodename}-{n}"
                provisioned.append(vm)
                actual[req.nodename] = name
            pins = {job: actual[node] for job, node in plan.pins().items()}
            site_text = plan.source.wf_site
            if input_container is not None:
                site_text = dump_site(replace(parse_site(site_text), input_container=input_container))
            policy = SchedulingPolicy(lifecycle="static", pool=tuple(actual.values()), pin=pins)
            sub = recap.submit(
                plan.source.wf_dag,
                site_text,
                plan.source.wf_tc,
                plan.source.wf_props,
                instrumented=plan.instrumented,
                policy=policy,
                strategy=strategy,
                replay_of=plan.source_wf_id,
            )
        except RecapError:
            for vm in provisioned:
                cloud.destroy(vm.vm_id)
            raise
    if run:
        recap.run_workflow(sub.wf_id)
    return ReplayResult(sub.wf_id, sub.wms_wfid, tuple(actual.values()))
