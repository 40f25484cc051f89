"""Reproducibility verdicts: workflow structure, execution infrastructure and outputs.

Each check is a pure function of two workflows' stored provenance.  A
run counts as REPRODUCED only when all three come out EQUAL.
"""

from __future__ import annotations

import json
import posixpath
from dataclasses import asdict, dataclass, field
from enum import Enum

from .dax import parse_dag
from .errors import IncompleteProvenance
from .store import Store


class Status(str, Enum):
    EQUAL = "EQUAL"
    DIFFERENT = "DIFFERENT"
    INCOMPARABLE = "INCOMPARABLE"


INFRA_FIELDS = ("flavor_id", "min_ram_mb", "min_hd_gb", "min_cpu", "image_id")


@dataclass
class ComponentResult:
    status: Status
    details: list[dict] = field(default_factory=list)

    @property
    def equal(self) -> bool:
        return self.status == Status.EQUAL


@dataclass
class ComparisonReport:
    wf_a: int
    wf_b: int
    structure: ComponentResult
    infrastructure: ComponentResult
    outputs: ComponentResult
    unmapped_a: int = 0
    unmapped_b: int = 0

    @property
    def verdict(self) -> str:
        parts = (self.structure, self.infrastructure, self.outputs)
        return "REPRODUCED" if all(p.equal for p in parts) else "NOT_REPRODUCED"

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("structure", "infrastructure", "outputs"):
            doc[key]["status"] = getattr(self, key).status.value
        doc["verdict"] = self.verdict
        return doc

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def structure_of(store: Store, wf_id: int) -> tuple[set[str], set[tuple[str, str]]]:
    dag = parse_dag(store.get_source(wf_id).wf_dag)
    return {j.name for j in dag.jobs}, set(dag.edges)


def compare_structure(store: Store, wf_a: int, wf_b: int) -> ComponentResult:
    jobs_a, edges_a = structure_of(store, wf_a)
    jobs_b, edges_b = structure_of(store, wf_b)
    details = []
    for label, diff in (
        ("job_only_in_a", sorted(jobs_a - jobs_b)),
        ("job_only_in_b", sorted(jobs_b - jobs_a)),
        ("edge_only_in_a", sorted(edges_a - edges_b)),
        ("edge_only_in_b", sorted(edges_b - edges_a)),
    ):
        details.extend({"kind": label, "item": list(item) if isinstance(item, tuple) else item} for item in diff)
    return ComponentResult(Status.EQUAL if not details else Status.DIFFERENT, details)


def compare_infrastructure(store: Store, wf_a: int, wf_b: int) -> ComponentResult:
    caps_a = {r.job_name: r for r in store.get_cap(wf_a)}
    caps_b = {r.job_name: r for r in store.get_cap(wf_b)}
    if not caps_a or not caps_b:
        empty = [wf for wf, caps in ((wf_a, caps_a), (wf_b, caps_b)) if not caps]
        raise IncompleteProvenance(f"no CAP records for workflow(s) {empty}")
    details = []
    for job in sorted(caps_a.keys() | caps_b.keys()):
        a, b = caps_a.get(job), caps_b.get(job)
        if a is None or b is None:
            details.append({"job": job, "field": "mapping", "a": a is not None, "b": b is not None})
            continue
        for name in INFRA_FIELDS:
            va, vb = getattr(a, name), getattr(b, name)
            if va != vb:
                details.append({"job": job, "field": name, "a": va, "b": vb})
    return ComponentResult(Status.EQUAL if not details else Status.DIFFERENT, details)


def compare_outputs(store: Store, wf_a: int, wf_b: int) -> ComponentResult:
    def outputs(wf_id: int) -> dict[tuple[str, str], str]:
        return {
            (f.job_name, posixpath.basename(f.keyname)): f.md5
            for f in store.get_job_files(wf_id, direction="out")
        }

    out_a, out_b = outputs(wf_a), outputs(wf_b)
    details = []
    for key in sorted(out_a.keys() | out_b.keys()):
        a, b = out_a.get(key), out_b.get(key)
        if a != b:
            details.append({"job": key[0], "file": key[1], "a": a, "b": b})
    if not out_a or not out_b or out_a.keys() != out_b.keys():
        return ComponentResult(Status.INCOMPARABLE, details)
    return ComponentResult(Status.EQUAL if not details else Status.DIFFERENT, details)


def compare(store: Store, wf_a: int, wf_b: int) -> ComparisonReport:
    return ComparisonReport(
        wf_a=wf_a,
        wf_b=wf_b,
        structure=compare_structure(store, wf_a, wf_b),
        infrastructure=compare_infrastructure(store, wf_a, wf_b),
        outputs=compare_outputs(store, wf_a, wf_b),
        unmapped_a=len(store.get_run(wf_a).unmapped),
        unmapped_b=len(store.get_run(wf_b).unmapped),
    )
