"""Workflow description files: the DAG file, site file, transformation catalog and properties.

DAG file (JSON, standing in for a Pegasus DAX)::

    {
      "name": "wordcount",
      "jobs": [
        {"name": "split", "executable": "wordcount.split",
         "fixed_duration_s": 120, "ram_req_mb": 100,
         "inputs": ["input.txt"], "outputs": ["part1.txt", "part2.txt"]},
        ...
      ],
      "edges": [["split", "analysis1"], ...]
    }

Each job sets exactly one of ``length_mi`` (compute mode, million
instructions) or ``fixed_duration_s`` (sleep mode).  Files are logical
names; the site file decides which container they live in.

Site file (JSON)::

    {"input_container": "wf-inputs", "output_container": "wf-outputs",
     "wms_profile": "full"}

Transformation catalog: one ``<executable> <kernel>`` pair per line.
Properties: ``key = value`` lines.  ``#`` starts a comment in both.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from graphlib import CycleError, TopologicalSorter

from .errors import CyclicDag, InvalidDag

WMS_PROFILES = ("full", "no_host_info", "volatile")


@dataclass(frozen=True)
class JobSpec:
    name: str
    length_mi: float | None = None
    fixed_duration_s: float | None = None
    ram_req_mb: int = 0
    max_parallelism: int = 1
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    args: tuple[str, ...] = ()
    executable: str = "synthetic"

    def __post_init__(self):
        if (self.length_mi is None) == (self.fixed_duration_s is None):
            raise InvalidDag(f"job {self.name!r}: set exactly one of length_mi / fixed_duration_s")
        amount = self.length_mi if self.length_mi is not None else self.fixed_duration_s
        if amount < 0:
            raise InvalidDag(f"job {self.name!r}: negative work")
        if self.max_parallelism < 1:
            raise InvalidDag(f"job {self.name!r}: max_parallelism must be >= 1")
        if self.ram_req_mb < 0:
            raise InvalidDag(f"job {self.name!r}: negative ram_req_mb")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        for key in ("inputs", "outputs", "args"):
            d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class WorkflowDAG:
    jobs: tuple[JobSpec, ...]
    edges: tuple[tuple[str, str], ...] = ()
    name: str = "workflow"

    def __post_init__(self):
        names = [j.name for j in self.jobs]
        if len(set(names)) != len(names):
            raise InvalidDag("duplicate job names")
        known = set(names)
        for parent, child in self.edges:
            if parent not in known or child not in known:
                raise InvalidDag(f"edge ({parent}, {child}) references an undeclared job")
            if parent == child:
                raise CyclicDag(f"self-edge on {parent}")
        try:
            tuple(self._sorter().static_order())
        except CycleError as exc:
            raise CyclicDag(" -> ".join(map(str, exc.args[1]))) from None

    def _sorter(self) -> TopologicalSorter:
        ts = TopologicalSorter({j.name: () for j in self.jobs})
        for parent, child in self.edges:
            ts.add(child, parent)
        return ts

    def job(self, name: str) -> JobSpec:
        for j in self.jobs:
            if j.name == name:
                return j
        raise KeyError(name)

    def parents(self, name: str) -> list[str]:
        return [p for p, c in self.edges if c == name]

    def children(self, name: str) -> list[str]:
        return [c for p, c in self.edges if p == name]

    def topological_order(self) -> list[str]:
        return list(self._sorter().static_order())

    def producers(self) -> dict[str, str]:
        """Logical file name -> job producing it."""
        return {lfn: j.name for j in self.jobs for lfn in j.outputs}


def _job_from_dict(d: dict) -> JobSpec:
    if "name" not in d:
        raise InvalidDag("job without a name")
    allowed = set(JobSpec.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise InvalidDag(f"job {d['name']!r}: unknown fields {sorted(unknown)}")
    kwargs = dict(d)
    for key in ("inputs", "outputs", "args"):
        if key in kwargs:
            kwargs[key] = tuple(str(x) for x in kwargs[key])
    try:
        return JobSpec(**kwargs)
    except TypeError as exc:
        raise InvalidDag(str(exc)) from None


def parse_dag(text: str) -> WorkflowDAG:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidDag(f"DAG file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "jobs" not in doc:
        raise InvalidDag("DAG file needs a 'jobs' list")
    jobs = tuple(_job_from_dict(j) for j in doc["jobs"])
    try:
        edges = tuple((str(p), str(c)) for p, c in doc.get("edges", []))
    except (TypeError, ValueError):
        raise InvalidDag("edges must be [parent, child] pairs") from None
    return WorkflowDAG(jobs=jobs, edges=edges, name=str(doc.get("name", "workflow")))


def dump_dag(dag: WorkflowDAG) -> str:
    doc = {
        "name": dag.name,
        "jobs": [j.to_dict() for j in dag.jobs],
        "edges": [list(e) for e in dag.edges],
    }
    return json.dumps(doc, indent=2) + "\n"


@dataclass(frozen=True)
class SiteConfig:
    input_container: str = "wf-inputs"
    output_container: str = "wf-outputs"
    wms_profile: str = "full"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.wms_profile not in WMS_PROFILES:
            raise InvalidDag(f"unknown wms_profile {self.wms_profile!r}")


def parse_site(text: str) -> SiteConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidDag(f"site file is not valid JSON: {exc}") from None
    known = {k: doc.pop(k) for k in ("input_container", "output_container", "wms_profile") if k in doc}
    return SiteConfig(**known, extra=doc)


def dump_site(site: SiteConfig) -> str:
    doc = {
        "input_container": site.input_container,
        "output_container": site.output_container,
        "wms_profile": site.wms_profile,
        **site.extra,
    }
    return json.dumps(doc, indent=2) + "\n"


def _kv_lines(text: str, sep: str | None):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if sep is None:
            parts = line.split(None, 1)
        else:
            parts = [p.strip() for p in line.split(sep, 1)]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise InvalidDag(f"cannot parse line {raw!r}")
        yield parts[0], parts[1]


def parse_tc(text: str) -> dict[str, str]:
    return dict(_kv_lines(text, None))


def parse_props(text: str) -> dict[str, str]:
    return dict(_kv_lines(text, "="))
