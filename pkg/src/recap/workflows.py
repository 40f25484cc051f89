"""Ready-made workflows: Wordcount, a Montage-shaped mosaic, ReconAll and random DAGs.

Edges are derived from file flow: a job depends on whichever job
produces one of its inputs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .cloud import ObjectStore
from .dax import JobSpec, SiteConfig, WorkflowDAG, dump_dag, dump_site

DEFAULT_TC = (
    "# executable  kernel\n"
    "wordcount.split  wordcount.split\n"
    "wordcount.count  wordcount.count\n"
    "wordcount.merge  wordcount.merge\n"
    "synthetic  synthetic\n"
)

DEFAULT_PROPS = (
    "pegasus.catalog.site = file\n"
    "pegasus.data.configuration = nonsharedfs\n"
    "dagman.retry = 1\n"
)


@dataclass(frozen=True)
class WorkflowFiles:
    """The four texts a submission carries."""

    dag: str
    site: str
    tc: str = DEFAULT_TC
    props: str = DEFAULT_PROPS


def bundle(dag: WorkflowDAG, site: SiteConfig | None = None, tc: str = DEFAULT_TC,
           props: str = DEFAULT_PROPS) -> WorkflowFiles:
    return WorkflowFiles(dump_dag(dag), dump_site(site or SiteConfig()), tc, props)


def from_file_flow(name: str, jobs: list[JobSpec]) -> WorkflowDAG:
    producers = {lfn: j.name for j in jobs for lfn in j.outputs}
    edges = []
    for j in jobs:
        for parent in dict.fromkeys(producers[lfn] for lfn in j.inputs if lfn in producers):
            edges.append((parent, j.name))
    return WorkflowDAG(jobs=tuple(jobs), edges=tuple(edges), name=name)


# Wordcount ----------------------------------------------------------------------

SLEEP_SECONDS = {"split": 120.0, "analysis1": 120.0, "analysis2": 60.0, "merge": 60.0}
COMPUTE_MI = {"split": 1_250_000, "analysis1": 2_500_000, "analysis2": 1_250_000, "merge": 625_000}


def wordcount(mode: str = "sleep", ram_req_mb: int = 0, max_parallelism: int = 1) -> WorkflowDAG:
    """split -> {analysis1, analysis2} -> merge.

    ``sleep`` mode gives the jobs fixed durations (120/120/60/60 s);
    ``compute`` mode gives them instruction counts instead.
    """
    if mode not in ("sleep", "compute"):
        raise ValueError(f"unknown wordcount mode {mode!r}")

    def work(name: str) -> dict:
        if mode == "sleep":
            return {"fixed_duration_s": SLEEP_SECONDS[name]}
        return {"length_mi": COMPUTE_MI[name], "max_parallelism": max_parallelism}

    common = {"ram_req_mb": ram_req_mb}
    jobs = [
        JobSpec("split", executable="wordcount.split", inputs=("input.txt",),
                outputs=("part1.txt", "part2.txt"), **work("split"), **common),
        JobSpec("analysis1", executable="wordcount.count", inputs=("part1.txt",),
                outputs=("count1.txt",), **work("analysis1"), **common),
        JobSpec("analysis2", executable="wordcount.count", inputs=("part2.txt",),
                outputs=("count2.txt",), **work("analysis2"), **common),
        JobSpec("merge", executable="wordcount.merge", inputs=("count1.txt", "count2.txt"),
                outputs=("total.txt",), **work("merge"), **common),
    ]
    return from_file_flow("wordcount", jobs)


def wordcount_input(seed: int = 0, words: int = 2000) -> bytes:
    rng = random.Random(seed)
    vocab = ["cloud", "provenance", "workflow", "replay", "job", "image", "flavor", "mapping",
             "condor", "pegasus", "virtual", "machine", "result", "input", "output", "data"]
    lines = []
    for start in range(0, words, 12):
        lines.append(" ".join(rng.choice(vocab) for _ in range(min(12, words - start))))
    return ("\n".join(lines) + "\n").encode()


# Montage-shaped mosaic -------------------------------------------------------------

MONTAGE_INPUTS = tuple(f"2mass-{i}.fits" for i in range(1, 9))
MONTAGE_OUTPUTS = ("mosaic.fits", "mosaic_area.fits", "shrunken.fits", "mosaic.jpg")


def montage(tile_seconds: float = 6.0) -> WorkflowDAG:
    """35 jobs over eight input tiles, producing four final files."""
    jobs: list[JobSpec] = []
    d = tile_seconds
    n = len(MONTAGE_INPUTS)
    for i, tile in enumerate(MONTAGE_INPUTS, 1):
        jobs.append(JobSpec(f"mProjectPP_{i}", fixed_duration_s=d, inputs=(tile,), outputs=(f"proj_{i}.fits",)))
    pairs = [(i, i + 1) for i in range(1, n)] + [(i, i + 2) for i in range(1, n - 1)]
    for k, (a, b) in enumerate(pairs, 1):
        jobs.append(JobSpec(f"mDiffFit_{k}", fixed_duration_s=d / 2,
                            inputs=(f"proj_{a}.fits", f"proj_{b}.fits"), outputs=(f"fit_{k}.txt",)))
    fits = tuple(f"fit_{k}.txt" for k in range(1, len(pairs) + 1))
    jobs.append(JobSpec("mConcatFit", fixed_duration_s=d, inputs=fits, outputs=("fits.tbl",)))
    jobs.append(JobSpec("mBgModel", fixed_duration_s=2 * d, inputs=("fits.tbl",), outputs=("corrections.tbl",)))
    for i in range(1, n + 1):
        jobs.append(JobSpec(f"mBackground_{i}", fixed_duration_s=d,
                            inputs=(f"proj_{i}.fits", "corrections.tbl"), outputs=(f"corr_{i}.fits",)))
    corr = tuple(f"corr_{i}.fits" for i in range(1, n + 1))
    jobs.append(JobSpec("mImgtbl", fixed_duration_s=d / 2, inputs=corr, outputs=("images.tbl",)))
    jobs.append(JobSpec("mAdd", fixed_duration_s=4 * d, inputs=("images.tbl", *corr),
                        outputs=("mosaic.fits", "mosaic_area.fits")))
    jobs.append(JobSpec("mShrink", fixed_duration_s=d, inputs=("mosaic.fits",), outputs=("shrunken.fits",)))
    jobs.append(JobSpec("mJPEG", fixed_duration_s=d, inputs=("shrunken.fits",), outputs=("mosaic.jpg",)))
    return from_file_flow("montage", jobs)


# ReconAll -----------------------------------------------------------------------

def reconall(length_mi: float = 400_000_000, max_parallelism: int = 2) -> WorkflowDAG:
    """One long compute job over a single MRI scan."""
    job = JobSpec("recon-all", length_mi=length_mi, max_parallelism=max_parallelism, ram_req_mb=1500,
                  inputs=("subject.nii",), outputs=("subject-recon.tar",), args=("-all",))
    return WorkflowDAG(jobs=(job,), name="reconall")


# random DAGs ----------------------------------------------------------------------

def random_dag(seed: int, max_jobs: int = 35, edge_p: float = 0.3, name: str = "random") -> WorkflowDAG:
    """Layer-free random DAG: each job may depend on any earlier one."""
    rng = random.Random(seed)
    n = rng.randint(1, max_jobs)
    jobs = []
    for i in range(n):
        parents = [p for p in range(i) if rng.random() < edge_p]
        work = ({"fixed_duration_s": float(rng.randint(1, 120))} if rng.random() < 0.5
                else {"length_mi": float(rng.randint(10_000, 2_000_000))})
        jobs.append(JobSpec(
            f"job{i:02d}",
            inputs=tuple(f"job{p:02d}.out" for p in parents) or (f"seed{i:02d}.in",),
            outputs=(f"job{i:02d}.out",),
            **work,
        ))
    return from_file_flow(f"{name}{seed}", jobs)


# staging -----------------------------------------------------------------------------

def external_inputs(dag: WorkflowDAG) -> list[str]:
    """Logical files the DAG reads but never produces."""
    produced = dag.producers()
    return sorted({lfn for j in dag.jobs for lfn in j.inputs if lfn not in produced})


def stage_files(objects: ObjectStore, lfns: list[str], container: str, seed: int = 0,
                contents: dict[str, bytes] | None = None) -> dict[str, str]:
    """Upload the given logical files, returning lfn -> md5.

    Content comes from ``contents`` when given, otherwise it is generated
    deterministically from the name and seed.
    """
    contents = contents or {}
    digests = {}
    for lfn in lfns:
        if lfn in contents:
            data = contents[lfn]
        elif lfn == "input.txt":
            data = wordcount_input(seed)
        else:
            data = f"{lfn} seed={seed}\n".encode()
        digests[lfn] = objects.put_object(container, lfn, data).md5
    return digests


def stage_inputs(objects: ObjectStore, dag: WorkflowDAG, site: SiteConfig | None = None,
                 seed: int = 0, contents: dict[str, bytes] | None = None) -> dict[str, str]:
    """Upload every external input of the DAG."""
    site = site or SiteConfig()
    return stage_files(objects, external_inputs(dag), site.input_container, seed, contents)
