"""Named experiments reproducing the resource-configuration and overhead studies.

Each experiment returns its rows plus a small summary and can write the
rows to CSV.  Everything runs on fresh in-memory simulations, so results
are deterministic for a given seed.
"""

from __future__ import annotations

import csv
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .core import Recap
from .dax import JobSpec, SiteConfig
from .scenario import PoolVm, Scenario, load_scenario
from .wms import JobState, SchedulingPolicy
from .workflows import bundle, stage_inputs, wordcount

RAM_LEVELS = (100, 200, 300, 400, 450, 500, 600, 700)
RAM_FLAVORS = ("m1.tiny", "m1.small", "m1.medium")
MIPS_FACTORS = (0.5, 1, 2, 4)
BASE_MIPS = (12500, 13000)


@dataclass
class ExperimentResult:
    name: str
    rows: list[dict]
    summary: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            writer.writeheader()
            writer.writerows(self.rows)
        return path


def _static_pool(base: Scenario, vms: list[tuple[str, str, int | None]], mips: dict | None = None) -> Scenario:
    pool = tuple(
        PoolVm(nodename=name, flavor=flavor, image=base.images[0].name, mips=m) for name, flavor, m in vms
    )
    return base.with_(lifecycle="static", pool=pool, mips=mips if mips is not None else base.mips)


def wordcount_makespan(scenario: Scenario, dag=None, policy: SchedulingPolicy | None = None,
                       instrumented: bool = False, strategy: str | None = "static") -> float:
    """Submit one Wordcount run and return its makespan; strategy None skips provenance capture."""
    dag = dag or wordcount("compute")
    recap = Recap(scenario, strategy=strategy or "static")
    if strategy is None:
        stage_inputs(recap.objects, dag)
        wms_wfid = recap.wms.plan_and_submit(dag, SiteConfig(), policy or scenario.policy(), instrumented=instrumented)
        recap.clock.run()
        return recap.wms.result(wms_wfid).makespan_s
    files = bundle(dag)
    sub = recap.submit(files.dag, files.site, files.tc, files.props, instrumented=instrumented, policy=policy)
    recap.run_workflow(sub.wf_id)
    return recap.wms.result(sub.wms_wfid).makespan_s


def ram_sweep(runs: int = 5, os_overhead_mb: int = 64, seed: int = 0) -> ExperimentResult:
    base = load_scenario("default")
    scenario = base.with_(wms={**base.wms, "os_overhead_mb": os_overhead_mb}, pool=(), seed=seed)
    tb = scenario.build()
    vms = {f: tb.cloud.provision(f, base.images[0].name, f"ram-{f}") for f in RAM_FLAVORS}
    rows = []
    for flavor in RAM_FLAVORS:
        for ram in RAM_LEVELS:
            for run in range(runs):
                job = JobSpec(f"ram{ram}-{run}", fixed_duration_s=10.0, ram_req_mb=ram)
                rec = tb.wms.execute_job(job, vms[flavor])
                rows.append({"flavor": flavor, "ram_req_mb": ram, "run": run, "state": rec.state.value})
    summary: dict = {"os_overhead_mb": os_overhead_mb}
    for flavor in RAM_FLAVORS:
        failing = [r["ram_req_mb"] for r in rows if r["flavor"] == flavor and r["state"] == JobState.FAILED.value]
        summary[flavor] = {"failures": len(failing), "onset_mb": min(failing) if failing else None}
    return ExperimentResult("ram-sweep", rows, summary)


def mips_sweep(runs: int = 20, seed: int = 0) -> ExperimentResult:
    base = load_scenario("default")
    rows = []
    scaled = {}
    for k in MIPS_FACTORS:
        values = [int(m * k) for m in BASE_MIPS]
        sc = _static_pool(base, [("vm1", "m1.small", values[0]), ("vm2", "m1.small", values[1])])
        scaled[k] = wordcount_makespan(sc)
        rows.append({"series": "scaled", "param": k, "seed": "", "makespan_s": scaled[k]})
    populations = {"12500+-1500": (12500, 1500), "10500+-4500": (10500, 4500)}
    means = {}
    for label, (center, spread) in populations.items():
        spans = []
        for s in range(seed, seed + runs):
            mips = {"mode": "uniform", "center": center, "spread": spread}
            sc = _static_pool(base, [("vm1", "m1.small", None), ("vm2", "m1.small", None)], mips).with_(seed=s)
            spans.append(wordcount_makespan(sc))
            rows.append({"series": label, "param": center, "seed": s, "makespan_s": spans[-1]})
        means[label] = statistics.fmean(spans)
    summary = {
        "scaled_makespan": scaled,
        "exact_inverse_scaling": all(scaled[k] == scaled[1] / k for k in MIPS_FACTORS),
        "mean_makespan": means,
    }
    return ExperimentResult("mips-sweep", rows, summary)


def flavor_sweep(runs: int = 5, seed: int = 0) -> ExperimentResult:
    """Dynamic provisioning per job with Tiny, Small or randomly drawn flavors."""
    base = load_scenario("default")
    dag = wordcount("compute", max_parallelism=4)
    rows = []
    means = {}
    drawn: Counter = Counter()
    for label, flavor in (("Tiny", "m1.tiny"), ("Small", "m1.small"), ("Random", "random-flavor")):
        spans = []
        for s in range(seed, seed + runs):
            sc = base.with_(lifecycle="dynamic", pool=(), seed=s,
                            dynamic={**base.dynamic, "flavor": flavor})
            recap = Recap(sc, strategy="eager")
            files = bundle(dag)
            sub = recap.submit(files.dag, files.site, files.tc, files.props)
            recap.run_workflow(sub.wf_id)
            spans.append(recap.wms.result(sub.wms_wfid).makespan_s)
            used = Counter(c.flavor_name for c in recap.store.get_cap(sub.wf_id))
            if label == "Random":
                drawn.update(used)
            rows.append({"config": label, "seed": s, "makespan_s": spans[-1],
                         "flavors": ";".join(f"{k}={v}" for k, v in sorted(used.items()))})
        means[label] = statistics.fmean(spans)
    return ExperimentResult("flavor-sweep", rows, {"mean_makespan": means, "random_flavor_mix": dict(drawn)})


def overhead(runs: int = 1) -> ExperimentResult:
    base = load_scenario("default")
    sc = _static_pool(base, [("vm1", "m1.small", 12500), ("vm2", "m1.small", 12500)])
    dag = wordcount("sleep")
    rows = []
    spans = {}
    for label, strategy, instrumented in (
        ("none", None, False),
        ("static", "static", False),
        ("eager", "eager", False),
        ("lazy", "lazy", False),
        ("snohi", "snohi", True),
    ):
        for run in range(runs):
            spans[label] = wordcount_makespan(sc, dag, instrumented=instrumented, strategy=strategy)
            rows.append({"mapping": label, "run": run, "makespan_s": spans[label]})
    summary = {"makespan": spans, "snohi_delta_s": spans["snohi"] - spans["none"]}
    return ExperimentResult("overhead", rows, summary)


def replay_roundtrip(seed: int = 0) -> ExperimentResult:
    recap = Recap("testbed", strategy="static", input_seed=seed)
    files = bundle(wordcount("sleep"))
    sub = recap.submit(files.dag, files.site, files.tc, files.props)
    recap.run_workflow(sub.wf_id)
    rep = recap.reproduce(sub.wf_id)
    report = recap.compare(sub.wf_id, rep.wf_id)
    rows = []
    for wf in (sub.wf_id, rep.wf_id):
        for cap in recap.store.get_cap(wf):
            rows.append({
                "wf_id": wf, "job": cap.job_name, "nodename": cap.nodename, "flavor_id": cap.flavor_id,
                "ram_mb": cap.min_ram_mb, "hd_gb": cap.min_hd_gb, "vcpu": cap.min_cpu,
                "image_name": cap.image_name, "image_id": cap.image_id,
            })
    summary = {
        "original": sub.wf_id,
        "replay": rep.wf_id,
        "verdict": report.verdict,
        "makespan": [recap.store.get_run(sub.wf_id).makespan_s, recap.store.get_run(rep.wf_id).makespan_s],
    }
    return ExperimentResult("replay-roundtrip", rows, summary)


EXPERIMENTS: dict[str, Callable[..., ExperimentResult]] = {
    "ram-sweep": ram_sweep,
    "mips-sweep": mips_sweep,
    "flavor-sweep": flavor_sweep,
    "overhead": overhead,
    "replay-roundtrip": replay_roundtrip,
}


def run_experiment(name: str, out_dir: str | Path | None = None) -> tuple[ExperimentResult, Path | None]:
    try:
        fn = EXPERIMENTS[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}") from None
    result = fn()
    path = result.write_csv(Path(out_dir) / f"{name}.csv") if out_dir is not None else None
    return result, path
