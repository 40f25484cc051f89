"""The in-process toolkit: cloud, WMS, store and mappers wired together.

:class:`Recap` is what the wrapper service and the CLI drive.  Every
public method takes the instance lock, so HTTP handlers on different
threads see one consistent simulation.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Mapping

from . import dax
from .compare import ComparisonReport, compare
from .errors import ConfigError, MissingSourceFile, UnknownWorkflow
from .mappers import DEFAULT_POLL_S, STRATEGIES, Mapper, MappingOutcome, Monitor, aggregate, make_mapper
from .replay import ReplayResult, build_plan, execute_replay
from .scenario import Scenario, load_scenario
from .store import Store
from .wms import SchedulingPolicy, WorkflowState
from .workflows import external_inputs, stage_files

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Submission:
    wf_id: int
    wms_wfid: str


class Recap:
    def __init__(
        self,
        scenario: Scenario | str = "default",
        store: Store | None = None,
        strategy: str = "static",
        poll_s: float = DEFAULT_POLL_S,
        auto_aggregate: bool = True,
        stage_missing_inputs: bool = True,
        input_seed: int = 0,
    ):
        self.scenario = load_scenario(scenario) if isinstance(scenario, str) else scenario
        self.testbed = self.scenario.build()
        self.clock = self.testbed.clock
        self.cloud = self.testbed.cloud
        self.objects = self.testbed.objects
        self.wms = self.testbed.wms
        self.store = store or Store()
        self.strategy = strategy
        self.poll_s = poll_s
        self.auto_aggregate = auto_aggregate
        self.stage_missing_inputs = stage_missing_inputs
        self.input_seed = input_seed
        self.lock = threading.RLock()
        self._mappers: dict[int, Mapper] = {}
        self._monitors: dict[int, Monitor] = {}
        self._wms_ids: dict[int, str] = {}

    @classmethod
    def from_config(cls, cfg) -> "Recap":
        return cls(
            scenario=cfg.scenario_ref(),
            store=Store(cfg.store_path()),
            strategy=cfg.mapping_type,
            poll_s=cfg.poll_interval,
        )

    # submission ------------------------------------------------------------------

    def submit(
        self,
        dag_text: str | bytes | None,
        site_text: str | bytes | None,
        tc_text: str | bytes | None,
        props_text: str | bytes | None,
        instrumented: bool = False,
        policy: SchedulingPolicy | None = None,
        strategy: str | None = None,
        replay_of: int | None = None,
    ) -> Submission:
        """Register the files, plan the DAG and start its monitor; all or nothing."""
        texts = []
        for label, value in (("dag", dag_text), ("site", site_text), ("tc", tc_text), ("props", props_text)):
            if value is None or len(value) == 0:
                raise MissingSourceFile(f"{label} file missing or empty")
            texts.append(value.decode("utf-8") if isinstance(value, bytes) else value)
        dag_s, site_s, tc_s, props_s = texts
        strategy = (strategy or self.strategy).lower()
        with self.lock:
            dag = dax.parse_dag(dag_s)
            site = dax.parse_site(site_s)
            tc = dax.parse_tc(tc_s)
            dax.parse_props(props_s)
            if strategy not in STRATEGIES:
                raise ConfigError(f"unknown mapping strategy {strategy!r}")
            if self.stage_missing_inputs:
                self._stage(dag, site)
            with self.store.transaction():
                wms_wfid = self.wms.plan_and_submit(
                    dag, site, policy or self.scenario.policy(), tc, instrumented=instrumented
                )
                try:
                    wf_id = self.store.register_source(
                        wms_wfid, dag_s, site_s, tc_s, props_s, instrumented=instrumented, replay_of=replay_of
                    )
                    self.store.update_run(wf_id, strategy=strategy)
                except BaseException:
                    self.wms.withdraw(wms_wfid)
                    raise
            mapper = make_mapper(strategy, self.store, self.wms, wf_id, wms_wfid)
            self._mappers[wf_id] = mapper
            self._wms_ids[wf_id] = wms_wfid
            if mapper.needs_ticks:
                monitor = Monitor(self.clock, mapper, self.poll_s)
                self._monitors[wf_id] = monitor
                monitor.start()
            self.wms.on_finished(wms_wfid, lambda _w, wf_id=wf_id: self._finished(wf_id))
            log.info("wf %d submitted as %s (strategy %s)", wf_id, wms_wfid, strategy)
            return Submission(wf_id, wms_wfid)

    def _stage(self, dag: dax.WorkflowDAG, site: dax.SiteConfig) -> None:
        missing = [lfn for lfn in external_inputs(dag) if not self.objects.has_object(site.input_container, lfn)]
        stage_files(self.objects, missing, site.input_container, seed=self.input_seed)

    def _finished(self, wf_id: int) -> None:
        monitor = self._monitors.get(wf_id)
        if monitor is not None:
            monitor.stop()
        state = self.wms.get_workflow_state(self._wms_ids[wf_id])
        self.store.update_run(wf_id, state=state.value)

    # simulation control ------------------------------------------------------------

    def advance(self, seconds: float) -> float:
        with self.lock:
            self.clock.run_until(self.clock.now + seconds)
            self._aggregate_finished()
            return self.clock.now

    def run(self) -> float:
        """Run the clock until nothing is left to do, then aggregate finished workflows."""
        with self.lock:
            self.clock.run()
            self._aggregate_finished()
            return self.clock.now

    def run_workflow(self, wf_id: int) -> MappingOutcome | None:
        with self.lock:
            wms_wfid = self.wms_wfid(wf_id)
            while self.wms.get_workflow_state(wms_wfid) == WorkflowState.RUNNING:
                if not self.clock.step():
                    break
            # let the teardowns of a dynamic pool land before mapping
            self.clock.run_until(self.clock.now + self.wms.config.vm_linger_s)
            if self.auto_aggregate:
                return self.aggregate(wf_id)
            return None

    def _aggregate_finished(self) -> None:
        if not self.auto_aggregate:
            return
        for wf_id, wms_wfid in list(self._wms_ids.items()):
            if self.wms.get_workflow_state(wms_wfid) != WorkflowState.RUNNING and not self.store.get_run(wf_id).aggregated:
                self.aggregate(wf_id)

    # provenance ----------------------------------------------------------------------

    def wms_wfid(self, wf_id: int) -> str:
        try:
            return self._wms_ids[wf_id]
        except KeyError:
            self.store.require(wf_id)
            raise UnknownWorkflow(f"workflow {wf_id} was not run by this instance") from None

    def mapper(self, wf_id: int) -> Mapper:
        self.wms_wfid(wf_id)
        return self._mappers[wf_id]

    def aggregate(self, wf_id: int) -> MappingOutcome:
        with self.lock:
            return aggregate(self.store, self.wms, self.objects, self.mapper(wf_id))

    def status(self, wf_id: int) -> dict:
        with self.lock:
            run = self.store.get_run(wf_id)
            src = self.store.get_source(wf_id)
            doc = {
                "wf_id": wf_id,
                "wms_wfid": src.wms_wfid,
                "state": run.state,
                "strategy": run.strategy,
                "instrumented": run.instrumented,
                "makespan_s": run.makespan_s,
                "aggregated": run.aggregated,
                "replay_of": run.replay_of,
                "mapped": len(self.store.get_cap(wf_id)),
                "unmapped": [list(u) for u in run.unmapped],
                "now": self.clock.now,
            }
            if wf_id in self._wms_ids:
                doc["state"] = self.wms.get_workflow_state(src.wms_wfid).value
                doc["jobs"] = [
                    {
                        "name": r.name,
                        "state": r.state.value,
                        "condor_id": r.condor_id,
                        "host_ip": r.host_ip,
                        "start_time": r.start_time,
                        "end_time": r.end_time,
                    }
                    for r in self.wms.get_job_records(src.wms_wfid)
                ]
            return doc

    def reproduce(
        self,
        wf_id: int,
        flavor_override: str | int | Mapping[str, str | int] | None = None,
        input_container: str | None = None,
        strategy: str | None = None,
        run: bool = True,
    ) -> ReplayResult:
        with self.lock:
            plan = build_plan(self.store, wf_id)
            return execute_replay(self, plan, flavor_override, input_container, strategy, run)

    def compare(self, wf_a: int, wf_b: int) -> ComparisonReport:
        with self.lock:
            return compare(self.store, wf_a, wf_b)

