import json

import pytest

from conftest import submit
from recap.compare import Status, compare, compare_infrastructure, compare_outputs, compare_structure
from recap.core import Recap
from recap.dax import SiteConfig
from recap.errors import IncompleteProvenance, UnknownFlavor, UnknownImage
from recap.replay import build_plan
from recap.workflows import montage, wordcount


def finished(recap, dag=None, **kwargs):
    sub = submit(recap, dag, **kwargs)
    recap.run_workflow(sub.wf_id)
    return sub.wf_id


def test_plan_groups_jobs_by_vm(testbed):
    wf = finished(testbed)
    plan = build_plan(testbed.store, wf)
    assert {r.nodename: sorted(r.jobs) for r in plan.requests} == {
        "uwe-vm3-rep": ["analysis2", "merge", "split"],
        "uwe-vm4-rep": ["analysis1"],
    }
    assert {r.flavor_id for r in plan.requests} == {2}
    assert plan.pins()["analysis1"] == "uwe-vm4-rep"


def test_replay_pins_jobs_and_records_lineage(testbed):
    wf = finished(testbed)
    rep = testbed.reproduce(wf)
    caps = {c.job_name: c.nodename for c in testbed.store.get_cap(rep.wf_id)}
    orig = {c.job_name: c.nodename for c in testbed.store.get_cap(wf)}
    assert caps == {job: f"{node}-rep" for job, node in orig.items()}
    assert testbed.store.get_run(rep.wf_id).replay_of == wf
    assert testbed.compare(wf, rep.wf_id).verdict == "REPRODUCED"


def test_second_replay_gets_fresh_names(testbed):
    wf = finished(testbed)
    first = testbed.reproduce(wf)
    second = testbed.reproduce(wf)
    assert set(first.nodenames) == {"uwe-vm3-rep", "uwe-vm4-rep"}
    assert set(second.nodenames) == {"uwe-vm3-rep-2", "uwe-vm4-rep-2"}
    assert compare_infrastructure(testbed.store, first.wf_id, second.wf_id).status == Status.EQUAL


def test_per_node_flavor_override(testbed):
    wf = finished(testbed)
    rep = testbed.reproduce(wf, flavor_override={"uwe-vm4": "m1.medium"})
    infra = compare_infrastructure(testbed.store, wf, rep.wf_id)
    assert infra.status == Status.DIFFERENT
    assert {d["job"] for d in infra.details} == {"analysis1"}
    assert {d["field"] for d in infra.details} == {"flavor_id", "min_ram_mb", "min_hd_gb", "min_cpu"}


def test_failed_replay_leaves_no_vms(testbed):
    wf = finished(testbed)
    before = len(testbed.cloud.list_vms())
    with pytest.raises(UnknownFlavor):
        testbed.reproduce(wf, flavor_override="m1.gigantic")
    assert len(testbed.cloud.list_vms()) == before


def test_replay_needs_the_recorded_image(testbed):
    wf = finished(testbed)
    image_id = testbed.store.get_cap(wf)[0].image_id
    testbed.cloud.remove_image(image_id)
    with pytest.raises(UnknownImage):
        testbed.reproduce(wf)


def test_replay_refuses_incomplete_provenance():
    r = Recap("default", strategy="lazy")
    wf = finished(r, site=SiteConfig(wms_profile="no_host_info"))
    with pytest.raises(IncompleteProvenance):
        r.reproduce(wf)


def test_replay_without_run_then_drive_clock(testbed):
    wf = finished(testbed)
    rep = testbed.reproduce(wf, run=False)
    assert testbed.store.get_run(rep.wf_id).aggregated is False
    testbed.run()
    assert testbed.store.get_run(rep.wf_id).aggregated


# comparator ------------------------------------------------------------------


def test_structure_difference(recap):
    a = finished(recap)
    b = finished(recap, montage())
    res = compare_structure(recap.store, a, b)
    assert res.status == Status.DIFFERENT
    kinds = {d["kind"] for d in res.details}
    assert kinds == {"job_only_in_a", "job_only_in_b", "edge_only_in_a", "edge_only_in_b"}
    assert compare_outputs(recap.store, a, b).status == Status.INCOMPARABLE
    assert compare(recap.store, a, b).verdict == "NOT_REPRODUCED"


def test_infrastructure_needs_cap_records():
    r = Recap("default", strategy="lazy")
    a = finished(r, site=SiteConfig(wms_profile="no_host_info"))
    b = finished(r)
    with pytest.raises(IncompleteProvenance):
        compare_infrastructure(r.store, a, b)


def test_identical_runs_compare_equal(recap):
    a = finished(recap)
    b = finished(recap)
    report = compare(recap.store, a, b)
    assert report.verdict == "REPRODUCED"
    doc = json.loads(report.to_json())
    assert doc["outputs"]["status"] == "EQUAL" and doc["verdict"] == "REPRODUCED"


def test_different_inputs_change_outputs():
    r = Recap("default")
    a = finished(r)
    r.objects.put_object("other", "input.txt", b"just three words\n")
    b = finished(r, site=SiteConfig(input_container="other"))
    res = compare_outputs(r.store, a, b)
    assert res.status == Status.DIFFERENT
    assert {d["file"] for d in res.details} == {"part1.txt", "part2.txt", "count1.txt", "count2.txt", "total.txt"}


def test_compute_replay_on_bigger_flavor_is_faster(testbed):
    wf = finished(testbed, wordcount("compute", max_parallelism=4))
    rep = testbed.reproduce(wf, flavor_override="m1.xlarge")
    assert testbed.store.get_run(rep.wf_id).makespan_s < testbed.store.get_run(wf).makespan_s
