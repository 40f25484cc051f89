import threading

import pytest
from hypothesis import given, strategies as st

from recap.cloud import CloudFileRecord, Flavor
from recap.errors import (
    ConfigError,
    DuplicateMapping,
    DuplicateWmsWfid,
    InconsistentFlavor,
    MissingSourceFile,
    UnknownWorkflow,
)
from recap.store import CAPRecord, Store, TempMapping, VmInfo, path_from_url

FILES = ('{"jobs": []}', "{}", "a b", "x = y")


def vm_info(vm_id="v1", ip="10.0.0.2", created_at=0.0, nodename="n1", flavor=(2, "m1.small", 1024, 10, 1)):
    fid, fname, ram, disk, cpu = flavor
    return VmInfo(vm_id, nodename, ip, fid, fname, ram, disk, cpu, "img", "img-id", "{}", "x86_64", "Linux",
                  12500, 1250000, created_at)


@pytest.fixture
def store():
    s = Store()
    yield s
    s.close()


def test_register_source_and_run(store):
    wf = store.register_source("wc-0001", *FILES, instrumented=True)
    assert store.find_wf_id("wc-0001") == wf
    assert store.get_source(wf).wf_tc == "a b"
    run = store.get_run(wf)
    assert run.instrumented and not run.aggregated and run.unmapped == ()
    store.update_run(wf, state="DONE", makespan_s=3.5, unmapped=[("j", "VM_GONE")], aggregated=True)
    run = store.get_run(wf)
    assert (run.state, run.makespan_s, run.unmapped, run.aggregated) == ("DONE", 3.5, (("j", "VM_GONE"),), True)
    with pytest.raises(ValueError):
        store.update_run(wf, colour="red")


def test_source_errors(store):
    store.register_source("a", *FILES)
    with pytest.raises(DuplicateWmsWfid):
        store.register_source("a", *FILES)
    with pytest.raises(MissingSourceFile):
        store.register_source("b", FILES[0], "", *FILES[2:])
    with pytest.raises(UnknownWorkflow):
        store.get_cap(99)
    assert store.count_workflows() == 1


def test_cap_records_and_flavor_consistency(store):
    wf = store.register_source("a", *FILES)
    rec = CAPRecord.from_vm(wf, "j1", vm_info())
    store.insert_cap_record(rec)
    assert store.get_cap(wf) == [rec]
    assert store.get_cap_record(wf, "j1") == rec
    with pytest.raises(DuplicateMapping):
        store.insert_cap_record(rec)
    assert store.flavor_catalog() == {2: (1, 1024, 10)}  # vcpus, ram, disk
    with pytest.raises(InconsistentFlavor):
        store.record_flavor(Flavor(2, "m1.small", 1, 2048, 10))


def test_transaction_rolls_back(store):
    with pytest.raises(RuntimeError):
        with store.transaction():
            store.register_source("a", *FILES)
            with store.transaction():
                store.register_source("b", *FILES)
            raise RuntimeError("boom")
    assert store.count_workflows() == 0


def test_temp_mappings_take_is_atomic(store):
    wf = store.register_source("a", *FILES)
    store.upsert_temp_mapping(TempMapping(wf, "j", vm_info(), 5.0))
    store.upsert_temp_mapping(TempMapping(wf, "j", vm_info("v2"), 10.0))
    assert store.count_temp_mappings(wf) == 1
    assert store.get_temp_mapping(wf, "j").vm.vm_id == "v2"
    assert store.take_temp_mapping(wf, "j").capture_time == 10.0
    assert store.take_temp_mapping(wf, "j") is None
    assert store.count_temp_mappings() == 0


def test_job_hosts(store):
    wf = store.register_source("a", *FILES)
    store.upsert_job_host(wf, "j", "10.0.0.5", "h")
    assert store.get_job_hosts(wf)["j"].host_ip == "10.0.0.5"
    store.delete_job_host(wf, "j")
    assert store.get_job_hosts(wf) == {}


def test_cloud_file_upsert_keeps_created(store):
    wf = store.register_source("a", *FILES)
    fid = store.upsert_cloud_file(CloudFileRecord("c", "k", "m1", {"a": "1"}, 1.0, 1.0))
    again = store.upsert_cloud_file(CloudFileRecord("c", "k", "m2", {}, 9.0, 9.0))
    assert fid == again
    store.link_job_file(wf, "j", fid, "out")
    store.link_job_file(wf, "j", fid, "out")
    (row,) = store.get_job_files(wf, "out")
    assert (row.md5, row.created, row.modified) == ("m2", 1.0, 9.0)
    assert store.get_job_files(wf, "in") == []


def test_observations_dedupe_and_nearest(store):
    assert store.record_vm_observation(vm_info("old", created_at=0.0), 1.0)
    assert not store.record_vm_observation(vm_info("old", created_at=0.0), 6.0)
    store.record_vm_observation(vm_info("new", created_at=100.0), 101.0)
    obs = store.observations("10.0.0.2")
    assert [o.vm.vm_id for o in obs] == ["old", "new"] and obs[0].last_seen == 6.0
    assert store.find_vm_by_ip_near("10.0.0.2", 40).vm.vm_id == "old"
    assert store.find_vm_by_ip_near("10.0.0.2", 90).vm.vm_id == "new"
    # exact tie goes to the VM that already existed
    assert store.find_vm_by_ip_near("10.0.0.2", 50).vm.vm_id == "old"
    assert store.find_vm_by_ip_near("10.9.9.9", 0) is None


@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=8, unique=True),
       st.floats(0, 1000, allow_nan=False))
def test_nearest_observation_matches_brute_force(created, t):
    with Store() as s:
        for i, c in enumerate(created):
            s.record_vm_observation(vm_info(f"v{i}", created_at=c), c)
        best = s.find_vm_by_ip_near("10.0.0.2", t)
        dist = min(abs(c - t) for c in created)
        assert abs(best.created_at - t) == dist
        if any(abs(c - t) == dist and c <= t for c in created):
            assert best.created_at <= t


def test_export_import_round_trip(store):
    wf = store.register_source("a", *FILES)
    store.insert_cap_record(CAPRecord.from_vm(wf, "j", vm_info()))
    store.insert_cpu_spec(wf, "j", "x86_64", "Linux", 1, 2)
    store.link_job_file(wf, "j", store.upsert_cloud_file(CloudFileRecord("c", "k", "m", {}, 0, 0)), "out")
    store.update_run(wf, state="DONE", aggregated=True)
    doc = store.export_workflow(wf)
    with Store() as other:
        new = other.import_workflow(doc)
        again = other.export_workflow(new)
    assert again["cap"] == doc["cap"] and again["files"] == doc["files"] and again["run"] == doc["run"]


def test_file_backed_store_persists(tmp_path):
    path = tmp_path / "sub" / "recap.db"
    with Store(path) as s:
        s.register_source("a", *FILES)
    with Store.from_url(f"sqlite:///{path}") as s:
        assert s.list_workflows() == [1]


def test_path_from_url():
    assert path_from_url("sqlite://") == ":memory:"
    assert path_from_url("sqlite:///x.db") == "x.db"
    assert path_from_url("sqlite:////abs/x.db") == "/abs/x.db"
    with pytest.raises(ConfigError):
        path_from_url("mysql://host/db")


def test_concurrent_registration(tmp_path):
    s = Store(tmp_path / "c.db")
    errors = []

    def work(i):
        try:
            for j in range(10):
                s.register_source(f"w{i}-{j}", *FILES)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors and s.count_workflows() == 40
    s.close()
