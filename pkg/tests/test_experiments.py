import csv

import pytest

from recap.experiments import EXPERIMENTS, flavor_sweep, replay_roundtrip, run_experiment


def test_flavor_sweep():
    res = flavor_sweep(runs=3)
    means = res.summary["mean_makespan"]
    # RAM does not change speed, so Tiny and Small tie; Random draws multi-core flavors
    assert means["Tiny"] == means["Small"]
    assert means["Random"] < means["Small"]
    assert sum(res.summary["random_flavor_mix"].values()) == 3 * 4
    assert len(res.rows) == 9


def test_replay_roundtrip_rows():
    res = replay_roundtrip()
    assert res.summary["verdict"] == "REPRODUCED"
    assert res.summary["makespan"][0] == res.summary["makespan"][1]
    nodes = {r["nodename"] for r in res.rows}
    assert nodes == {"uwe-vm3", "uwe-vm4", "uwe-vm3-rep", "uwe-vm4-rep"}
    assert {(r["flavor_id"], r["ram_mb"], r["hd_gb"], r["vcpu"]) for r in res.rows} == {(2, 2048, 20, 1)}


def test_run_experiment_writes_csv(tmp_path):
    res, path = run_experiment("replay-roundtrip", tmp_path / "out")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(res.rows) == 8
    assert rows[0].keys() == res.rows[0].keys()


def test_unknown_experiment():
    with pytest.raises(ValueError):
        run_experiment("warp-drive")
    assert set(EXPERIMENTS) == {"ram-sweep", "mips-sweep", "flavor-sweep", "overhead", "replay-roundtrip"}
