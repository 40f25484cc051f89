import csv
import json
import socket
import threading
import time

import pytest
import uvicorn

from recap.cli import main
from recap.config import example_config, load_config
from recap.service import app_from_config
from recap.workflows import bundle, wordcount


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def server(tmp_path):
    """A real HTTP service on a free port, configured through a config file."""
    port = free_port()
    conf = tmp_path / "recap.conf"
    conf.write_text(
        example_config()
        .replace("scenario=default", "scenario=testbed")
        .replace("127.0.0.1:5000", f"127.0.0.1:{port}")
    )
    cfg = load_config(conf)
    srv = uvicorn.Server(uvicorn.Config(app_from_config(cfg), host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=srv.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not srv.started and time.time() < deadline:
        time.sleep(0.02)
    assert srv.started
    yield conf
    srv.should_exit = True
    thread.join(timeout=10)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_local_submit_and_run(capsys):
    code, out, _ = run(capsys, "--local", "submit", "--workflow", "wordcount", "--run")
    assert code == 0
    assert out.strip() == "wf_id=1 wms_wfid=wordcount-0001 state=DONE makespan_s=300.0 mapped=4"


def test_local_submit_from_files(tmp_path, capsys):
    files = bundle(wordcount())
    paths = {}
    for name in ("dag", "site", "tc", "props"):
        paths[name] = tmp_path / name
        paths[name].write_text(getattr(files, name))
    code, out, _ = run(capsys, "--local", "--json", "submit", "--dag", str(paths["dag"]), "--site",
                       str(paths["site"]), "--tc", str(paths["tc"]), "--props", str(paths["props"]),
                       "--strategy", "eager", "--run")
    doc = json.loads(out)
    assert code == 0 and doc["status"]["strategy"] == "eager" and doc["status"]["mapped"] == 4


def test_dag_needs_companion_files(capsys):
    with pytest.raises(SystemExit):
        main(["--local", "submit", "--dag", "x.json"])


def test_errors_exit_nonzero(capsys):
    code, _, err = run(capsys, "--local", "status", "7")
    assert code == 2 and "UnknownWorkflow" in err
    code, _, err = run(capsys, "--config", "/nonexistent/recap.conf", "status", "1")
    assert code == 2 and "ConfigError" in err


def test_unreachable_service_exits_nonzero(tmp_path, capsys):
    conf = tmp_path / "recap.conf"
    conf.write_text(example_config().replace("127.0.0.1:5000", "127.0.0.1:9"))
    code, _, err = run(capsys, "--config", str(conf), "cpool-mips")
    assert code == 2 and "cannot reach service" in err


def test_experiment_writes_csv(tmp_path, capsys):
    code, out, err = run(capsys, "experiment", "overhead", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["makespan"]["none"] == 300.0
    rows = list(csv.DictReader((tmp_path / "overhead.csv").open()))
    assert [r["mapping"] for r in rows] == ["none", "static", "eager", "lazy", "snohi"]


def test_example_config(capsys):
    code, out, _ = run(capsys, "example-config")
    assert code == 0 and "[WrapperService]" in out


def test_round_trip_against_running_service(server, capsys):
    conf = str(server)
    code, out, _ = run(capsys, "--config", conf, "submit", "--workflow", "wordcount", "--run")
    assert code == 0 and "state=DONE" in out and "mapped=4" in out

    code, out, _ = run(capsys, "--config", conf, "reproduce", "--wf-id", "1")
    assert code == 0 and json.loads(out) == {"wf_id": 2, "wms_wfid": "wordcount-0002"}

    code, out, _ = run(capsys, "--config", conf, "compare", "--wf-a", "1", "--wf-b", "2")
    assert code == 0 and out.splitlines()[-1].split() == ["verdict", "REPRODUCED"]

    code, out, _ = run(capsys, "--config", conf, "reproduce", "--wf-id", "1", "--flavor", "3")
    assert code == 0 and json.loads(out)["wf_id"] == 3
    code, out, _ = run(capsys, "--config", conf, "compare", "--wf-a", "1", "--wf-b", "3")
    assert code == 1 and "infrastructure  DIFFERENT" in out

    code, out, _ = run(capsys, "--config", conf, "status", "3")
    assert code == 0 and "state=DONE" in out
    code, out, _ = run(capsys, "--config", conf, "--json", "export", "1")
    assert json.loads(out)["run"]["wf_id"] == 1
    code, out, _ = run(capsys, "--config", conf, "advance", "5")
    assert code == 0 and out.startswith("now=")
    code, out, _ = run(capsys, "--config", conf, "cpool-mips")
    assert "uwe-vm3 mips=15369 kflops=1518351" in out

    code, out, _ = run(capsys, "--config", conf, "aggregate", "1")
    assert code == 0 and "inserted=0" in out
    # provenance went to the file next to the config
    assert (server.parent / "recap.db").exists()
