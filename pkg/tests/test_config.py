import logging

import pytest

from recap.config import PegasusParser, example_config, load_config, parse_config
from recap.core import Recap
from recap.errors import ConfigError
from recap.scenario import BUILTIN, load_scenario, scenario_from_dict


def edited(**changes):
    text = example_config()
    for old, new in changes.items():
        text = text.replace(old, new)
    return text


def test_example_config_parses():
    cfg = parse_config(example_config())
    assert cfg.mapping_type == "static" and cfg.poll_interval == 5.0
    assert cfg.base_path == "/service_wrapper/api/v1.0" and cfg.bind == ("127.0.0.1", 5000)
    assert cfg.wms_parser is PegasusParser
    assert cfg.sections["storage_settings"]["swift_host"] == "127.0.0.1"


@pytest.mark.parametrize("old,new", [
    ("[log_settings]", "[logging]"),
    ("MAPPING_TYPE=static", "MAPPING_TYPE=telepathic"),
    ("MAPPING_TYPE=static", "MAPPING_TYPE="),
    ("wms_parser=PegasusParser", "wms_parser=Other"),
    ("poll_interval=5", "poll_interval=0"),
    ("poll_interval=5", "poll_interval=soon"),
    ("service_password=recap", ""),
])
def test_bad_configs(old, new):
    with pytest.raises(ConfigError):
        parse_config(example_config().replace(old, new))


def test_mapping_type_case_and_inline_comments():
    cfg = parse_config(edited(**{"MAPPING_TYPE=static": "MAPPING_TYPE=Eager   # fast"}))
    assert cfg.mapping_type == "eager"


def test_paths_resolve_next_to_the_file(tmp_path):
    path = tmp_path / "recap.conf"
    path.write_text(example_config())
    cfg = load_config(path)
    assert cfg.store_path() == str(tmp_path / "recap.db")
    assert cfg.scenario_ref() == "default"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.conf")


def test_recap_from_config_uses_file_store(tmp_path):
    path = tmp_path / "recap.conf"
    path.write_text(edited(**{"scenario=default": "scenario=testbed", "MAPPING_TYPE=static": "MAPPING_TYPE=lazy"}))
    r = Recap.from_config(load_config(path))
    assert r.strategy == "lazy" and r.scenario.name == "testbed"
    assert (tmp_path / "recap.db").exists()
    r.store.close()


def test_setup_logging_falls_back(tmp_path):
    root = logging.getLogger()
    saved = root.level, list(root.handlers)
    path = tmp_path / "recap.conf"
    path.write_text(example_config())
    load_config(path).setup_logging()
    conf = tmp_path / "logging.conf"
    conf.write_text(
        "[loggers]\nkeys=root\n[handlers]\nkeys=h\n[formatters]\nkeys=f\n"
        "[logger_root]\nlevel=INFO\nhandlers=h\n"
        "[handler_h]\nclass=NullHandler\nformatter=f\nargs=()\n[formatter_f]\nformat=%(message)s\n"
    )
    try:
        load_config(path).setup_logging()
        assert root.level == logging.INFO
    finally:
        root.setLevel(saved[0])
        root.handlers[:] = saved[1]


def test_wfid_from_planner_output():
    assert PegasusParser.wfid_from_submit_output("noise\nwfid: wc-0003\n") == "wc-0003"
    assert PegasusParser.wfid_from_submit_output("nothing") is None


# scenarios -------------------------------------------------------------------


@pytest.mark.parametrize("name", BUILTIN)
def test_builtin_scenarios_build(name):
    sc = load_scenario(name)
    tb = sc.build()
    assert len(tb.cloud.list_vms()) == len(sc.pool)


def test_testbed_matches_recorded_resources():
    sc = load_scenario("testbed")
    tb = sc.build()
    small = tb.cloud.get_flavor(2)
    assert (small.vcpus, small.ram_mb, small.disk_gb) == (1, 2048, 20)
    assert tb.wms.pool_mips() == {"uwe-vm3": (15369, 1518351), "uwe-vm4": (15362, 1494906)}


def test_condor_pool_benchmarks():
    tb = load_scenario("condor-pools").build()
    assert len(tb.wms.pool_mips()) == 5


def test_scenario_file(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        'name = "mine"\nlifecycle = "dynamic"\n'
        '[[flavors]]\nid = 1\nname = "one"\nvcpus = 1\nram_mb = 512\ndisk_gb = 1\n'
        '[[images]]\nid = "i-1"\nname = "img"\n'
        '[dynamic]\nflavor = "one"\nimage = "img"\n'
    )
    sc = load_scenario(path)
    assert sc.name == "mine" and sc.policy().lifecycle == "dynamic"
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.toml")
    path.write_text("not = [toml")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_bad_scenario_tables():
    with pytest.raises(ConfigError):
        scenario_from_dict({"flavors": [{"id": 1}]})
    with pytest.raises(ConfigError):
        scenario_from_dict({"wms": {"warp_speed": 9}})
    with pytest.raises(ConfigError):
        scenario_from_dict({"lifecycle": "eternal"})
    with pytest.raises(ConfigError):
        scenario_from_dict({"mips": {"mode": "gaussian"}}).mips_distribution()
