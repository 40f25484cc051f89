"""INI configuration in the seven-section layout of the original prototype.

Only a handful of keys drive the simulator; the remaining cloud and
database credentials are kept verbatim so existing files load unchanged::

    [cloud_settings]
    MAPPING_TYPE=static          # static, eager, lazy or snohi
    scenario=default             # built-in scenario name or TOML path (optional)
    poll_interval=5              # monitor period in virtual seconds (optional)
    [storage_settings]
    [wmsdb_settings]
    [recapdb_settings]
    dburl=sqlite:///recap.db
    [WMS_settings]
    wms_monitor=PegasusMonitor
    wms_parser=PegasusParser
    [WrapperService]
    endpoint=http://127.0.0.1:5000/service_wrapper/api/v1.0
    service_user=recap
    service_password=secret
    [log_settings]
    log_conf=logging.conf
"""

from __future__ import annotations

import configparser
import logging
import logging.config
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from urllib.parse import urlsplit

from .errors import ConfigError
from .mappers import DEFAULT_POLL_S, STRATEGIES

SECTIONS = (
    "cloud_settings",
    "storage_settings",
    "wmsdb_settings",
    "recapdb_settings",
    "WMS_settings",
    "WrapperService",
    "log_settings",
)

REQUIRED = {
    "cloud_settings": ("MAPPING_TYPE",),
    "recapdb_settings": ("dburl",),
    "WMS_settings": ("wms_monitor", "wms_parser"),
    "WrapperService": ("endpoint", "service_user", "service_password"),
    "log_settings": ("log_conf",),
}


class PegasusMonitor:
    """Reads workflow and job state from the (simulated) Pegasus database."""

    name = "PegasusMonitor"

    @staticmethod
    def workflow_state(wms, wms_wfid: str) -> str:
        return wms.get_workflow_state(wms_wfid).value

    @staticmethod
    def job_records(wms, wms_wfid: str):
        return wms.get_job_records(wms_wfid)


class PegasusParser:
    """Pulls identifiers out of planner output and wrapper responses."""

    name = "PegasusParser"
    _WFID = re.compile(r"^wfid: (\S+)$", re.M)

    @classmethod
    def wfid_from_submit_output(cls, text: str) -> str | None:
        m = cls._WFID.search(text)
        return m.group(1) if m else None

    @staticmethod
    def ids_from_response(doc: dict) -> tuple[int, str]:
        try:
            return int(doc["wf_id"]), str(doc["wms_wfid"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"unexpected submit response {doc!r}") from None


WMS_MONITORS = {PegasusMonitor.name: PegasusMonitor}
WMS_PARSERS = {PegasusParser.name: PegasusParser}


@dataclass
class RecapConfig:
    mapping_type: str
    dburl: str
    endpoint: str
    service_user: str
    service_password: str
    log_conf: str
    scenario: str = "default"
    poll_interval: float = DEFAULT_POLL_S
    wms_monitor: type = PegasusMonitor
    wms_parser: type = PegasusParser
    sections: dict[str, dict[str, str]] = field(default_factory=dict, repr=False)
    path: Path | None = None

    @property
    def base_path(self) -> str:
        return urlsplit(self.endpoint).path.rstrip("/") or "/service_wrapper/api/v1.0"

    @property
    def bind(self) -> tuple[str, int]:
        parts = urlsplit(self.endpoint)
        return parts.hostname or "127.0.0.1", parts.port or 5000

    def resolve(self, value: str) -> str:
        """Paths in the file are relative to the file itself."""
        if self.path is None or not value or Path(value).is_absolute():
            return value
        return str(self.path.parent / value)

    def store_path(self) -> str:
        from .store import path_from_url

        path = path_from_url(self.dburl)
        return path if path == ":memory:" else self.resolve(path)

    def scenario_ref(self) -> str:
        from .scenario import BUILTIN

        return self.scenario if self.scenario in BUILTIN else self.resolve(self.scenario)

    def setup_logging(self) -> None:
        conf = Path(self.resolve(self.log_conf))
        if conf.is_file():
            logging.config.fileConfig(conf, disable_existing_loggers=False)
        else:
            logging.basicConfig(level=logging.WARNING, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def parse_config(text: str, path: Path | None = None) -> RecapConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys such as MAPPING_TYPE are case sensitive
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in SECTIONS:
        if not cp.has_section(section):
            raise ConfigError(f"missing section [{section}]")
    for section, keys in REQUIRED.items():
        for key in keys:
            if not cp.get(section, key, fallback="").strip():
                raise ConfigError(f"missing key {key} in [{section}]")

    sections = {s: dict(cp.items(s)) for s in cp.sections()}
    mapping = cp.get("cloud_settings", "MAPPING_TYPE").strip().lower()
    if mapping not in STRATEGIES:
        raise ConfigError(f"MAPPING_TYPE must be one of {', '.join(STRATEGIES)}, got {mapping!r}")
    monitor = cp.get("WMS_settings", "wms_monitor").strip()
    parser = cp.get("WMS_settings", "wms_parser").strip()
    if monitor not in WMS_MONITORS:
        raise ConfigError(f"unknown wms_monitor {monitor!r}")
    if parser not in WMS_PARSERS:
        raise ConfigError(f"unknown wms_parser {parser!r}")
    try:
        poll = float(cp.get("cloud_settings", "poll_interval", fallback=str(DEFAULT_POLL_S)))
    except ValueError:
        raise ConfigError("poll_interval must be a number") from None
    if poll <= 0:
        raise ConfigError("poll_interval must be positive")

    return RecapConfig(
        mapping_type=mapping,
        dburl=cp.get("recapdb_settings", "dburl").strip(),
        endpoint=cp.get("WrapperService", "endpoint").strip(),
        service_user=cp.get("WrapperService", "service_user").strip(),
        service_password=cp.get("WrapperService", "service_password").strip(),
        log_conf=cp.get("log_settings", "log_conf").strip(),
        scenario=cp.get("cloud_settings", "scenario", fallback="default").strip(),
        poll_interval=poll,
        wms_monitor=WMS_MONITORS[monitor],
        wms_parser=WMS_PARSERS[parser],
        sections=sections,
        path=path,
    )


def load_config(path: str | Path) -> RecapConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.resolve())


def example_config() -> str:
    return resources.files("recap").joinpath("data", "recap.conf").read_text()
