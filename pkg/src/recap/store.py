"""Relational provenance store on SQLite.

The schema lives in ``schema.sql`` next to this module.  One connection is
shared behind a re-entrant lock, so the store can be used from the monitor,
the HTTP handlers and the CLI at once; every public call runs in a
transaction.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

from .cloud import CloudFileRecord, Flavor, VirtualMachine
from .errors import (
    ConfigError,
    DuplicateMapping,
    DuplicateWmsWfid,
    InconsistentFlavor,
    MissingSourceFile,
    UnknownWorkflow,
)

SCHEMA_VERSION = 1


def canonical_json(value: Mapping | str | None) -> str:
    if value is None:
        return "{}"
    if isinstance(value, str):
        value = json.loads(value or "{}")
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class WorkflowSource:
    wf_id: int
    wms_wfid: str
    wf_dag: str
    wf_site: str
    wf_tc: str
    wf_props: str


@dataclass(frozen=True)
class WorkflowRun:
    wf_id: int
    state: str
    strategy: str | None
    instrumented: bool
    makespan_s: float | None
    unmapped: tuple
    aggregated: bool
    replay_of: int | None


@dataclass(frozen=True)
class VmInfo:
    """Everything about a VM that a mapping needs, frozen at capture time."""

    vm_id: str
    nodename: str
    ip: str
    flavor_id: int
    flavor_name: str
    ram_mb: int
    disk_gb: int
    vcpus: int
    image_name: str
    image_id: str
    extra: str
    arch: str
    os: str
    mips: int
    kflops: int
    created_at: float

    @classmethod
    def from_vm(cls, vm: VirtualMachine) -> "VmInfo":
        return cls(
            vm_id=vm.vm_id,
            nodename=vm.nodename,
            ip=vm.ip,
            flavor_id=vm.flavor.flavor_id,
            flavor_name=vm.flavor.name,
            ram_mb=vm.flavor.ram_mb,
            disk_gb=vm.flavor.disk_gb,
            vcpus=vm.flavor.vcpus,
            image_name=vm.image.name,
            image_id=vm.image.image_id,
            extra=vm.extra_json(),
            arch=vm.cpu_spec.arch,
            os=vm.cpu_spec.os,
            mips=vm.cpu_spec.mips,
            kflops=vm.cpu_spec.kflops,
            created_at=vm.created_at,
        )

    @property
    def flavor(self) -> Flavor:
        return Flavor(self.flavor_id, self.flavor_name, self.vcpus, self.ram_mb, self.disk_gb)


@dataclass(frozen=True)
class CAPRecord:
    wf_id: int
    job_name: str
    nodename: str
    flavor_id: int
    flavor_name: str
    min_ram_mb: int
    min_hd_gb: int
    min_cpu: int
    image_name: str
    image_id: str
    extra: str = "{}"

    @classmethod
    def from_vm(cls, wf_id: int, job_name: str, vm: VmInfo) -> "CAPRecord":
        return cls(
            wf_id=wf_id,
            job_name=job_name,
            nodename=vm.nodename,
            flavor_id=vm.flavor_id,
            flavor_name=vm.flavor_name,
            min_ram_mb=vm.ram_mb,
            min_hd_gb=vm.disk_gb,
            min_cpu=vm.vcpus,
            image_name=vm.image_name,
            image_id=vm.image_id,
            extra=vm.extra,
        )

    def infrastructure(self) -> tuple:
        """The fields that decide whether two executions ran on equal resources."""
        return (self.flavor_id, self.min_ram_mb, self.min_hd_gb, self.min_cpu, self.image_id)

    def content(self) -> tuple:
        """Every field except the workflow id."""
        return tuple(getattr(self, f.name) for f in fields(self) if f.name != "wf_id")


@dataclass(frozen=True)
class TempMapping:
    wf_id: int
    job_name: str
    vm: VmInfo
    capture_time: float

    def to_cap(self) -> CAPRecord:
        return CAPRecord.from_vm(self.wf_id, self.job_name, self.vm)


@dataclass(frozen=True)
class JobHostTemp:
    wf_id: int
    job_name: str
    host_ip: str
    hostname: str


@dataclass(frozen=True)
class CpuSpecRow:
    wf_id: int
    job_name: str
    arch: str
    os: str
    mips: int
    kflops: int


@dataclass(frozen=True)
class JobCloudFile:
    wf_id: int
    job_name: str
    direction: str
    container: str
    keyname: str
    md5: str
    metadata: str
    created: float
    modified: float


@dataclass(frozen=True)
class LazyVmObservation:
    vm: VmInfo
    first_seen: float
    last_seen: float

    @property
    def ip(self) -> str:
        return self.vm.ip

    @property
    def created_at(self) -> float:
        return self.vm.created_at


_VM_COLUMNS = (
    "vm_id", "nodename", "ip", "flavorid", "flavorname", "minRAM", "minHD", "minCPU",
    "image_name", "image_id", "extra", "arch", "os", "mips", "kflops", "created_at",
)


def _vm_values(vm: VmInfo) -> tuple:
    return (
        vm.vm_id, vm.nodename, vm.ip, vm.flavor_id, vm.flavor_name, vm.ram_mb, vm.disk_gb,
        vm.vcpus, vm.image_name, vm.image_id, vm.extra, vm.arch, vm.os, vm.mips, vm.kflops,
        vm.created_at,
    )


def _vm_from_row(row: sqlite3.Row) -> VmInfo:
    return VmInfo(
        vm_id=row["vm_id"],
        nodename=row["nodename"],
        ip=row["ip"],
        flavor_id=row["flavorid"],
        flavor_name=row["flavorname"],
        ram_mb=row["minRAM"],
        disk_gb=row["minHD"],
        vcpus=row["minCPU"],
        image_name=row["image_name"],
        image_id=row["image_id"],
        extra=row["extra"],
        arch=row["arch"],
        os=row["os"],
        mips=row["mips"],
        kflops=row["kflops"],
        created_at=row["created_at"],
    )


def _cap_from_row(row: sqlite3.Row) -> CAPRecord:
    return CAPRecord(
        wf_id=row["wfID"],
        job_name=row["job_name"],
        nodename=row["nodename"],
        flavor_id=row["flavorid"],
        flavor_name=row["flavorname"],
        min_ram_mb=row["minRAM"],
        min_hd_gb=row["minHD"],
        min_cpu=row["minCPU"],
        image_name=row["image_name"],
        image_id=row["image_id"],
        extra=row["extra"],
    )


def path_from_url(dburl: str) -> str:
    """Accept ``sqlite:///relative.db``, ``sqlite:////abs.db``, ``sqlite://`` or a bare path."""
    if dburl in ("", ":memory:", "sqlite://", "sqlite:///:memory:"):
        return ":memory:"
    if dburl.startswith("sqlite:///"):
        return dburl[len("sqlite:///"):]
    if "://" in dburl:
        scheme = dburl.split("://", 1)[0]
        raise ConfigError(f"unsupported database URL scheme {scheme!r}; the store is SQLite-backed")
    return dburl


class Store:
    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        if self.path != ":memory:":
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        self._depth = 0
        self._migrate()

    @classmethod
    def from_url(cls, dburl: str) -> "Store":
        return cls(path_from_url(dburl))

    def _migrate(self) -> None:
        with self._lock:
            self._conn.execute("PRAGMA foreign_keys = ON")
            if self.path != ":memory:":
                self._conn.execute("PRAGMA journal_mode = WAL")
            version = self._conn.execute("PRAGMA user_version").fetchone()[0]
            if version < SCHEMA_VERSION:
                ddl = resources.files("recap").joinpath("schema.sql").read_text()
                self._conn.executescript(ddl)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        """Re-entrant transaction; only the outermost level commits or rolls back."""
        with self._lock:
            outer = self._depth == 0
            if outer:
                self._conn.execute("BEGIN IMMEDIATE")
            self._depth += 1
            try:
                yield self._conn
            except BaseException:
                self._depth -= 1
                if outer:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._depth -= 1
                if outer:
                    self._conn.execute("COMMIT")

    def _query(self, sql: str, params: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    # workflow sources ------------------------------------------------------------

    def register_source(
        self,
        wms_wfid: str,
        dag: str | bytes | None,
        site: str | bytes | None,
        tc: str | bytes | None,
        props: str | bytes | None,
        instrumented: bool = False,
        replay_of: int | None = None,
    ) -> int:
        texts = {}
        for label, value in (("dag", dag), ("site", site), ("tc", tc), ("props", props)):
            if value is None or len(value) == 0:
                raise MissingSourceFile(f"{label} file missing or empty")
            texts[label] = value.decode("utf-8") if isinstance(value, bytes) else value
        with self.transaction() as conn:
            try:
                cur = conn.execute(
                    "INSERT INTO WorkflowSource (wms_wfid, wfDAG, wfSite, wfTC, wfProps) VALUES (?,?,?,?,?)",
                    (wms_wfid, texts["dag"], texts["site"], texts["tc"], texts["props"]),
                )
            except sqlite3.IntegrityError:
                raise DuplicateWmsWfid(wms_wfid) from None
            wf_id = cur.lastrowid
            conn.execute(
                "INSERT INTO WorkflowRun (wfID, instrumented, replay_of) VALUES (?,?,?)",
                (wf_id, int(instrumented), replay_of),
            )
            return wf_id

    def get_source(self, wf_id: int) -> WorkflowSource:
        rows = self._query("SELECT * FROM WorkflowSource WHERE wfID = ?", (wf_id,))
        if not rows:
            raise UnknownWorkflow(str(wf_id))
        r = rows[0]
        return WorkflowSource(r["wfID"], r["wms_wfid"], r["wfDAG"], r["wfSite"], r["wfTC"], r["wfProps"])

    def find_wf_id(self, wms_wfid: str) -> int:
        rows = self._query("SELECT wfID FROM WorkflowSource WHERE wms_wfid = ?", (wms_wfid,))
        if not rows:
            raise UnknownWorkflow(wms_wfid)
        return rows[0][0]

    def list_workflows(self) -> list[int]:
        return [r[0] for r in self._query("SELECT wfID FROM WorkflowSource ORDER BY wfID")]

    def count_workflows(self) -> int:
        return self._query("SELECT COUNT(*) FROM WorkflowSource")[0][0]

    def require(self, wf_id: int) -> None:
        if not self._query("SELECT 1 FROM WorkflowSource WHERE wfID = ?", (wf_id,)):
            raise UnknownWorkflow(str(wf_id))

    def update_run(self, wf_id: int, **values) -> None:
        allowed = {"state", "strategy", "makespan_s", "unmapped", "aggregated", "instrumented"}
        bad = set(values) - allowed
        if bad:
            raise ValueError(f"unknown run fields {sorted(bad)}")
        if "unmapped" in values:
            values["unmapped"] = json.dumps([list(u) for u in values["unmapped"]])
        for key in ("aggregated", "instrumented"):
            if key in values:
                values[key] = int(values[key])
        self.require(wf_id)
        assignments = ", ".join(f"{k} = ?" for k in values)
        with self.transaction() as conn:
            conn.execute(f"UPDATE WorkflowRun SET {assignments} WHERE wfID = ?", (*values.values(), wf_id))

    def get_run(self, wf_id: int) -> WorkflowRun:
        rows = self._query("SELECT * FROM WorkflowRun WHERE wfID = ?", (wf_id,))
        if not rows:
            raise UnknownWorkflow(str(wf_id))
        r = rows[0]
        return WorkflowRun(
            wf_id=r["wfID"],
            state=r["state"],
            strategy=r["strategy"],
            instrumented=bool(r["instrumented"]),
            makespan_s=r["makespan_s"],
            unmapped=tuple(tuple(u) for u in json.loads(r["unmapped"])),
            aggregated=bool(r["aggregated"]),
            replay_of=r["replay_of"],
        )

    # flavor catalog snapshot -------------------------------------------------------

    def record_flavor(self, flavor: Flavor) -> None:
        with self.transaction() as conn:
            row = conn.execute("SELECT * FROM FlavorCatalog WHERE flavorid = ?", (flavor.flavor_id,)).fetchone()
            if row is None:
                conn.execute(
                    "INSERT INTO FlavorCatalog VALUES (?,?,?,?,?)",
                    (flavor.flavor_id, flavor.name, flavor.vcpus, flavor.ram_mb, flavor.disk_gb),
                )
            elif (row["vcpus"], row["ram_mb"], row["disk_gb"]) != (flavor.vcpus, flavor.ram_mb, flavor.disk_gb):
                raise InconsistentFlavor(f"flavor {flavor.flavor_id} changed shape")

    def flavor_catalog(self) -> dict[int, tuple[int, int, int]]:
        rows = self._query("SELECT flavorid, vcpus, ram_mb, disk_gb FROM FlavorCatalog")
        return {r[0]: (r[1], r[2], r[3]) for r in rows}

    # final mappings ----------------------------------------------------------------

    def insert_cap_record(self, rec: CAPRecord) -> int:
        self.require(rec.wf_id)
        flavor = Flavor(rec.flavor_id, rec.flavor_name, rec.min_cpu, rec.min_ram_mb, rec.min_hd_gb)
        with self.transaction() as conn:
            self.record_flavor(flavor)
            try:
                cur = conn.execute(
                    "INSERT INTO WfCloudMapping (wfID, job_name, nodename, flavorid, flavorname, minRAM,"
                    " minHD, minCPU, image_name, image_id, extra) VALUES (?,?,?,?,?,?,?,?,?,?,?)",
                    (
                        rec.wf_id, rec.job_name, rec.nodename, rec.flavor_id, rec.flavor_name,
                        rec.min_ram_mb, rec.min_hd_gb, rec.min_cpu, rec.image_name, rec.image_id,
                        canonical_json(rec.extra),
                    ),
                )
            except sqlite3.IntegrityError:
                raise DuplicateMapping(f"{rec.wf_id}/{rec.job_name}") from None
            return cur.lastrowid

    def get_cap(self, wf_id: int) -> list[CAPRecord]:
        self.require(wf_id)
        rows = self._query("SELECT * FROM WfCloudMapping WHERE wfID = ? ORDER BY id", (wf_id,))
        return [_cap_from_row(r) for r in rows]

    def get_cap_record(self, wf_id: int, job_name: str) -> CAPRecord | None:
        rows = self._query("SELECT * FROM WfCloudMapping WHERE wfID = ? AND job_name = ?", (wf_id, job_name))
        return _cap_from_row(rows[0]) if rows else None

    def insert_cpu_spec(self, wf_id: int, job_name: str, arch: str, os: str, mips: int, kflops: int) -> None:
        with self.transaction() as conn:
            row = conn.execute(
                "SELECT id FROM WfCloudMapping WHERE wfID = ? AND job_name = ?", (wf_id, job_name)
            ).fetchone()
            if row is None:
                raise UnknownWorkflow(f"no mapping for {wf_id}/{job_name}")
            conn.execute(
                "INSERT OR REPLACE INTO CPUSpecs (mapping_id, arch, os, mips, kflops) VALUES (?,?,?,?,?)",
                (row[0], arch, os, mips, kflops),
            )

    def get_cpu_specs(self, wf_id: int) -> dict[str, CpuSpecRow]:
        rows = self._query(
            "SELECT m.job_name, c.arch, c.os, c.mips, c.kflops FROM CPUSpecs c"
            " JOIN WfCloudMapping m ON m.id = c.mapping_id WHERE m.wfID = ? ORDER BY m.id",
            (wf_id,),
        )
        return {r[0]: CpuSpecRow(wf_id, r[0], r[1], r[2], r[3], r[4]) for r in rows}

    # eager temporary mappings --------------------------------------------------------

    def upsert_temp_mapping(self, tm: TempMapping) -> None:
        cols = ("wfID", "job_name", *_VM_COLUMNS, "capture_time")
        with self.transaction() as conn:
            conn.execute(
                f"INSERT OR REPLACE INTO WfCloudTempMapping ({', '.join(cols)})"
                f" VALUES ({', '.join('?' * len(cols))})",
                (tm.wf_id, tm.job_name, *_vm_values(tm.vm), tm.capture_time),
            )

    def get_temp_mapping(self, wf_id: int, job_name: str) -> TempMapping | None:
        rows = self._query(
            "SELECT * FROM WfCloudTempMapping WHERE wfID = ? AND job_name = ?", (wf_id, job_name)
        )
        if not rows:
            return None
        r = rows[0]
        return TempMapping(r["wfID"], r["job_name"], _vm_from_row(r), r["capture_time"])

    def take_temp_mapping(self, wf_id: int, job_name: str) -> TempMapping | None:
        with self.transaction() as conn:
            tm = self.get_temp_mapping(wf_id, job_name)
            if tm is not None:
                conn.execute(
                    "DELETE FROM WfCloudTempMapping WHERE wfID = ? AND job_name = ?", (wf_id, job_name)
                )
            return tm

    def count_temp_mappings(self, wf_id: int | None = None) -> int:
        if wf_id is None:
            return self._query("SELECT COUNT(*) FROM WfCloudTempMapping")[0][0]
        return self._query("SELECT COUNT(*) FROM WfCloudTempMapping WHERE wfID = ?", (wf_id,))[0][0]

    # SNoHi job-host rows --------------------------------------------------------------

    def upsert_job_host(self, wf_id: int, job_name: str, host_ip: str, hostname: str) -> None:
        with self.transaction() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO JobHostTempMap VALUES (?,?,?,?)", (wf_id, job_name, host_ip, hostname)
            )

    def get_job_hosts(self, wf_id: int) -> dict[str, JobHostTemp]:
        rows = self._query("SELECT * FROM JobHostTempMap WHERE wfID = ?", (wf_id,))
        return {r["job_name"]: JobHostTemp(wf_id, r["job_name"], r["host_ip"], r["hostname"]) for r in rows}

    def delete_job_host(self, wf_id: int, job_name: str) -> None:
        with self.transaction() as conn:
            conn.execute("DELETE FROM JobHostTempMap WHERE wfID = ? AND job_name = ?", (wf_id, job_name))

    # cloud files -----------------------------------------------------------------------

    def upsert_cloud_file(self, rec: CloudFileRecord) -> int:
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO CloudFileCatalog (container, keyname, md5, metadata, created, modified)"
                " VALUES (?,?,?,?,?,?) ON CONFLICT (container, keyname) DO UPDATE SET"
                " md5 = excluded.md5, metadata = excluded.metadata, modified = excluded.modified",
                (rec.container, rec.keyname, rec.md5, canonical_json(dict(rec.metadata)), rec.created, rec.modified),
            )
            row = conn.execute(
                "SELECT file_id FROM CloudFileCatalog WHERE container = ? AND keyname = ?",
                (rec.container, rec.keyname),
            ).fetchone()
            return row[0]

    def link_job_file(self, wf_id: int, job_name: str, file_id: int, direction: str) -> None:
        with self.transaction() as conn:
            conn.execute(
                "INSERT OR IGNORE INTO JobCloudFile VALUES (?,?,?,?)", (wf_id, job_name, file_id, direction)
            )

    def get_job_files(self, wf_id: int, direction: str | None = None) -> list[JobCloudFile]:
        sql = (
            "SELECT j.wfID, j.job_name, j.direction, f.container, f.keyname, f.md5, f.metadata,"
            " f.created, f.modified FROM JobCloudFile j JOIN CloudFileCatalog f ON f.file_id = j.file_id"
            " WHERE j.wfID = ?"
        )
        params: tuple = (wf_id,)
        if direction is not None:
            sql += " AND j.direction = ?"
            params += (direction,)
        rows = self._query(sql + " ORDER BY j.job_name, f.keyname", params)
        return [JobCloudFile(*tuple(r)) for r in rows]

    # lazy VM observations ------------------------------------------------------------

    def record_vm_observation(self, vm: VmInfo, seen_at: float) -> bool:
        """Store a sighting; returns True when the (vm, created_at) pair is new."""
        with self.transaction() as conn:
            cur = conn.execute(
                "UPDATE LazyVmObservation SET last_seen = ? WHERE vm_id = ? AND created_at = ?",
                (seen_at, vm.vm_id, vm.created_at),
            )
            if cur.rowcount:
                return False
            cols = (*_VM_COLUMNS, "first_seen", "last_seen")
            conn.execute(
                f"INSERT INTO LazyVmObservation ({', '.join(cols)}) VALUES ({', '.join('?' * len(cols))})",
                (*_vm_values(vm), seen_at, seen_at),
            )
            return True

    def observations(self, ip: str | None = None) -> list[LazyVmObservation]:
        if ip is None:
            rows = self._query("SELECT * FROM LazyVmObservation ORDER BY created_at, vm_id")
        else:
            rows = self._query("SELECT * FROM LazyVmObservation WHERE ip = ? ORDER BY created_at, vm_id", (ip,))
        return [LazyVmObservation(_vm_from_row(r), r["first_seen"], r["last_seen"]) for r in rows]

    def find_vm_by_ip_near(self, ip: str, t: float) -> LazyVmObservation | None:
        """Observation with this IP whose creation time is nearest ``t``.

        Exact distance ties go to the VM created at or before ``t``.
        """
        candidates = self.observations(ip)
        if not candidates:
            return None
        return min(candidates, key=lambda o: (abs(o.created_at - t), o.created_at > t, o.created_at))

    # whole-workflow export -------------------------------------------------------------

    def export_workflow(self, wf_id: int) -> dict:
        src = self.get_source(wf_id)
        run = self.get_run(wf_id)
        return {
            "format": "recap-provenance/1",
            "source": asdict(src),
            "run": {**asdict(run), "unmapped": [list(u) for u in run.unmapped]},
            "cap": [asdict(r) for r in self.get_cap(wf_id)],
            "cpu_specs": [asdict(c) for c in self.get_cpu_specs(wf_id).values()],
            "files": [asdict(f) for f in self.get_job_files(wf_id)],
        }

    def import_workflow(self, doc: dict) -> int:
        src = doc["source"]
        run = doc["run"]
        with self.transaction():
            wf_id = self.register_source(
                src["wms_wfid"], src["wf_dag"], src["wf_site"], src["wf_tc"], src["wf_props"],
                instrumented=run.get("instrumented", False),
            )
            self.update_run(
                wf_id,
                state=run["state"],
                strategy=run["strategy"],
                makespan_s=run["makespan_s"],
                unmapped=run["unmapped"],
                aggregated=run["aggregated"],
            )
            for rec in doc["cap"]:
                self.insert_cap_record(CAPRecord(**{**rec, "wf_id": wf_id}))
            for cpu in doc["cpu_specs"]:
                self.insert_cpu_spec(wf_id, cpu["job_name"], cpu["arch"], cpu["os"], cpu["mips"], cpu["kflops"])
            for f in doc["files"]:
                rec = CloudFileRecord(
                    f["container"], f["keyname"], f["md5"], json.loads(f["metadata"]), f["created"], f["modified"]
                )
                self.link_job_file(wf_id, f["job_name"], self.upsert_cloud_file(rec), f["direction"])
        return wf_id
