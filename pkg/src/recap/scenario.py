"""Scenario files: one TOML document describing a simulated cloud and its WMS.

Top-level keys ``name``, ``cidr``, ``seed`` and ``lifecycle`` (``static`` or
``dynamic``), plus these tables::

    [mips]          MipsDistribution fields (mode, center, spread, values, ...)
    [[flavors]]     id, name, vcpus, ram_mb, disk_gb
    [[images]]      id, name, software = [...]
    [dynamic]       flavor (or "random-flavor"), image, nodename_prefix
    [wms]           WmsConfig fields (os_overhead_mb, vm_linger_s, ...)
    [[pool]]        nodename, flavor, image, optional mips/kflops/arch/os

Built-in scenarios ship with the package: ``default``, ``testbed`` and
``condor-pools``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .cloud import Cloud, CpuSpec, Flavor, MachineImage, MipsDistribution, ObjectStore
from .errors import ConfigError
from .events import EventLoop
from .wms import SchedulingPolicy, WmsConfig, WorkflowManager

BUILTIN = ("default", "testbed", "condor-pools")


@dataclass(frozen=True)
class PoolVm:
    nodename: str
    flavor: str
    image: str
    mips: int | None = None
    kflops: int | None = None
    arch: str = "x86_64"
    os: str = "Linux"

    def cpu_spec(self) -> CpuSpec | None:
        if self.mips is None:
            return None
        kflops = self.kflops if self.kflops is not None else self.mips * 100
        return CpuSpec(arch=self.arch, os=self.os, mips=self.mips, kflops=kflops)


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    flavors: tuple[Flavor, ...] = ()
    images: tuple[MachineImage, ...] = ()
    cidr: str = "10.0.0.0/24"
    seed: int = 0
    lifecycle: str = "static"
    mips: dict = field(default_factory=dict)
    dynamic: dict = field(default_factory=dict)
    wms: dict = field(default_factory=dict)
    pool: tuple[PoolVm, ...] = ()

    def __post_init__(self):
        if self.lifecycle not in ("static", "dynamic"):
            raise ConfigError(f"scenario {self.name}: lifecycle must be static or dynamic")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def mips_distribution(self) -> MipsDistribution:
        try:
            values = dict(self.mips)
            if "values" in values:
                values["values"] = tuple(values["values"])
            return MipsDistribution(**{"seed": self.seed, **values})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {self.name}: bad [mips] table: {exc}") from None

    def wms_config(self) -> WmsConfig:
        try:
            return WmsConfig(**self.wms)
        except TypeError as exc:
            raise ConfigError(f"scenario {self.name}: bad [wms] table: {exc}") from None

    def policy(self, **overrides) -> SchedulingPolicy:
        """Scheduling policy for fresh submissions under this scenario."""
        kwargs: dict = {"lifecycle": self.lifecycle, "seed": self.seed}
        if self.lifecycle == "dynamic":
            kwargs["flavor"] = self.dynamic.get("flavor", "m1.small")
            kwargs["image"] = self.dynamic.get("image")
            kwargs["nodename_prefix"] = self.dynamic.get("nodename_prefix", "dyn")
        elif self.pool:
            # keep ordinary submissions off VMs provisioned later (e.g. for replays)
            kwargs["pool"] = tuple(vm.nodename for vm in self.pool)
        kwargs.update(overrides)
        return SchedulingPolicy(**kwargs)

    def build(self, clock: EventLoop | None = None) -> "Testbed":
        clock = clock or EventLoop()
        cloud = Cloud(
            clock=clock,
            flavors=self.flavors,
            images=self.images,
            cidr=self.cidr,
            mips=self.mips_distribution(),
            seed=self.seed,
        )
        for vm in self.pool:
            cloud.provision(vm.flavor, vm.image, vm.nodename, cpu_spec=vm.cpu_spec())
        objects = ObjectStore(clock)
        wms = WorkflowManager(cloud, objects, self.wms_config())
        return Testbed(self, clock, cloud, objects, wms)


@dataclass
class Testbed:
    """A built scenario: the clock, both cloud halves and the WMS on top."""

    scenario: Scenario
    clock: EventLoop
    cloud: Cloud
    objects: ObjectStore
    wms: WorkflowManager


def _table(doc: dict, key: str, kind: type, where: str):
    value = doc.get(key, kind())
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: '{key}' must be a {kind.__name__}")
    return value


def scenario_from_dict(doc: dict, where: str = "scenario") -> Scenario:
    try:
        flavors = tuple(
            Flavor(int(f["id"]), str(f["name"]), int(f["vcpus"]), int(f["ram_mb"]), int(f["disk_gb"]))
            for f in _table(doc, "flavors", list, where)
        )
        images = tuple(
            MachineImage(str(i["id"]), str(i["name"]), frozenset(i.get("software", ())))
            for i in _table(doc, "images", list, where)
        )
        pool = tuple(PoolVm(**p) for p in _table(doc, "pool", list, where))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    wms = _table(doc, "wms", dict, where)
    known = {f.name for f in fields(WmsConfig)}
    if set(wms) - known:
        raise ConfigError(f"{where}: unknown [wms] keys {sorted(set(wms) - known)}")
    return Scenario(
        name=str(doc.get("name", where)),
        flavors=flavors,
        images=images,
        cidr=str(doc.get("cidr", "10.0.0.0/24")),
        seed=int(doc.get("seed", 0)),
        lifecycle=str(doc.get("lifecycle", "static")),
        mips=_table(doc, "mips", dict, where),
        dynamic=_table(doc, "dynamic", dict, where),
        wms=wms,
        pool=pool,
    )


def load_scenario(ref: str | Path = "default") -> Scenario:
    """Load a built-in scenario by name or a TOML file by path."""
    if str(ref) in BUILTIN:
        text = resources.files("recap").joinpath("data", f"{ref}.toml").read_text()
        where = str(ref)
    else:
        path = Path(ref)
        if not path.is_file():
            raise ConfigError(f"no scenario named or located at {ref!r}")
        text = path.read_text()
        where = str(path)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return scenario_from_dict(doc, where)
