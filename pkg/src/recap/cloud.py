"""Simulated IaaS layer: flavors, images, VMs with an IP pool, and object storage.

All timestamps are read from the shared :class:`~recap.events.EventLoop`
clock, so the cloud and the workflow engine agree on virtual time.
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import json
import random
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .errors import (
    AlreadyDestroyed,
    NameInUse,
    PoolExhausted,
    UnknownFlavor,
    UnknownImage,
    UnknownObject,
    UnknownVm,
)
from .events import EventLoop


@dataclass(frozen=True)
class Flavor:
    flavor_id: int
    name: str
    vcpus: int
    ram_mb: int
    disk_gb: int

    def __post_init__(self):
        for attr in ("vcpus", "ram_mb", "disk_gb"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"flavor {self.name}: {attr} must be >= 1")


@dataclass(frozen=True)
class MachineImage:
    image_id: str
    name: str
    software_manifest: frozenset[str] = frozenset()


@dataclass(frozen=True)
class CpuSpec:
    arch: str = "x86_64"
    os: str = "Linux"
    mips: int = 12500
    kflops: int = 1_250_000

    def __post_init__(self):
        if self.mips <= 0 or self.kflops <= 0:
            raise ValueError("mips and kflops must be positive")


class VmState(str, Enum):
    BUILDING = "BUILDING"
    RUNNING = "RUNNING"
    SHUTOFF = "SHUTOFF"
    DESTROYED = "DESTROYED"


@dataclass(frozen=True)
class VirtualMachine:
    vm_id: str
    nodename: str
    ip: str
    flavor: Flavor
    image: MachineImage
    cpu_spec: CpuSpec
    state: VmState
    created_at: float
    extra: Mapping[str, object] = field(default_factory=dict, compare=False)
    destroyed_at: float | None = None

    def extra_json(self) -> str:
        return json.dumps(dict(self.extra), sort_keys=True, separators=(",", ":"))


# m1.tiny disk is not published anywhere we rely on; 5 GB is a declared default
DEFAULT_FLAVORS = (
    Flavor(1, "m1.tiny", 1, 512, 5),
    Flavor(2, "m1.small", 1, 1024, 10),
    Flavor(3, "m1.medium", 2, 2048, 20),
    Flavor(4, "m1.large", 4, 4096, 40),
)


@dataclass
class MipsDistribution:
    """Per-VM MIPS generator.

    ``uniform`` draws integers from [center - spread, center + spread];
    ``fixed`` hands out ``values`` round-robin (a single value is the
    usual case for exact tests).
    """

    mode: str = "uniform"
    center: int = 12500
    spread: int = 1500
    values: tuple[int, ...] = (12500,)
    kflops_per_mips: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "fixed"):
            raise ValueError(f"unknown MIPS mode {self.mode!r}")
        if self.mode == "uniform" and self.center - self.spread <= 0:
            raise ValueError("MIPS distribution must stay positive")
        if self.mode == "fixed" and (not self.values or min(self.values) <= 0):
            raise ValueError("fixed MIPS values must be positive")
        self._rng = random.Random(self.seed)
        self._next = 0

    def draw(self) -> CpuSpec:
        if self.mode == "fixed":
            mips = self.values[self._next % len(self.values)]
            self._next += 1
        else:
            mips = self._rng.randint(self.center - self.spread, self.center + self.spread)
        return CpuSpec(mips=mips, kflops=max(1, round(mips * self.kflops_per_mips)))


class IpPool:
    """Lowest-free-address allocator over a CIDR; the first host is the gateway."""

    def __init__(self, cidr: str = "10.0.0.0/24"):
        net = ipaddress.ip_network(cidr)
        hosts = [int(h) for h in net.hosts()]
        self.cidr = cidr
        self._free = hosts[1:]
        heapq.heapify(self._free)

    def acquire(self) -> str:
        if not self._free:
            raise PoolExhausted(f"no free address left in {self.cidr}")
        return str(ipaddress.ip_address(heapq.heappop(self._free)))

    def release(self, ip: str) -> None:
        heapq.heappush(self._free, int(ipaddress.ip_address(ip)))

    def free_count(self) -> int:
        return len(self._free)


class Cloud:
    """Compute half of the simulated cloud (the CRM's view of it)."""

    def __init__(
        self,
        clock: EventLoop | None = None,
        flavors: Iterable[Flavor] = DEFAULT_FLAVORS,
        images: Iterable[MachineImage] = (),
        cidr: str = "10.0.0.0/24",
        mips: MipsDistribution | None = None,
        seed: int = 0,
    ):
        self.clock = clock or EventLoop()
        self._flavors_by_name: dict[str, Flavor] = {}
        self._flavors_by_id: dict[int, Flavor] = {}
        for f in flavors:
            self.add_flavor(f)
        self._images: dict[str, MachineImage] = {}
        for img in images:
            self.add_image(img)
        self.ip_pool = IpPool(cidr)
        self.mips = mips or MipsDistribution(seed=seed)
        self._id_rng = random.Random(f"vm-ids-{seed}")
        self._vms: dict[str, VirtualMachine] = {}
        self._running_names: dict[str, str] = {}

    # catalog ---------------------------------------------------------------

    def add_flavor(self, flavor: Flavor) -> None:
        if flavor.flavor_id in self._flavors_by_id or flavor.name in self._flavors_by_name:
            raise ValueError(f"duplicate flavor {flavor.flavor_id}/{flavor.name}")
        self._flavors_by_name[flavor.name] = flavor
        self._flavors_by_id[flavor.flavor_id] = flavor

    def add_image(self, image: MachineImage) -> None:
        if image.image_id in self._images:
            raise ValueError(f"duplicate image id {image.image_id}")
        self._images[image.image_id] = image

    def remove_image(self, image_id: str) -> None:
        if self._images.pop(image_id, None) is None:
            raise UnknownImage(image_id)

    def flavors(self) -> list[Flavor]:
        return sorted(self._flavors_by_id.values(), key=lambda f: f.flavor_id)

    def images(self) -> list[MachineImage]:
        return list(self._images.values())

    def get_flavor(self, ref: str | int) -> Flavor:
        """Resolve a flavor by name or numeric id."""
        if isinstance(ref, int) or (isinstance(ref, str) and ref.isdigit()):
            flavor = self._flavors_by_id.get(int(ref))
            if flavor is not None:
                return flavor
        flavor = self._flavors_by_name.get(str(ref))
        if flavor is None:
            raise UnknownFlavor(str(ref))
        return flavor

    def get_image(self, ref: str) -> MachineImage:
        """Resolve an image by id first, then by name."""
        if ref in self._images:
            return self._images[ref]
        for img in self._images.values():
            if img.name == ref:
                return img
        raise UnknownImage(ref)

    # lifecycle ---------------------------------------------------------------

    def provision(
        self,
        flavor_name: str | int,
        image_name: str,
        nodename: str,
        cpu_spec: CpuSpec | None = None,
        extra: Mapping[str, object] | None = None,
    ) -> VirtualMachine:
        flavor = self.get_flavor(flavor_name)
        image = self.get_image(image_name)
        if nodename in self._running_names:
            raise NameInUse(nodename)
        ip = self.ip_pool.acquire()
        vm = VirtualMachine(
            vm_id=str(uuid.UUID(int=self._id_rng.getrandbits(128), version=4)),
            nodename=nodename,
            ip=ip,
            flavor=flavor,
            image=image,
            cpu_spec=cpu_spec or self.mips.draw(),
            state=VmState.RUNNING,
            created_at=self.clock.now,
            extra=dict(extra or {}),
        )
        self._vms[vm.vm_id] = vm
        self._running_names[nodename] = vm.vm_id
        return vm

    def destroy(self, vm_id: str) -> None:
        vm = self._vms.get(vm_id)
        if vm is None:
            raise UnknownVm(vm_id)
        if vm.state == VmState.DESTROYED:
            raise AlreadyDestroyed(vm_id)
        self._vms[vm_id] = replace(vm, state=VmState.DESTROYED, destroyed_at=self.clock.now)
        self.ip_pool.release(vm.ip)
        del self._running_names[vm.nodename]

    def get_vm(self, vm_id: str) -> VirtualMachine:
        try:
            return self._vms[vm_id]
        except KeyError:
            raise UnknownVm(vm_id) from None

    def list_vms(self) -> tuple[VirtualMachine, ...]:
        """Point-in-time snapshot of RUNNING VMs, ordered by creation."""
        return tuple(vm for vm in self._vms.values() if vm.state == VmState.RUNNING)

    def vm_by_ip(self, ip: str) -> VirtualMachine | None:
        for vm in self._vms.values():
            if vm.state == VmState.RUNNING and vm.ip == ip:
                return vm
        return None

    def vm_by_name(self, nodename: str) -> VirtualMachine | None:
        vm_id = self._running_names.get(nodename)
        return self._vms[vm_id] if vm_id else None

    def is_running(self, vm_id: str) -> bool:
        vm = self._vms.get(vm_id)
        return vm is not None and vm.state == VmState.RUNNING


@dataclass(frozen=True)
class CloudFileRecord:
    container: str
    keyname: str
    md5: str
    metadata: Mapping[str, str]
    created: float
    modified: float
    size: int = 0


class ObjectStore:
    """Swift-like container/key store (the CSM's view of the cloud)."""

    def __init__(self, clock: EventLoop | None = None):
        self.clock = clock or EventLoop()
        self._containers: dict[str, dict[str, tuple[bytes, CloudFileRecord]]] = {}

    def put_object(
        self, container: str, keyname: str, data: bytes, metadata: Mapping[str, str] | None = None
    ) -> CloudFileRecord:
        objects = self._containers.setdefault(container, {})
        now = self.clock.now
        created = objects[keyname][1].created if keyname in objects else now
        rec = CloudFileRecord(
            container=container,
            keyname=keyname,
            md5=hashlib.md5(data).hexdigest(),
            metadata=dict(metadata or {}),
            created=created,
            modified=now,
            size=len(data),
        )
        objects[keyname] = (bytes(data), rec)
        return rec

    def get_object(self, container: str, keyname: str) -> tuple[bytes, CloudFileRecord]:
        try:
            return self._containers[container][keyname]
        except KeyError:
            raise UnknownObject(f"{container}/{keyname}") from None

    def head_object(self, container: str, keyname: str) -> CloudFileRecord:
        return self.get_object(container, keyname)[1]

    def has_object(self, container: str, keyname: str) -> bool:
        return keyname in self._containers.get(container, {})

    def list_objects(self, container: str, prefix: str = "") -> list[CloudFileRecord]:
        if container not in self._containers:
            raise UnknownObject(container)
        return [
            rec
            for key, (_, rec) in sorted(self._containers[container].items())
            if key.startswith(prefix)
        ]

    def containers(self) -> list[str]:
        return sorted(self._containers)
