"""Synthetic job kernels.

A kernel turns a job's input files into its declared outputs plus a
stdout text.  Outputs are a pure function of the inputs, the job name
and its arguments, so identical replays produce identical digests.
"""

from __future__ import annotations

import hashlib
from typing import Callable

from .dax import JobSpec

Kernel = Callable[[JobSpec, dict[str, bytes]], tuple[dict[str, bytes], str]]

KERNELS: dict[str, Kernel] = {}


def kernel(name: str):
    def register(fn: Kernel) -> Kernel:
        KERNELS[name] = fn
        return fn

    return register


@kernel("synthetic")
def synthetic(job: JobSpec, inputs: dict[str, bytes]) -> tuple[dict[str, bytes], str]:
    h = hashlib.sha256()
    h.update(job.name.encode())
    for arg in job.args:
        h.update(b"\0" + arg.encode())
    for lfn in sorted(inputs):
        h.update(b"\1" + lfn.encode() + b"\1" + inputs[lfn])
    seed = h.hexdigest()
    outputs = {lfn: f"{lfn} {seed}\n".encode() for lfn in job.outputs}
    return outputs, f"{job.name}: consumed {len(inputs)} file(s), produced {len(outputs)}\n"


KERNELS["sleep"] = synthetic


@kernel("wordcount.split")
def wc_split(job: JobSpec, inputs: dict[str, bytes]) -> tuple[dict[str, bytes], str]:
    if len(inputs) != 1 or not job.outputs:
        raise ValueError("split needs exactly one input and at least one output")
    (data,) = inputs.values()
    words = data.split()
    n = len(job.outputs)
    chunk = -(-len(words) // n) if words else 0
    outputs = {}
    for i, lfn in enumerate(job.outputs):
        outputs[lfn] = b" ".join(words[i * chunk:(i + 1) * chunk]) + b"\n"
    return outputs, f"split {len(words)} words into {n} parts\n"


@kernel("wordcount.count")
def wc_count(job: JobSpec, inputs: dict[str, bytes]) -> tuple[dict[str, bytes], str]:
    total = sum(len(data.split()) for data in inputs.values())
    return {lfn: f"{total}\n".encode() for lfn in job.outputs}, f"counted {total} words\n"


@kernel("wordcount.merge")
def wc_merge(job: JobSpec, inputs: dict[str, bytes]) -> tuple[dict[str, bytes], str]:
    total = sum(int(data.strip() or 0) for data in inputs.values())
    return {lfn: f"{total}\n".encode() for lfn in job.outputs}, f"total words: {total}\n"


def resolve(executable: str, tc: dict[str, str]) -> Kernel:
    """Look the executable up in the transformation catalog, then in the registry."""
    name = tc.get(executable, executable)
    try:
        return KERNELS[name]
    except KeyError:
        raise KeyError(f"no transformation for {executable!r}") from None
