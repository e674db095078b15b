"""Running kernel calls under a fixed measurement protocol.

Two backends share one interface:

* :class:`SyntheticBackend` evaluates a closed-form efficiency model and is
  deterministic (optionally with seeded multiplicative noise);
* :class:`BlasBackend` calls the host's double precision BLAS through
  ``scipy.linalg.blas`` on column-major arrays.

A backend only knows how to flush the cache and how to run a list of steps
once, returning per-step wall times. Repetition, medians and efficiency are
handled by :func:`measure_algorithm` and :func:`measure_call_isolated`.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .expr import Algorithm, Instance, Kernel, Operand, Step, flop_count_step

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class KernelError(RuntimeError):
    """A backend failed while executing one step of a call sequence."""

    def __init__(self, step_index: int, step: Step, cause: BaseException):
        super().__init__(f"step {step_index} ({step.describe()}) failed: {cause}")
        self.step_index = step_index
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class MachineConfig:
    peak_flops: float = 1.28e11
    llc_bytes: int = 32 * 2**20
    thread_count: int = 1

    def __post_init__(self) -> None:
        if not self.peak_flops > 0:
            raise ConfigError("peak_flops must be > 0")
        if self.llc_bytes <= 0:
            raise ConfigError("llc_bytes must be > 0")
        if self.thread_count < 1:
            raise ConfigError("thread_count must be >= 1")


@dataclass(frozen=True)
class MeasurementProtocol:
    repetitions: int = 10
    flush_before_each_repetition: bool = True
    flush_multiplier: float = 4.0

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.flush_multiplier > 0:
            raise ConfigError("flush_multiplier must be > 0")

    def flush_bytes(self, machine: MachineConfig) -> int:
        return int(self.flush_multiplier * machine.llc_bytes)


@dataclass(frozen=True)
class TimingSample:
    median_seconds: float
    raw_seconds: tuple[float, ...]
    flops: int
    efficiency: float
    flags: tuple[str, ...] = ()

    @property
    def suspicious(self) -> bool:
        return "efficiency_above_peak" in self.flags


@dataclass(frozen=True)
class AlgorithmTiming:
    """Whole-algorithm timing plus the per-step samples it was assembled from."""

    algorithm_id: int
    total: TimingSample
    steps: tuple[TimingSample, ...]


def efficiency(flops: int, seconds: float, peak_flops: float) -> float:
    if not seconds > 0:
        raise ValueError(f"seconds must be > 0, got {seconds}")
    if not peak_flops > 0:
        raise ValueError(f"peak_flops must be > 0, got {peak_flops}")
    return flops / (seconds * peak_flops)


def _sample(raw: Sequence[float], flops: int, machine: MachineConfig,
            resolution: float) -> TimingSample:
    med = statistics.median(raw)
    flags = []
    if flops == 0:
        eff = 0.0
    elif med > 0:
        eff = efficiency(flops, med, machine.peak_flops)
    else:
        raise ValueError(f"nonpositive median time {med} for {flops} FLOPs")
    if eff > 1.0:
        flags.append("efficiency_above_peak")
    if resolution > 0 and min(raw) <= resolution:
        flags.append("below_timer_resolution")
    return TimingSample(med, tuple(raw), flops, eff, tuple(flags))


# -- synthetic model -------------------------------------------------------


@dataclass(frozen=True)
class KernelCurve:
    """``e(m, n, k) = e_max * (1 - exp(-min(dims) / tau))``.

    ``steps`` is a list of ``(threshold, e_max)`` overrides: the last pair
    whose threshold is ``<= min(dims)`` replaces ``e_max``.
    """

    e_max: float = 0.9
    tau: float = 100.0
    steps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        steps = tuple(sorted((int(t), float(e)) for t, e in self.steps))
        object.__setattr__(self, "steps", steps)
        for e in (self.e_max, *(e for _, e in steps)):
            if not 0 < e <= 1:
                raise ConfigError(f"e_max must be in (0, 1], got {e}")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")

    @classmethod
    def constant(cls, e: float) -> "KernelCurve":
        # exp(-1/1e-12) underflows to exactly 0.0, so e(.) == e for all dims >= 1
        return cls(e_max=e, tau=1e-12)

    def __call__(self, size: int) -> float:
        e_max = self.e_max
        for threshold, value in self.steps:
            if size >= threshold:
                e_max = value
        return e_max * (1.0 - math.exp(-size / self.tau))


@dataclass(frozen=True)
class EfficiencyProfile:
    gemm: KernelCurve = field(default_factory=KernelCurve)
    syrk: KernelCurve = field(default_factory=lambda: KernelCurve(0.8, 120.0))
    symm: KernelCurve = field(default_factory=lambda: KernelCurve(0.8, 120.0))
    copy_bandwidth: float = 1e10
    noise_stddev: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.copy_bandwidth > 0:
            raise ConfigError("copy_bandwidth must be > 0 (use inf for free copies)")
        if self.noise_stddev < 0:
            raise ConfigError("noise_stddev must be >= 0")

    @classmethod
    def shared(cls, curve: KernelCurve, **kw) -> "EfficiencyProfile":
        return cls(gemm=curve, syrk=curve, symm=curve, **kw)

    def kernel_efficiency(self, step: Step) -> float:
        if step.kernel is Kernel.GEMM:
            return self.gemm(min(step.m, step.n, step.k))
        if step.kernel is Kernel.SYRK:
            return self.syrk(min(step.m, step.k))
        if step.kernel is Kernel.SYMM:
            return self.symm(min(step.m, step.n))
        raise ValueError("copy steps have no FLOP efficiency")

    def model_seconds(self, step: Step, peak_flops: float) -> float:
        if step.kernel is Kernel.COPY:
            return step.m * step.m * 8 / self.copy_bandwidth
        return flop_count_step(step) / (peak_flops * self.kernel_efficiency(step))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EfficiencyProfile":
        data = dict(data)
        for name in ("gemm", "syrk", "symm"):
            if name in data and isinstance(data[name], dict):
                c = dict(data[name])
                c["steps"] = tuple(tuple(p) for p in c.get("steps", ()))
                data[name] = KernelCurve(**c)
        return cls(**data)


class Backend:
    name = "abstract"
    timer_resolution = 0.0

    def flush_cache(self, machine: MachineConfig, protocol: MeasurementProtocol) -> None:
        raise NotImplementedError

    def allocate(self, inst: Instance | None, steps: Sequence[Step]):
        """Prepare input operands; called outside any timed section."""
        return None

    def run(self, steps: Sequence[Step], operands, machine: MachineConfig) -> list[float]:
        """Execute ``steps`` back to back once; return per-step seconds."""
        raise NotImplementedError


class SyntheticBackend(Backend):
    name = "synthetic"

    def __init__(self, profile: EfficiencyProfile | None = None):
        self.profile = profile or EfficiencyProfile()
        self._rng = np.random.default_rng(self.profile.rng_seed)

    def flush_cache(self, machine, protocol) -> None:
        return None

    def run(self, steps, operands, machine) -> list[float]:
        out = []
        sigma = self.profile.noise_stddev
        for i, step in enumerate(steps):
            try:
                t = self.profile.model_seconds(step, machine.peak_flops)
            except (ValueError, ZeroDivisionError) as exc:
                raise KernelError(i, step, exc) from exc
            if sigma > 0:
                t *= max(1e-3, 1.0 + sigma * float(self._rng.standard_normal()))
            out.append(t)
        return out


# -- host BLAS -------------------------------------------------------------


class BlasBackend(Backend):
    """Double precision kernels from the host BLAS via ``scipy.linalg.blas``.

    Operands are Fortran-ordered so every call maps onto the column-major
    BLAS interface without copies; outputs are preallocated and written with
    ``overwrite_c``. Thread count is applied with threadpoolctl when present;
    pinning/affinity is left to the kernel library's environment variables.
    """

    name = "blas"

    def __init__(self, seed: int = 0, thread_count: int | None = None):
        from scipy.linalg import blas

        self._blas = blas
        self._rng = np.random.default_rng(seed)
        self._flush_buf: np.ndarray | None = None
        self.last_output: np.ndarray | None = None
        self.timer_resolution = time.get_clock_info("perf_counter").resolution
        self._limiter = None
        if thread_count is not None:
            try:
                from threadpoolctl import threadpool_limits

                self._limiter = threadpool_limits(limits=thread_count, user_api="blas")
            except ImportError:  # pragma: no cover
                log.warning("threadpoolctl missing; BLAS thread count not applied")

    def flush_cache(self, machine, protocol) -> None:
        nbytes = protocol.flush_bytes(machine)
        n = max(1, nbytes // 8)
        if self._flush_buf is None or self._flush_buf.size != n:
            self._flush_buf = np.zeros(n)
        buf = self._flush_buf
        buf += 1.0
        float(buf.sum())

    def _fill(self, shape) -> np.ndarray:
        return np.asfortranarray(self._rng.uniform(-1.0, 1.0, size=shape))

    def allocate(self, inst, steps):
        if inst is not None:
            return {Operand("input", i): self._fill(s)
                    for i, s in enumerate(inst.input_shapes())}
        # isolated call: every input is a fresh operand
        (step,) = steps
        ops = {}
        for j, shape in enumerate(step.input_shapes()):
            a = self._fill(shape)
            if step.kernel in (Kernel.SYMM, Kernel.COPY) and j == 0:
                a = np.asfortranarray(np.tril(a) + np.tril(a, -1).T)
            ops[("isolated", j)] = a
        return ops

    def run(self, steps, operands, machine) -> list[float]:
        blas = self._blas
        env = dict(operands)
        isolated = any(isinstance(k, tuple) and k and k[0] == "isolated" for k in env)
        times = []
        for i, step in enumerate(steps):
            if isolated:
                args = [env[("isolated", j)] for j in range(len(step.input_shapes()))]
            else:
                args = [env[ref] for ref in step.inputs]
            try:
                if step.kernel is Kernel.COPY:
                    c = args[0]
                    m = step.m
                    t0 = time.perf_counter()
                    for j in range(m - 1):
                        c[j, j + 1:] = c[j + 1:, j]
                    dt = time.perf_counter() - t0
                else:
                    c = np.zeros(step.output_shape(), order="F")
                    if step.kernel is Kernel.GEMM:
                        t0 = time.perf_counter()
                        blas.dgemm(1.0, args[0], args[1], 0.0, c,
                                   trans_a=int(step.trans_a), trans_b=int(step.trans_b),
                                   overwrite_c=1)
                        dt = time.perf_counter() - t0
                    elif step.kernel is Kernel.SYRK:
                        t0 = time.perf_counter()
                        blas.dsyrk(1.0, args[0], 0.0, c, trans=0, lower=1, overwrite_c=1)
                        dt = time.perf_counter() - t0
                    else:
                        t0 = time.perf_counter()
                        blas.dsymm(1.0, args[0], args[1], 0.0, c, side=0, lower=1,
                                   overwrite_c=1)
                        dt = time.perf_counter() - t0
            except Exception as exc:  # noqa: BLE001
                raise KernelError(i, step, exc) from exc
            times.append(dt)
            if not isolated:
                env[Operand("temp", step.output)] = c
        self.last_output = c if steps else None
        return times


def make_backend(name: str, profile: EfficiencyProfile | None = None, seed: int = 0,
                 thread_count: int | None = None) -> Backend:
    if name == "synthetic":
        return SyntheticBackend(profile)
    if name in ("blas", "real"):
        return BlasBackend(seed=seed, thread_count=thread_count)
    raise ConfigError(f"unknown backend {name!r}")


# -- measurement -----------------------------------------------------------


def flush_cache(backend: Backend, machine: MachineConfig, protocol: MeasurementProtocol) -> None:
    backend.flush_cache(machine, protocol)


def _measure_steps(backend, inst, steps, protocol, machine) -> tuple[TimingSample, tuple[TimingSample, ...]]:
    per_step: list[list[float]] = [[] for _ in steps]
    totals = []
    # inputs are only ever mirrored in place (idempotent), so one fill serves
    # every repetition; intermediates are allocated per run outside the timer
    operands = backend.allocate(inst, steps)
    for _ in range(protocol.repetitions):
        if protocol.flush_before_each_repetition:
            backend.flush_cache(machine, protocol)
        times = backend.run(steps, operands, machine)
        for acc, t in zip(per_step, times):
            acc.append(t)
        totals.append(sum(times))
    res = backend.timer_resolution
    step_samples = tuple(
        _sample(raw, flop_count_step(s), machine, res) for s, raw in zip(steps, per_step)
    )
    total = _sample(totals, sum(flop_count_step(s) for s in steps), machine, res)
    return total, step_samples


def measure_algorithm(backend: Backend, alg: Algorithm, inst: Instance,
                      protocol: MeasurementProtocol, machine: MachineConfig) -> AlgorithmTiming:
    """Time one algorithm on one instance: flush once per repetition, then run
    every step back to back; the algorithm time is the median total."""
    steps = alg.bind(inst)
    total, step_samples = _measure_steps(backend, inst, steps, protocol, machine)
    return AlgorithmTiming(alg.id, total, step_samples)


def measure_call_isolated(backend: Backend, step: Step, protocol: MeasurementProtocol,
                          machine: MachineConfig) -> TimingSample:
    total, _ = _measure_steps(backend, None, (step,), protocol, machine)
    return total
