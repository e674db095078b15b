import math
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flopanomaly.execution import (
    BlasBackend,
    ConfigError,
    EfficiencyProfile,
    KernelCurve,
    KernelError,
    MachineConfig,
    MeasurementProtocol,
    SyntheticBackend,
    _sample,
    efficiency,
    measure_algorithm,
    measure_call_isolated,
)
from flopanomaly.expr import ExpressionKind, Instance, Kernel, Step, enumerate_algorithms

AATB = ExpressionKind.aatb()
CHAIN4 = ExpressionKind.chain(4)


def constant_backend(e, copy_bandwidth=1e10, noise=0.0, seed=0):
    return SyntheticBackend(EfficiencyProfile.shared(
        KernelCurve.constant(e), copy_bandwidth=copy_bandwidth, noise_stddev=noise, rng_seed=seed))


def test_configs_validate():
    with pytest.raises(ConfigError):
        MeasurementProtocol(flush_multiplier=0)
    with pytest.raises(ConfigError):
        MeasurementProtocol(repetitions=0)
    with pytest.raises(ConfigError):
        MachineConfig(peak_flops=0)
    with pytest.raises(ConfigError):
        MachineConfig(thread_count=0)
    with pytest.raises(ConfigError):
        KernelCurve(e_max=1.5)
    with pytest.raises(ConfigError):
        KernelCurve(tau=0)
    with pytest.raises(ConfigError):
        EfficiencyProfile(copy_bandwidth=0)
    assert MeasurementProtocol().repetitions == 10


def test_flush_buffer_size():
    machine = MachineConfig(llc_bytes=14 * 2**20)
    protocol = MeasurementProtocol(flush_multiplier=4)
    assert protocol.flush_bytes(machine) == 56 * 2**20
    b = BlasBackend()
    b.flush_cache(machine, protocol)
    assert b._flush_buf.nbytes == 56 * 2**20
    assert SyntheticBackend().flush_cache(machine, protocol) is None


def test_synthetic_constant_profile_example():
    machine = MachineConfig(peak_flops=1e9)
    kind = ExpressionKind.chain(2)
    (alg,) = enumerate_algorithms(kind)
    t = measure_algorithm(constant_backend(0.5), alg, Instance(kind, (100, 100, 100)),
                          MeasurementProtocol(repetitions=3), machine)
    assert t.total.flops == 2 * 10**6
    assert t.total.median_seconds == pytest.approx(4e-3, rel=1e-15)
    assert t.total.efficiency == pytest.approx(0.5, rel=1e-15)


def test_copy_step_charged_in_aatb_alg2():
    machine = MachineConfig(peak_flops=1e9)
    bw = 2e9
    backend = constant_backend(0.5, copy_bandwidth=bw)
    alg2 = enumerate_algorithms(AATB)[1]
    inst = Instance(AATB, (300, 200, 100))
    t = measure_algorithm(backend, alg2, inst, MeasurementProtocol(repetitions=1), machine)
    d0, d1, d2 = inst.dims
    syrk = (d0 + 1) * d0 * d1 / (1e9 * 0.5)
    copy = d0 * d0 * 8 / bw
    gemm = 2 * d0 * d0 * d2 / (1e9 * 0.5)
    assert [s.median_seconds for s in t.steps] == pytest.approx([syrk, copy, gemm], rel=1e-14)
    assert t.total.median_seconds == pytest.approx(syrk + copy + gemm, rel=1e-14)
    assert t.steps[1].efficiency == 0.0 and t.steps[1].flops == 0


def test_single_repetition_median_is_sample():
    t = measure_call_isolated(constant_backend(0.7), Step(Kernel.SYRK, m=50, k=60),
                              MeasurementProtocol(repetitions=1), MachineConfig())
    assert t.raw_seconds == (t.median_seconds,)


def test_isolated_gemm_example_and_determinism():
    machine = MachineConfig(peak_flops=1e9)
    step = Step(Kernel.GEMM, m=1000, n=1000, k=1000)
    b = constant_backend(0.8)
    t1 = measure_call_isolated(b, step, MeasurementProtocol(), machine)
    t2 = measure_call_isolated(b, step, MeasurementProtocol(), machine)
    assert t1.median_seconds == pytest.approx(2.5, rel=1e-15)
    assert t1 == t2


def test_noisy_backend_reproducible_by_seed():
    step = Step(Kernel.GEMM, m=100, n=200, k=300)
    p, m = MeasurementProtocol(), MachineConfig()
    a = measure_call_isolated(constant_backend(0.5, noise=0.05, seed=3), step, p, m)
    b = measure_call_isolated(constant_backend(0.5, noise=0.05, seed=3), step, p, m)
    c = measure_call_isolated(constant_backend(0.5, noise=0.05, seed=4), step, p, m)
    assert a == b
    assert a.raw_seconds != c.raw_seconds
    assert len(set(a.raw_seconds)) > 1


@pytest.mark.parametrize("kind", [CHAIN4, AATB])
def test_synthetic_additivity(kind):
    profile = EfficiencyProfile(
        gemm=KernelCurve(0.9, 150.0, steps=((400, 0.7),)),
        syrk=KernelCurve(0.6, 90.0),
        symm=KernelCurve(0.5, 200.0),
        copy_bandwidth=5e9,
    )
    backend = SyntheticBackend(profile)
    p, m = MeasurementProtocol(repetitions=2), MachineConfig()
    inst = Instance(kind, tuple(range(130, 130 + 97 * kind.ndims, 97)))
    for alg in enumerate_algorithms(kind):
        whole = measure_algorithm(backend, alg, inst, p, m).total.median_seconds
        parts = sum(measure_call_isolated(backend, s, p, m).median_seconds for s in alg.bind(inst))
        assert whole == parts


def test_kernel_curve_shape_and_steps():
    c = KernelCurve(0.9, 100.0)
    assert c(100) == pytest.approx(0.9 * (1 - math.exp(-1)))
    assert c(10) < c(100) < c(1000) < 0.9
    assert KernelCurve.constant(0.4)(1) == 0.4
    s = KernelCurve(0.9, 1e-12, steps=((500, 0.6), (200, 0.3)))
    assert s.steps == ((200, 0.3), (500, 0.6))
    assert [s(x) for x in (199, 200, 499, 500, 2000)] == [0.9, 0.3, 0.3, 0.6, 0.6]


def test_efficiency_function():
    assert efficiency(2 * 10**9, 1.0, 4e9) == 0.5
    assert efficiency(0, 1.0, 4e9) == 0.0
    assert efficiency(8 * 10**9, 1.0, 4e9) == 2.0
    with pytest.raises(ValueError):
        efficiency(10, 0.0, 1e9)
    with pytest.raises(ValueError):
        efficiency(10, -1.0, 1e9)


def test_above_peak_flagged_not_clamped():
    s = _sample([0.5, 0.5, 0.5], 2 * 10**9, MachineConfig(peak_flops=1e9), 0.0)
    assert s.efficiency == 4.0
    assert s.suspicious


def test_timer_resolution_flag():
    s = _sample([1e-10, 2e-10], 10, MachineConfig(), resolution=1e-9)
    assert "below_timer_resolution" in s.flags


@given(st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=15), st.randoms())
def test_median_order_insensitive(raw, rnd):
    m = MachineConfig()
    shuffled = list(raw)
    rnd.shuffle(shuffled)
    a = _sample(raw, 1000, m, 0.0)
    b = _sample(shuffled, 1000, m, 0.0)
    assert a.median_seconds == b.median_seconds == statistics.median(raw)


@given(st.lists(st.floats(1e-6, 10.0), min_size=1, max_size=10), st.floats(1e8, 1e12))
def test_efficiency_scale_consistent(raw, peak):
    a = _sample(raw, 10**9, MachineConfig(peak_flops=peak), 0.0)
    b = _sample(raw, 10**9, MachineConfig(peak_flops=2 * peak), 0.0)
    assert b.efficiency == pytest.approx(a.efficiency / 2, rel=1e-15)


# -- host BLAS ----------------------------------------------------------------


@pytest.mark.parametrize("kind,dims", [(CHAIN4, (13, 7, 11, 5, 9)), (AATB, (12, 7, 9))])
def test_blas_algorithms_compute_the_expression(kind, dims):
    backend = BlasBackend(seed=1)
    inst = Instance(kind, dims)
    ops = backend.allocate(inst, ())
    mats = [ops[k] for k in sorted(ops, key=lambda o: o.index)]
    if kind.name == "chain":
        expected = np.linalg.multi_dot(mats)
    else:
        a, b = mats
        expected = a @ a.T @ b
    for alg in enumerate_algorithms(kind):
        backend.run(alg.bind(inst), ops, MachineConfig())
        np.testing.assert_allclose(backend.last_output, expected, rtol=1e-10, atol=1e-12,
                                   err_msg=f"algorithm {alg.id}")


def test_blas_operands_filled_in_unit_interval():
    ops = BlasBackend(seed=5).allocate(Instance(AATB, (40, 30, 20)), ())
    for a in ops.values():
        assert a.flags.f_contiguous
        assert a.min() >= -1 and a.max() <= 1


def test_blas_isolated_efficiency_in_unit_interval():
    machine = MachineConfig(peak_flops=1.28e11, llc_bytes=8 * 2**20)
    protocol = MeasurementProtocol(repetitions=3, flush_multiplier=1)
    backend = BlasBackend(seed=0)
    for step in (Step(Kernel.GEMM, m=500, n=500, k=500), Step(Kernel.SYRK, m=500, k=500),
                 Step(Kernel.SYMM, m=500, n=500)):
        t = measure_call_isolated(backend, step, protocol, machine)
        assert 0 < t.efficiency < 1, (step, t)
    t = measure_call_isolated(backend, Step(Kernel.COPY, m=300), protocol, machine)
    assert t.median_seconds > 0 and t.efficiency == 0.0


def test_blas_kernel_error_carries_step_index():
    backend = BlasBackend()
    kind = ExpressionKind.chain(3)
    inst = Instance(kind, (4, 5, 6, 7))
    alg = enumerate_algorithms(kind)[0]
    ops = backend.allocate(inst, ())
    ops[sorted(ops, key=lambda o: o.index)[2]] = np.zeros((3, 3), order="F")
    with pytest.raises(KernelError) as info:
        backend.run(alg.bind(inst), ops, MachineConfig())
    assert info.value.step_index == 1
