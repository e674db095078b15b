"""Expressions, instances, kernel-call algorithms and their FLOP counts.

Two expressions are modelled:

* ``chain`` -- the matrix chain ``X_0 X_1 ... X_{n-1}`` (``n = 4`` is ``ABCD``),
  evaluated purely with GEMM calls;
* ``aatb`` -- ``A A^T B`` with ``A`` of size ``d0 x d1`` and ``B`` of size
  ``d0 x d2``, evaluated with GEMM, SYRK and SYMM.

Algorithms are kept symbolic (dimensions are indices into an instance's size
tuple) and bound to concrete sizes with :meth:`Algorithm.bind`.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class ExpressionError(ValueError):
    pass


class Kernel(str, enum.Enum):
    GEMM = "gemm"
    SYRK = "syrk"
    SYMM = "symm"
    COPY = "copy_triangle"


@dataclass(frozen=True)
class ExpressionKind:
    name: str
    n: int = 0

    def __post_init__(self) -> None:
        if self.name == "chain":
            if self.n < 2:
                raise ExpressionError(f"matrix chain needs n >= 2, got {self.n}")
        elif self.name == "aatb":
            if self.n != 0:
                raise ExpressionError("aatb takes no length parameter")
        else:
            raise ExpressionError(f"unknown expression: {self.name!r}")

    @classmethod
    def chain(cls, n: int = 4) -> "ExpressionKind":
        return cls("chain", n)

    @classmethod
    def aatb(cls) -> "ExpressionKind":
        return cls("aatb")

    @classmethod
    def parse(cls, text: str) -> "ExpressionKind":
        """Parse ``"chain4"``, ``"chain"`` (= chain4), ``"chain7"`` or ``"aatb"``."""
        t = text.strip().lower()
        if t == "aatb":
            return cls.aatb()
        if t.startswith("chain"):
            rest = t[len("chain"):]
            try:
                return cls.chain(int(rest) if rest else 4)
            except ValueError:
                pass
        raise ExpressionError(f"unknown expression: {text!r}")

    @property
    def ndims(self) -> int:
        return self.n + 1 if self.name == "chain" else 3

    def __str__(self) -> str:
        return f"chain{self.n}" if self.name == "chain" else "aatb"


@dataclass(frozen=True)
class Instance:
    kind: ExpressionKind
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != self.kind.ndims:
            raise ExpressionError(
                f"{self.kind} needs {self.kind.ndims} dims, got {len(dims)}"
            )
        if any(d < 1 for d in dims):
            raise ExpressionError(f"dimensions must be >= 1: {dims}")

    def with_dim(self, index: int, value: int) -> "Instance":
        dims = list(self.dims)
        dims[index] = value
        return Instance(self.kind, tuple(dims))

    def input_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        if self.kind.name == "chain":
            return [(d[i], d[i + 1]) for i in range(self.kind.n)]
        return [(d[0], d[1]), (d[0], d[2])]

    def result_shape(self) -> tuple[int, int]:
        d = self.dims
        if self.kind.name == "chain":
            return (d[0], d[-1])
        return (d[0], d[2])

    def to_dict(self) -> dict:
        return {"kind": str(self.kind), "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        return cls(ExpressionKind.parse(data["kind"]), tuple(data["dims"]))


@dataclass(frozen=True)
class Operand:
    """Reference to an original input (by position) or an intermediate (by id)."""

    source: str  # "input" | "temp"
    index: int

    def __str__(self) -> str:
        return f"{'in' if self.source == 'input' else 'M'}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "Operand":
        if text.startswith("in"):
            return cls("input", int(text[2:]))
        if text.startswith("M"):
            return cls("temp", int(text[1:]))
        raise ExpressionError(f"bad operand reference {text!r}")


def _in(i: int) -> Operand:
    return Operand("input", i)


def _tmp(i: int) -> Operand:
    return Operand("temp", i)


_REQUIRED_DIMS = {
    Kernel.GEMM: ("m", "n", "k"),
    Kernel.SYRK: ("m", "k"),
    Kernel.SYMM: ("m", "n"),
    Kernel.COPY: ("m",),
}


@dataclass(frozen=True)
class Step:
    """One concrete kernel call (or the zero-FLOP triangle copy).

    GEMM computes an ``m x n`` product with inner size ``k``; ``trans_a`` /
    ``trans_b`` mean the stored input is used transposed. SYRK produces the
    lower triangle of an ``m x m`` result from an ``m x k`` input. SYMM
    multiplies a symmetric ``m x m`` matrix (lower triangle referenced) by an
    ``m x n`` one. The copy mirrors the lower triangle of an ``m x m`` matrix.
    """

    kernel: Kernel
    m: int | None = None
    n: int | None = None
    k: int | None = None
    trans_a: bool = False
    trans_b: bool = False
    inputs: tuple[Operand, ...] = ()
    output: int = 0

    def __post_init__(self) -> None:
        kernel = Kernel(self.kernel)
        object.__setattr__(self, "kernel", kernel)
        need = _REQUIRED_DIMS[kernel]
        for name in ("m", "n", "k"):
            value = getattr(self, name)
            if name in need:
                if value is None or int(value) < 1:
                    raise ExpressionError(f"{kernel.value} requires {name} >= 1")
                object.__setattr__(self, name, int(value))
            elif value is not None:
                raise ExpressionError(f"{kernel.value} takes no {name}")
        if kernel is not Kernel.GEMM and (self.trans_a or self.trans_b):
            raise ExpressionError("transpose flags only apply to gemm")

    @property
    def key(self) -> tuple:
        """Identity of the call for benchmarking; operand references are ignored."""
        return (self.kernel.value, self.trans_a, self.trans_b, self.m, self.n, self.k)

    def input_shapes(self) -> list[tuple[int, int]]:
        """Stored shapes of the call's inputs."""
        m, n, k = self.m, self.n, self.k
        if self.kernel is Kernel.GEMM:
            a = (k, m) if self.trans_a else (m, k)
            b = (n, k) if self.trans_b else (k, n)
            return [a, b]
        if self.kernel is Kernel.SYRK:
            return [(m, k)]
        if self.kernel is Kernel.SYMM:
            return [(m, m), (m, n)]
        return [(m, m)]

    def output_shape(self) -> tuple[int, int]:
        if self.kernel is Kernel.GEMM or self.kernel is Kernel.SYMM:
            return (self.m, self.n)
        return (self.m, self.m)

    def describe(self) -> str:
        ins = ", ".join(str(x) for x in self.inputs)
        if self.kernel is Kernel.GEMM:
            ta = "T" if self.trans_a else "N"
            tb = "T" if self.trans_b else "N"
            return f"M{self.output} := gemm{ta}{tb}({ins}) [{self.m}x{self.n}x{self.k}]"
        dims = "x".join(str(getattr(self, d)) for d in _REQUIRED_DIMS[self.kernel])
        return f"M{self.output} := {self.kernel.value}({ins}) [{dims}]"

    def to_dict(self) -> dict:
        return {
            "kind": self.kernel.value,
            "m": self.m,
            "n": self.n,
            "k": self.k,
            "trans_a": self.trans_a,
            "trans_b": self.trans_b,
            "inputs": [str(x) for x in self.inputs],
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        return cls(
            kernel=Kernel(data["kind"]),
            m=data.get("m"),
            n=data.get("n"),
            k=data.get("k"),
            trans_a=bool(data.get("trans_a", False)),
            trans_b=bool(data.get("trans_b", False)),
            inputs=tuple(Operand.parse(x) for x in data.get("inputs", ())),
            output=int(data.get("output", 0)),
        )


def flop_count_step(step: Step) -> int:
    if step.kernel is Kernel.GEMM:
        return 2 * step.m * step.n * step.k
    if step.kernel is Kernel.SYRK:
        return (step.m + 1) * step.m * step.k
    if step.kernel is Kernel.SYMM:
        return 2 * step.m * step.m * step.n
    return 0


@dataclass(frozen=True)
class StepTemplate:
    """A :class:`Step` whose sizes are indices into an instance's dims."""

    kernel: Kernel
    m: int | None = None
    n: int | None = None
    k: int | None = None
    trans_a: bool = False
    trans_b: bool = False
    inputs: tuple[Operand, ...] = ()
    output: int = 0

    def bind(self, dims: Sequence[int]) -> Step:
        pick = lambda i: None if i is None else dims[i]  # noqa: E731
        return Step(
            self.kernel,
            pick(self.m),
            pick(self.n),
            pick(self.k),
            self.trans_a,
            self.trans_b,
            self.inputs,
            self.output,
        )


@dataclass(frozen=True)
class Algorithm:
    id: int
    kind: ExpressionKind
    templates: tuple[StepTemplate, ...]
    label: str = ""

    def bind(self, inst: Instance) -> tuple[Step, ...]:
        if inst.kind != self.kind:
            raise ExpressionError(
                f"algorithm for {self.kind} applied to a {inst.kind} instance"
            )
        return tuple(t.bind(inst.dims) for t in self.templates)

    @property
    def kernel_steps(self) -> int:
        return sum(1 for t in self.templates if t.kernel is not Kernel.COPY)

    def to_dict(self, inst: Instance | None = None) -> dict:
        out = {"id": self.id, "kind": str(self.kind), "label": self.label}
        if inst is not None:
            out["instance"] = inst.to_dict()
            out["steps"] = [s.to_dict() for s in self.bind(inst)]
        else:
            out["steps"] = [
                {
                    "kind": t.kernel.value,
                    "m": t.m,
                    "n": t.n,
                    "k": t.k,
                    "trans_a": t.trans_a,
                    "trans_b": t.trans_b,
                    "inputs": [str(x) for x in t.inputs],
                    "output": t.output,
                    "dims_are_indices": True,
                }
                for t in self.templates
            ]
        return out


def flop_count_algorithm(alg: Algorithm, inst: Instance) -> int:
    return sum(flop_count_step(s) for s in alg.bind(inst))


# -- enumeration -----------------------------------------------------------


def chain_orders(n: int) -> list[tuple[int, ...]]:
    """All multiplication orders of an ``n``-matrix chain, lexicographically.

    An order lists, for each multiplication, the position of the left factor
    of the adjacent pair being multiplied in the *current* operand list.
    """
    return list(itertools.product(*(range(r) for r in range(n - 1, 0, -1))))


def _chain_algorithm(alg_id: int, n: int, order: Sequence[int]) -> Algorithm:
    # operand list entries: (row dim index, col dim index, reference, label)
    current = [(i, i + 1, _in(i), chr(ord("A") + i) if n <= 26 else f"X{i}") for i in range(n)]
    templates = []
    labels = []
    for out_id, pos in enumerate(order, start=1):
        (r, _, ref_l, lab_l), (_, c, ref_r, lab_r) = current[pos], current[pos + 1]
        k = current[pos][1]
        templates.append(
            StepTemplate(Kernel.GEMM, m=r, n=c, k=k, inputs=(ref_l, ref_r), output=out_id)
        )
        labels.append(f"M{out_id} := {lab_l}{lab_r}")
        current[pos: pos + 2] = [(r, c, _tmp(out_id), f"M{out_id}")]
    return Algorithm(alg_id, ExpressionKind.chain(n), tuple(templates), "; ".join(labels))


def _aatb_algorithms() -> list[Algorithm]:
    kind = ExpressionKind.aatb()
    A, B = _in(0), _in(1)
    syrk = StepTemplate(Kernel.SYRK, m=0, k=1, inputs=(A,), output=1)
    gemm_aat = StepTemplate(Kernel.GEMM, m=0, n=0, k=1, trans_b=True, inputs=(A, A), output=1)
    return [
        Algorithm(1, kind, (
            syrk,
            StepTemplate(Kernel.SYMM, m=0, n=2, inputs=(_tmp(1), B), output=2),
        ), "M1 := syrk(A); symm(M1, B)"),
        Algorithm(2, kind, (
            syrk,
            StepTemplate(Kernel.COPY, m=0, inputs=(_tmp(1),), output=2),
            StepTemplate(Kernel.GEMM, m=0, n=2, k=0, inputs=(_tmp(2), B), output=3),
        ), "M1 := syrk(A); M2 := full(M1); gemm(M2, B)"),
        Algorithm(3, kind, (
            gemm_aat,
            StepTemplate(Kernel.SYMM, m=0, n=2, inputs=(_tmp(1), B), output=2),
        ), "M1 := gemm(A, A^T); symm(M1, B)"),
        Algorithm(4, kind, (
            gemm_aat,
            StepTemplate(Kernel.GEMM, m=0, n=2, k=0, inputs=(_tmp(1), B), output=2),
        ), "M1 := gemm(A, A^T); gemm(M1, B)"),
        Algorithm(5, kind, (
            StepTemplate(Kernel.GEMM, m=1, n=2, k=0, trans_a=True, inputs=(A, B), output=1),
            StepTemplate(Kernel.GEMM, m=0, n=2, k=1, inputs=(A, _tmp(1)), output=2),
        ), "M1 := gemm(A^T, B); gemm(A, M1)"),
    ]


def enumerate_algorithms(kind: ExpressionKind) -> list[Algorithm]:
    if not isinstance(kind, ExpressionKind):
        raise ExpressionError(f"unknown expression: {kind!r}")
    if kind.name == "chain":
        return [
            _chain_algorithm(i, kind.n, order)
            for i, order in enumerate(chain_orders(kind.n), start=1)
        ]
    if kind.name == "aatb":
        return _aatb_algorithms()
    raise ExpressionError(f"unknown expression: {kind}")


def parenthesization(alg: Algorithm) -> str:
    """Fully parenthesised form of a chain algorithm, e.g. ``((AB)(CD))``."""
    if alg.kind.name != "chain":
        raise ExpressionError("parenthesization is defined for matrix chains only")
    names = {}
    for t in alg.templates:
        parts = []
        for ref in t.inputs:
            if ref.source == "input":
                parts.append(f"X{ref.index}")
            else:
                parts.append(names[ref.index])
        names[t.output] = "(" + "".join(parts) + ")"
    return names[alg.templates[-1].output]


def check_executable(alg: Algorithm, inst: Instance) -> None:
    """Raise unless every step reads available operands of matching shape and
    the last step yields the expression's result shape."""
    shapes: dict[Operand, tuple[int, int]] = {
        _in(i): s for i, s in enumerate(inst.input_shapes())
    }
    steps = alg.bind(inst)
    for idx, step in enumerate(steps):
        expected = step.input_shapes()
        if len(step.inputs) != len(expected):
            raise ExpressionError(f"step {idx}: wrong number of inputs")
        for ref, want in zip(step.inputs, expected):
            if ref not in shapes:
                raise ExpressionError(f"step {idx}: operand {ref} not yet produced")
            if shapes[ref] != want:
                raise ExpressionError(
                    f"step {idx}: operand {ref} has shape {shapes[ref]}, need {want}"
                )
        out = _tmp(step.output)
        if out in shapes:
            raise ExpressionError(f"step {idx}: intermediate {out} produced twice")
        shapes[out] = step.output_shape()
    if shapes[_tmp(steps[-1].output)] != inst.result_shape():
        raise ExpressionError("final step does not produce the result shape")


def min_flops_chain_dp(dims: Sequence[int]) -> int:
    """Minimum FLOPs over all parenthesisations of a chain (2mnk per product)."""
    p = [int(d) for d in dims]
    if len(p) < 2:
        raise ExpressionError("need at least 2 dims (one matrix)")
    n = len(p) - 1
    cost = [[0] * n for _ in range(n)]
    for length in range(1, n):
        for i in range(n - length):
            j = i + length
            cost[i][j] = min(
                cost[i][s] + cost[s + 1][j] + 2 * p[i] * p[s + 1] * p[j + 1]
                for s in range(i, j)
            )
    return cost[0][n - 1]


def cheapest_set(algorithms: Iterable[Algorithm], inst: Instance) -> frozenset[int]:
    counts = {a.id: flop_count_algorithm(a, inst) for a in algorithms}
    if not counts:
        raise ExpressionError("no algorithms given")
    best = min(counts.values())
    return frozenset(i for i, f in counts.items() if f == best)


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)
