"""Layer-by-layer shape audit of the MSG-GAN pair against the reference tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .msggan import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    resolution,
)
from .reference import expected_discriminator_rows, expected_generator_rows


@dataclass
class AuditRow:
    network: str
    block: int
    operation: str
    expected: str
    actual: str

    @property
    def ok(self) -> bool:
        return self.expected == self.actual

    def format(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"{status}  {self.network:<13} block {self.block}  {self.operation:<18} "
                f"expected {self.expected:<14} got {self.actual}")


def _chw(shape: tuple) -> str:
    return "x".join(str(v) for v in shape[1:])


def _compare(network: str, trace: list, expected: list) -> list[AuditRow]:
    rows: list[AuditRow] = []
    main = [r for r in trace if r[1] != "ToRGB"]
    for block, op, _, shape in trace:
        if op == "ToRGB":
            r = shape[2]
            rows.append(AuditRow(network, block, op, f"3x{r}x{r}", _chw(shape)))
    for i in range(max(len(main), len(expected))):
        if i >= len(main):
            block, op, _, want = expected[i]
            rows.append(AuditRow(network, block, op, want, "<missing>"))
            continue
        block, op, _, shape = main[i]
        if i >= len(expected):
            rows.append(AuditRow(network, block, op, "<none>", _chw(shape)))
            continue
        want_block, want_op, _, want = expected[i]
        got = _chw(shape) if (want_block, want_op) == (block, op) else f"{block}:{op}:{_chw(shape)}"
        rows.append(AuditRow(network, want_block, want_op, want, got))
    rows.sort(key=lambda r: (r.block, r.operation == "ToRGB"))
    return rows


def build_reference_pair(depth: int) -> tuple[Generator, Discriminator]:
    gspec = GeneratorSpec(depth=depth)
    return Generator(gspec, seed=0), Discriminator(DiscriminatorSpec.matching(gspec), seed=0)


def audit_shapes(depth: int, execute: bool = False) -> list[AuditRow]:
    """Compare every activation shape of the default-schedule networks of the
    given depth with the reference tables.

    The static walk uses each layer's own shape rule. With ``execute`` the
    networks also run a real batch-of-one forward pass and the recorded
    shapes must equal the static walk.
    """
    gen, disc = build_reference_pair(depth)
    g_trace, d_trace = gen.trace(1), disc.trace(1)
    rows = _compare("generator", g_trace, expected_generator_rows(depth))
    rows += _compare("discriminator", d_trace, expected_discriminator_rows(depth))
    if execute:
        g_rec, d_rec = [], []
        with no_grad():
            z = Tensor(np.random.default_rng(0).standard_normal((1, gen.spec.latent_dim)).astype(np.float32))
            pyramid = gen(z, record=lambda *r: g_rec.append(r))
            disc(pyramid, record=lambda *r: d_rec.append(r))
        for name, rec, trace in (("generator-run", g_rec, g_trace), ("discriminator-run", d_rec, d_trace)):
            for got, want in zip(rec, trace):
                rows.append(AuditRow(name, want[0], want[1], _chw(want[3]), _chw(got[3])))
            if len(rec) != len(trace):
                rows.append(AuditRow(name, 0, "row count", str(len(trace)), str(len(rec))))
    return rows


def pyramid_resolutions(depth: int) -> list[int]:
    return [resolution(k) for k in range(depth)]
