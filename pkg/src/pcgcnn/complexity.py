"""Operation counts for the CNN layers of an adaptive 1D CNN.

The closed-form counts are evaluated term for term, including the
squared length terms; they are kept apart from the instrumented counts
taken from an actual forward/backward pass so the two can be compared.
MLP layers are left out of both, as their cost is negligible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import NetworkConfig, OpCounter, build_network, forward, layer_shapes

__all__ = ["LayerOps", "ComplexityReport", "count_operations", "format_report"]


@dataclass(frozen=True)
class LayerOps:
    layer: int
    n_in: int
    n_out: int
    in_length: int    # sl of the previous layer
    pre_length: int   # xl of this layer
    kernel_size: int  # wl
    fp_mul: int
    fp_add: int
    bp1_mul: int
    bp1_add: int
    bp2_mul: int
    bp2_add: int


@dataclass
class ComplexityReport:
    layers: list[LayerOps]
    # stage -> per-layer (mults, adds), stages "fp", "bp_delta", "bp_weight"
    instrumented: Optional[dict[str, list[tuple[int, int]]]] = field(default=None)

    def total(self, name: str) -> int:
        return sum(getattr(op, name) for op in self.layers)

    @property
    def totals(self) -> dict[str, int]:
        keys = ("fp_mul", "fp_add", "bp1_mul", "bp1_add", "bp2_mul", "bp2_add")
        out = {k: self.total(k) for k in keys}
        out["iteration_mul"] = out["fp_mul"] + out["bp1_mul"] + out["bp2_mul"]
        out["iteration_add"] = out["fp_add"] + out["bp1_add"] + out["bp2_add"]
        return out


def count_operations(config: NetworkConfig, instrument: bool = False,
                     seed: int = 0) -> ComplexityReport:
    """Evaluate the per-layer FP and BP operation formulas for ``config``.

    With ``instrument=True`` a random network is also run forward and
    backward on one random beat, and the multiply/add counts the kernels
    actually performed are attached.
    """
    shapes = layer_shapes(config)
    cnn = [sh for sh in shapes if sh.kind == "cnn"]
    layers = []
    for l, sh in enumerate(cnn, start=1):
        conn = sh.n_in * sh.n_out
        wl, sl, xl = sh.kernel_size, sh.in_length, sh.pre_length
        layers.append(LayerOps(
            layer=l, n_in=sh.n_in, n_out=sh.n_out, in_length=sl, pre_length=xl,
            kernel_size=wl,
            fp_mul=conn * sl * wl ** 2, fp_add=conn * sl,
            bp1_mul=conn * xl * wl ** 2, bp1_add=conn * xl,
            bp2_mul=conn * wl * xl ** 2, bp2_add=conn * wl,
        ))
    report = ComplexityReport(layers)
    if instrument:
        from .training import backward

        net = build_network(config, seed)
        rng = np.random.default_rng(seed)
        beat = rng.uniform(-1.0, 1.0, config.input_length)
        counter = OpCounter()
        trace = forward(net, beat, counter)
        backward(net, trace, np.array([1.0, -1.0]), counter=counter)
        report.instrumented = {
            stage: [counter.get(stage, l) for l in range(1, len(cnn) + 1)]
            for stage in ("fp", "bp_delta", "bp_weight")
        }
    return report


def format_report(report: ComplexityReport) -> str:
    rows = ["layer  n_in n_out    sl    xl  wl          fp_mul     fp_add"
            "         bp1_mul    bp1_add         bp2_mul  bp2_add"]
    for op in report.layers:
        rows.append("%5d %5d %5d %5d %5d %3d %15d %10d %15d %10d %15d %8d" % (
            op.layer, op.n_in, op.n_out, op.in_length, op.pre_length, op.kernel_size,
            op.fp_mul, op.fp_add, op.bp1_mul, op.bp1_add, op.bp2_mul, op.bp2_add))
    t = report.totals
    rows.append("total %39d %10d %15d %10d %15d %8d" % (
        t["fp_mul"], t["fp_add"], t["bp1_mul"], t["bp1_add"], t["bp2_mul"], t["bp2_add"]))
    rows.append("per BP iteration: %d multiplications, %d additions"
                % (t["iteration_mul"], t["iteration_add"]))
    if report.instrumented is not None:
        rows.append("")
        rows.append("instrumented (one beat, multiply-accumulate counts)")
        rows.append("layer          fp_mul   bp_delta_mul  bp_weight_mul")
        for i in range(len(report.layers)):
            rows.append("%5d %15d %14d %14d" % (
                i + 1, report.instrumented["fp"][i][0],
                report.instrumented["bp_delta"][i][0],
                report.instrumented["bp_weight"][i][0]))
    return "\n".join(rows)
