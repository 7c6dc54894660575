"""Closed-form complexity accounting: parameters, MACs, receptive fields.

Everything here is integer arithmetic over layer descriptors derived from a
PmrnConfig. The walk over the architecture is written out independently of
the model classes on purpose: materialized-parameter counts and descriptor
counts are two separate code paths that the tests require to agree exactly.

Conventions:
  * Parameters per conv layer: ch_in * ch_out * fw * fh / groups + ch_out.
  * MACs count convolution multiply-accumulates only (no bias adds, no
    activations, no residual adds); every conv runs at low-resolution
    spatial size because the single upsampling step is last.
  * The LR pixel count for an output resolution (W, H) at factor r is
    W*H/r^2 when that divides exactly, else floor(W/r) * floor(H/r).
  * An optional elementwise tally (residual adds, activation evaluations,
    attention gate multiply-adds) is reported separately for sensitivity;
    it is never mixed into the headline MAC figure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import PmrnConfig


@dataclass(frozen=True)
class LayerDescriptor:
    """One convolution's shape arithmetic at a fixed analysis resolution."""

    name: str
    ch_in: int
    ch_out: int
    kernel_w: int
    kernel_h: int
    groups: int
    pixels: int

    def __post_init__(self):
        for field in ("ch_in", "ch_out", "kernel_w", "kernel_h", "groups", "pixels"):
            if getattr(self, field) < 1:
                raise ValueError(f"{self.name}: {field} must be positive")
        if self.ch_in % self.groups or self.ch_out % self.groups:
            raise ValueError(f"{self.name}: groups must divide channel counts")

    @property
    def bias_count(self) -> int:
        return self.ch_out

    @property
    def weight_ops(self) -> int:
        return self.ch_in * self.ch_out * self.kernel_w * self.kernel_h // self.groups

    @property
    def params(self) -> int:
        return self.weight_ops + self.bias_count

    @property
    def macs(self) -> int:
        return self.weight_ops * self.pixels


def lr_pixel_count(output_resolution, scale: int) -> int:
    w, h = output_resolution
    if w < 1 or h < 1:
        raise ValueError(f"resolution must be positive, got {output_resolution}")
    r2 = scale * scale
    if (w * h) % r2 == 0:
        return (w * h) // r2
    return (w // scale) * (h // scale)


def describe_model(config: PmrnConfig, output_resolution=(1280, 720)):
    """Enumerate every conv in forward order at the LR analysis size."""
    px = lr_pixel_count(output_resolution, config.scale)
    c = config.channels
    n_scales = len(config.scales)

    def conv(name, ch_in, ch_out, kernel, groups=1):
        return LayerDescriptor(name, ch_in, ch_out, kernel, kernel, groups, px)

    out = [conv("fem", 3, c, 3)]
    for k in range(1, config.num_blocks + 1):
        block = f"body.block{k}"
        for s in config.scales:
            if config.multiscale == "large_kernels":
                out.append(conv(f"{block}.comb{s}.conv1", c, c, s))
            else:
                for i in range(1, (s - 1) // 2 + 1):
                    out.append(conv(f"{block}.comb{s}.conv{i}", c, c, 3))
        out.append(conv(f"{block}.fuse", c * n_scales, c, 1))
        if config.attention == "cpa":
            out.append(conv(f"{block}.cpa.st", c, c, 3))
            out.append(conv(f"{block}.cpa.beta_pw", c, c, 1))
            out.append(conv(f"{block}.cpa.beta_dw", c, c, 3, groups=c))
            out.append(conv(f"{block}.cpa.gamma_pw", c, c, 1))
            out.append(conv(f"{block}.cpa.gamma_dw", c, c, 3, groups=c))
    out.append(conv("pad.conv1", c, c, 3))
    out.append(conv("pad.conv2", c, c, 3))
    out.append(conv("rm.conv1", c, c, 3))
    out.append(conv("rm.conv2", c, 3 * config.scale**2, 3))
    return out


def count_params(descriptors) -> int:
    return sum(d.params for d in descriptors)


def count_macs(descriptors) -> int:
    return sum(d.macs for d in descriptors)


def count_elementwise_ops(config: PmrnConfig, output_resolution=(1280, 720)) -> int:
    """Non-convolution op tally: one op per element per add/activation,
    three per attention-gate element ((gamma+1) add, multiply, bias add)."""
    px = lr_pixel_count(output_resolution, config.scale)
    c = config.channels
    per_block = 0
    if config.multiscale == "combinations":
        per_block += sum((s - 1) // 2 - 1 for s in config.scales)  # stack ReLUs
    per_block += len(config.scales) - 1  # inter-scale residual adds
    if config.attention == "cpa":
        per_block += 2  # branch ReLUs
        per_block += 1  # sigmoid
        per_block += 3  # affine gate
    per_block += 1  # block residual add
    total = config.num_blocks * per_block
    total += 1  # pad ReLU
    total += 1  # global residual add
    return total * c * px


def receptive_field(scale: int) -> int:
    """Receptive field of one combination stack: 3 for the base conv, then
    +2 for each chained 3x3 conv, which lands exactly on the stack's scale."""
    if scale < 3 or scale % 2 == 0:
        raise ValueError(f"scale must be odd and >= 3, got {scale}")
    rf = 3
    for _ in range((scale - 1) // 2 - 1):
        rf += 2
    return rf


def block_receptive_field(config: PmrnConfig) -> int:
    """Deepest path through one block: the largest stack, plus the attention
    transform conv and depthwise conv when attention is enabled."""
    rf = receptive_field(config.largest_scale)
    if config.attention == "cpa":
        rf += 2 + 2
    return rf


def receptive_field_model(config: PmrnConfig) -> int:
    """Stride-1 composition: RF = 1 + sum over stages of (stage RF - 1)."""
    rf = 1
    rf += 3 - 1  # fem
    rf += config.num_blocks * (block_receptive_field(config) - 1)
    rf += 2 * (3 - 1)  # padding structure
    rf += 2 * (3 - 1)  # restoration convs
    return rf


@dataclass(frozen=True)
class AnalysisReport:
    config: PmrnConfig
    resolution: tuple
    descriptors: tuple
    total_params: int
    total_macs: int
    elementwise_ops: int

    @property
    def lr_pixels(self) -> int:
        return lr_pixel_count(self.resolution, self.config.scale)

    def receptive_fields(self) -> dict:
        table = {f"comb{s}": receptive_field(s) for s in self.config.scales}
        table["block"] = block_receptive_field(self.config)
        table["model"] = receptive_field_model(self.config)
        return table


def analyze(config: PmrnConfig, output_resolution=(1280, 720)) -> AnalysisReport:
    descriptors = tuple(describe_model(config, output_resolution))
    return AnalysisReport(
        config=config,
        resolution=tuple(output_resolution),
        descriptors=descriptors,
        total_params=count_params(descriptors),
        total_macs=count_macs(descriptors),
        elementwise_ops=count_elementwise_ops(config, output_resolution),
    )


@dataclass(frozen=True)
class VariantComparison:
    report_a: AnalysisReport
    report_b: AnalysisReport

    @property
    def param_delta(self) -> int:
        return self.report_b.total_params - self.report_a.total_params

    @property
    def macs_delta(self) -> int:
        return self.report_b.total_macs - self.report_a.total_macs

    @property
    def param_savings_pct(self) -> float:
        return 100.0 * self.param_delta / self.report_b.total_params

    @property
    def macs_savings_pct(self) -> float:
        return 100.0 * self.macs_delta / self.report_b.total_macs


def compare_variants(config_a: PmrnConfig, config_b: PmrnConfig,
                     output_resolution=(1280, 720)) -> VariantComparison:
    return VariantComparison(
        analyze(config_a, output_resolution),
        analyze(config_b, output_resolution),
    )


def format_params_k(n: int) -> str:
    """Floor to the thousand: 3,598,320 -> '3,598K'."""
    return f"{n // 1000:,}K"


def format_macs_g(n: int) -> str:
    """Round to one decimal of a billion: 206,773,862,400 -> '206.8G'."""
    return f"{n / 1e9:.1f}G"


def render_text(report: AnalysisReport, per_layer: bool = False) -> str:
    cfg = report.config
    lines = [
        f"config: scale=x{cfg.scale} channels={cfg.channels} "
        f"blocks={cfg.num_blocks} largest_scale={cfg.largest_scale} "
        f"attention={cfg.attention} multiscale={cfg.multiscale}",
        f"analysis resolution: {report.resolution[0]}x{report.resolution[1]} "
        f"(LR pixels {report.lr_pixels:,})",
        f"conv layers: {len(report.descriptors)}",
        f"parameters: {report.total_params:,} ({format_params_k(report.total_params)})",
        f"MACs: {report.total_macs:,} ({format_macs_g(report.total_macs)})",
        f"elementwise ops (excluded from MACs): {report.elementwise_ops:,}",
    ]
    rf = report.receptive_fields()
    lines.append(
        "receptive fields: "
        + " ".join(f"{k}={v}" for k, v in rf.items())
    )
    if per_layer:
        lines.append("")
        lines.append(f"{'layer':<28}{'in':>5}{'out':>5}{'k':>3}{'gs':>4}"
                     f"{'params':>10}{'macs':>16}")
        for d in report.descriptors:
            lines.append(
                f"{d.name:<28}{d.ch_in:>5}{d.ch_out:>5}{d.kernel_w:>3}"
                f"{d.groups:>4}{d.params:>10,}{d.macs:>16,}"
            )
    return "\n".join(lines)


def render_csv(report: AnalysisReport) -> str:
    lines = ["name,ch_i,ch_o,fw,fh,gs,params,macs"]
    for d in report.descriptors:
        lines.append(
            f"{d.name},{d.ch_in},{d.ch_out},{d.kernel_w},{d.kernel_h},"
            f"{d.groups},{d.params},{d.macs}"
        )
    return "\n".join(lines)


def render_comparison(cmp: VariantComparison) -> str:
    a, b = cmp.report_a, cmp.report_b
    lines = [
        f"{'':<12}{'A':>16}{'B':>16}{'delta (B-A)':>16}",
        f"{'params':<12}{a.total_params:>16,}{b.total_params:>16,}"
        f"{cmp.param_delta:>16,}",
        f"{'MACs':<12}{a.total_macs:>16,}{b.total_macs:>16,}{cmp.macs_delta:>16,}",
        f"A saves {cmp.param_savings_pct:.2f}% parameters and "
        f"{cmp.macs_savings_pct:.2f}% MACs relative to B",
    ]
    return "\n".join(lines)
