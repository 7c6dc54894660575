"""Progressive multi-scale residual network for single-image super-resolution.

The model runs entirely at low-resolution spatial size and upsamples once at
the end with a pixel shuffle:

    fem:  3x3 conv, 3 -> c channels
    body: K residual blocks (Pmrb)
    pad:  3x3 conv, ReLU, 3x3 conv, then a global skip from the fem output
    rm:   3x3 conv c -> c, 3x3 conv c -> 3*r^2, pixel_shuffle(r)

Each Pmrb computes one combination stack per odd scale s in {3, 5, ..., S}.
A stack for scale s is (s-1)/2 chained 3x3 convolutions with ReLU between
them (none before the first, none after the last), so its receptive field is
exactly s. Stack outputs are linked by inter-scale residuals, concatenated,
fused by a 1x1 convolution, passed through channel-pixel attention, and added
back to the block input.

Every forward method takes a context (`Eager` for plain inference, `Tape` for
recording gradients) plus a parameter mapping, so the same model code serves
inference, training, and finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Eager, ShapeError, Tensor, finite_diff_check
from .dihedral import TRANSFORM_COUNT, apply_transform, invert_transform
from .nn import ConvLayer, InitSpec, ParamStore, init_params

ATTENTION_MODES = ("cpa", "none")
MULTISCALE_MODES = ("combinations", "large_kernels")
SCALE_FACTORS = (2, 3, 4)


@dataclass(frozen=True)
class PmrnConfig:
    """Structural hyperparameters; the default is the published-size model."""

    scale: int = 4
    channels: int = 64
    num_blocks: int = 8
    largest_scale: int = 9
    attention: str = "cpa"
    multiscale: str = "combinations"

    def __post_init__(self):
        if self.scale not in SCALE_FACTORS:
            raise ValueError(f"scale must be one of {SCALE_FACTORS}, got {self.scale}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.largest_scale < 3 or self.largest_scale % 2 == 0:
            raise ValueError(
                f"largest_scale must be odd and >= 3, got {self.largest_scale}"
            )
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")
        if self.multiscale not in MULTISCALE_MODES:
            raise ValueError(f"multiscale must be one of {MULTISCALE_MODES}")

    @property
    def scales(self) -> tuple:
        return tuple(range(3, self.largest_scale + 1, 2))

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "channels": self.channels,
            "num_blocks": self.num_blocks,
            "largest_scale": self.largest_scale,
            "attention": self.attention,
            "multiscale": self.multiscale,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "PmrnConfig":
        known = {
            "scale",
            "channels",
            "num_blocks",
            "largest_scale",
            "attention",
            "multiscale",
        }
        extra = set(record) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**record)


def _snap(handle) -> np.ndarray:
    """Plain array view of a context handle, for feature capture."""
    t = handle.value if hasattr(handle, "value") else handle
    return t.numpy()


class CombStack:
    """Combination stack for one scale: receptive field grows by 2 per conv.

    The large_kernels variant collapses the stack into a single s x s
    convolution with the same receptive field (the ablation baseline).
    """

    def __init__(self, prefix: str, scale: int, channels: int, multiscale: str):
        self.scale = scale
        if multiscale == "large_kernels":
            self.convs = [ConvLayer(f"{prefix}.conv1", channels, channels, scale)]
        else:
            depth = (scale - 1) // 2
            self.convs = [
                ConvLayer(f"{prefix}.conv{i}", channels, channels, 3)
                for i in range(1, depth + 1)
            ]

    def forward(self, ctx, params, x):
        h = self.convs[0].forward(ctx, params, x)
        for conv in self.convs[1:]:
            h = conv.forward(ctx, params, ctx.relu(h))
        return h


class CpaBlock:
    """Channel-pixel attention: a learned affine gate on the feature map.

    A shallow transform produces a shared feature; two point-wise/depth-wise
    branches derive a bias map and a sigmoid-squashed scale map from it. The
    output is (scale + 1) * x + bias, so the multiplicative gate always lies
    strictly inside (1, 2) and the block at worst passes x through amplified.
    """

    def __init__(self, prefix: str, channels: int):
        self.st = ConvLayer(f"{prefix}.st", channels, channels, 3)
        self.beta_pw = ConvLayer(f"{prefix}.beta_pw", channels, channels, 1)
        self.beta_dw = ConvLayer(f"{prefix}.beta_dw", channels, channels, 3, groups=channels)
        self.gamma_pw = ConvLayer(f"{prefix}.gamma_pw", channels, channels, 1)
        self.gamma_dw = ConvLayer(f"{prefix}.gamma_dw", channels, channels, 3, groups=channels)

    @property
    def layers(self):
        return [self.st, self.beta_pw, self.beta_dw, self.gamma_pw, self.gamma_dw]

    def forward(self, ctx, params, x, capture=None, tag=""):
        shared = self.st.forward(ctx, params, x)
        beta = self.beta_dw.forward(
            ctx, params, ctx.relu(self.beta_pw.forward(ctx, params, shared))
        )
        gamma = ctx.sigmoid(
            self.gamma_dw.forward(
                ctx, params, ctx.relu(self.gamma_pw.forward(ctx, params, shared))
            )
        )
        if capture is not None:
            capture[f"{tag}gamma"] = _snap(gamma)
            capture[f"{tag}beta"] = _snap(beta)
        return ctx.affine_gate(x, gamma, beta)


class Pmrb:
    """Progressive multi-scale residual block."""

    def __init__(self, prefix: str, config: PmrnConfig):
        c = config.channels
        self.scales = config.scales
        self.stacks = [
            CombStack(f"{prefix}.comb{s}", s, c, config.multiscale)
            for s in self.scales
        ]
        self.fuse = ConvLayer(f"{prefix}.fuse", c * len(self.scales), c, 1)
        self.cpa = CpaBlock(f"{prefix}.cpa", c) if config.attention == "cpa" else None

    @property
    def layers(self):
        out = [conv for stack in self.stacks for conv in stack.convs]
        out.append(self.fuse)
        if self.cpa is not None:
            out.extend(self.cpa.layers)
        return out

    def multiscale_features(self, ctx, params, h_in) -> list:
        """Per-scale features x_3 ... x_S with inter-scale residual links.

        x_3 is the smallest stack's raw output; each later scale adds the
        previous scale's feature: x_s = Comb_s(h_in) + x_{s-2}.
        """
        feats = []
        prev = None
        for stack in self.stacks:
            y = stack.forward(ctx, params, h_in)
            if prev is not None:
                y = ctx.add(y, prev)
            feats.append(y)
            prev = y
        return feats

    def forward(self, ctx, params, h_in, capture=None, tag=""):
        feats = self.multiscale_features(ctx, params, h_in)
        if capture is not None:
            for s, f in zip(self.scales, feats):
                capture[f"{tag}x{s}"] = _snap(f)
        fused = self.fuse.forward(ctx, params, ctx.concat_channels(feats))
        if self.cpa is not None:
            fused = self.cpa.forward(ctx, params, fused, capture, tag)
        return ctx.add(fused, h_in)


class PmrnModel:
    """Assembled network. Parameters live in an external store, not in the
    model object, so one immutable model can serve any number of weight sets.
    """

    def __init__(self, config: PmrnConfig):
        self.config = config
        c, r = config.channels, config.scale
        self.fem = ConvLayer("fem", 3, c, 3)
        self.blocks = [
            Pmrb(f"body.block{k}", config) for k in range(1, config.num_blocks + 1)
        ]
        self.pad1 = ConvLayer("pad.conv1", c, c, 3)
        self.pad2 = ConvLayer("pad.conv2", c, c, 3)
        self.rm1 = ConvLayer("rm.conv1", c, c, 3)
        self.rm2 = ConvLayer("rm.conv2", c, 3 * r * r, 3)

    @property
    def layers(self):
        out = [self.fem]
        for block in self.blocks:
            out.extend(block.layers)
        out.extend([self.pad1, self.pad2, self.rm1, self.rm2])
        return out

    def template_params(self) -> ParamStore:
        """Zero-filled store with every parameter name and shape registered."""
        store = ParamStore()
        for layer in self.layers:
            layer.register(store)
        return store

    def init_params(self, seed: int = 0, gain: float = 1.0) -> ParamStore:
        return init_params(self.template_params(), InitSpec(seed=seed, gain=gain))

    def forward(self, ctx, params, lr_image, capture=None):
        """Map a (n,3,h,w) batch to (n,3,r*h,r*w). Output is not clamped."""
        xv = lr_image.value if hasattr(lr_image, "value") else lr_image
        if xv.shape[1] != 3:
            raise ShapeError(f"expected 3 input channels, got {xv.shape[1]}")
        if capture is not None:
            capture["input"] = _snap(lr_image)
        h0 = self.fem.forward(ctx, params, lr_image)
        if capture is not None:
            capture["fem"] = _snap(h0)
        h = h0
        for k, block in enumerate(self.blocks, 1):
            h = block.forward(ctx, params, h, capture, tag=f"block{k}.")
        p = self.pad2.forward(ctx, params, ctx.relu(self.pad1.forward(ctx, params, h)))
        h_out = ctx.add(p, h0)
        y = self.rm2.forward(ctx, params, self.rm1.forward(ctx, params, h_out))
        out = ctx.pixel_shuffle(y, self.config.scale)
        if capture is not None:
            capture["output"] = _snap(out)
        return out


def lift_params(ctx, store: ParamStore) -> dict:
    """Turn a ParamStore into context handles (tape leaves record gradients)."""
    return {name: ctx.leaf(t) for name, t in store.items()}


def model_gradcheck(model: PmrnModel, *, size: int = 8, tolerance: float = 1e-4,
                    epsilon: float = 1e-5, samples_per_param: int = 4,
                    seed: int = 0):
    """Finite-difference check of d(mean output)/d(parameter) for the full
    network on a small random input. Runs in float64 internally."""
    params = model.init_params(seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, size, size)))  # float64 shadow

    def fn(ctx, handles):
        return ctx.mean(model.forward(ctx, handles, ctx.leaf(x)))

    return finite_diff_check(
        fn,
        dict(params.items()),
        epsilon=epsilon,
        tolerance=tolerance,
        samples_per_param=samples_per_param,
        seed=seed,
    )


def self_ensemble_forward(model: PmrnModel, params, lr_image) -> Tensor:
    """Average the model over all 8 dihedral transforms of the input.

    Runs exactly 8 forward passes (so the MAC cost is 8x a single pass),
    inverts each transform on the corresponding output, and returns the
    arithmetic mean.
    """
    ctx = Eager()
    arr = lr_image.numpy() if isinstance(lr_image, Tensor) else np.asarray(lr_image)
    acc = None
    for k in range(TRANSFORM_COUNT):
        variant = Tensor(np.ascontiguousarray(apply_transform(arr, k)))
        out = model.forward(ctx, params, variant)
        restored = invert_transform(out.numpy(), k).astype(np.float64)
        acc = restored if acc is None else acc + restored
    return Tensor((acc / TRANSFORM_COUNT).astype(np.float32))
