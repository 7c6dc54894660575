"""Finite-difference verification of tape gradients.

The function under test is written against the shared context surface, so
one definition serves both the analytic pass (on a Tape) and the perturbed
re-evaluations (on Eager). Checking runs in float64: central differences in
float32 are too noisy for tolerances near 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import Eager, Tape, backward
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel error {self.max_rel_error:.3e}"
            f" (tolerance {self.tolerance:.1e})"
        )


def finite_diff_check(
    fn,
    params: dict,
    *,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    samples_per_param: int = 8,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn(ctx, handles)`` must map a context plus a name->handle dict to a
    scalar output, deterministically. A random subsample of coordinates of
    every parameter is perturbed by +-epsilon; the relative error uses
    max(|analytic|, |numeric|, 1e-8) as the denominator.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    params64 = {name: t.astype(np.float64) for name, t in params.items()}

    tape = Tape()
    handles = {name: tape.leaf(t) for name, t in params64.items()}
    loss = fn(tape, handles)
    grads = backward(tape, loss)

    def eval_at(name: str, flat_index: int, delta: float) -> float:
        arrs = dict(params64)
        bumped = arrs[name].numpy()
        bumped.ravel()[flat_index] += delta
        arrs[name] = Tensor(bumped)
        return fn(Eager(), arrs).item()

    rng = np.random.default_rng(seed)
    max_err = 0.0
    per_param: dict = {}
    for name, t in params64.items():
        analytic = grads[handles[name]].ravel()
        count = min(t.size, samples_per_param)
        coords = rng.choice(t.size, size=count, replace=False)
        worst = 0.0
        for flat in coords:
            f_plus = eval_at(name, int(flat), epsilon)
            f_minus = eval_at(name, int(flat), -epsilon)
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic[flat])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        per_param[name] = worst
        max_err = max(max_err, worst)

    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err <= tolerance,
        per_param=per_param,
    )


def _signed_uniform(rng, shape, low=0.2, high=1.0) -> Tensor:
    """Values bounded away from zero so ReLU/L1 kinks stay off the
    perturbation path."""
    mag = rng.uniform(low, high, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor((mag * sign).astype(np.float32))


def standard_op_checks(*, tolerance: float = 1e-4, epsilon: float = 1e-5,
                       samples_per_param: int = 8, seed: int = 0):
    """Finite-difference checks covering every differentiable op.

    Returns a list of (name, GradCheckReport) in a fixed order; the caller
    decides how to render or aggregate them.
    """
    rng = np.random.default_rng(seed)
    u = lambda *shape: _signed_uniform(rng, shape)

    checks = [
        (
            "conv2d",
            lambda ctx, h: ctx.mean(ctx.conv2d(h["x"], h["w"], h["b"], padding=1)),
            {"x": u(2, 3, 5, 5), "w": u(4, 3, 3, 3), "b": u(1, 4, 1, 1)},
        ),
        (
            "conv2d_stride2",
            lambda ctx, h: ctx.mean(
                ctx.conv2d(h["x"], h["w"], h["b"], stride=2, padding=1)
            ),
            {"x": u(1, 3, 7, 7), "w": u(2, 3, 3, 3), "b": u(1, 2, 1, 1)},
        ),
        (
            "conv2d_depthwise",
            lambda ctx, h: ctx.mean(
                ctx.conv2d(h["x"], h["w"], h["b"], padding=1, groups=4)
            ),
            {"x": u(1, 4, 5, 5), "w": u(4, 1, 3, 3), "b": u(1, 4, 1, 1)},
        ),
        (
            "conv2d_pointwise",
            lambda ctx, h: ctx.mean(ctx.conv2d(h["x"], h["w"], h["b"])),
            {"x": u(1, 3, 4, 4), "w": u(5, 3, 1, 1), "b": u(1, 5, 1, 1)},
        ),
        (
            "relu",
            lambda ctx, h: ctx.mean(ctx.relu(h["x"])),
            {"x": u(2, 3, 4, 4)},
        ),
        (
            "sigmoid",
            lambda ctx, h: ctx.mean(ctx.sigmoid(h["x"])),
            {"x": u(2, 3, 4, 4)},
        ),
        (
            "add",
            lambda ctx, h: ctx.mean(ctx.add(h["a"], h["b"])),
            {"a": u(1, 2, 3, 3), "b": u(1, 2, 3, 3)},
        ),
        (
            "affine_gate",
            lambda ctx, h: ctx.mean(ctx.affine_gate(h["x"], h["g"], h["b"])),
            {"x": u(1, 2, 4, 4), "g": u(1, 2, 4, 4), "b": u(1, 2, 4, 4)},
        ),
        (
            "concat_channels",
            lambda ctx, h: ctx.mean(
                ctx.sigmoid(ctx.concat_channels([h["a"], h["b"], h["c"]]))
            ),
            {"a": u(1, 2, 3, 3), "b": u(1, 3, 3, 3), "c": u(1, 1, 3, 3)},
        ),
        (
            "pixel_shuffle",
            lambda ctx, h: ctx.mean(ctx.sigmoid(ctx.pixel_shuffle(h["x"], 2))),
            {"x": u(1, 8, 3, 3)},
        ),
        (
            "mean",
            lambda ctx, h: ctx.mean(h["x"]),
            {"x": u(2, 2, 3, 3)},
        ),
        (
            "l1_loss",
            lambda ctx, h: ctx.l1_loss(h["pred"], h["target"]),
            {
                "pred": Tensor(
                    rng.uniform(0.2, 0.9, size=(1, 3, 4, 4)).astype(np.float32)
                ),
                "target": Tensor(
                    rng.uniform(1.2, 1.9, size=(1, 3, 4, 4)).astype(np.float32)
                ),
            },
        ),
        (
            "composite",
            lambda ctx, h: ctx.mean(
                ctx.affine_gate(
                    h["x"],
                    ctx.sigmoid(
                        ctx.conv2d(
                            ctx.relu(ctx.conv2d(h["x"], h["w1"], h["b1"], padding=1)),
                            h["w2"],
                            h["b2"],
                            padding=1,
                        )
                    ),
                    h["beta"],
                )
            ),
            {
                "x": u(1, 3, 6, 6),
                "w1": u(4, 3, 3, 3),
                "b1": u(1, 4, 1, 1),
                "w2": u(3, 4, 3, 3),
                "b2": u(1, 3, 1, 1),
                "beta": u(1, 3, 6, 6),
            },
        ),
    ]

    results = []
    for name, fn, params in checks:
        report = finite_diff_check(
            fn,
            params,
            epsilon=epsilon,
            tolerance=tolerance,
            samples_per_param=samples_per_param,
            seed=seed,
        )
        results.append((name, report))
    return results
