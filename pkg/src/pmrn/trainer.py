"""L1 training loop with Adam, a halving learning-rate schedule, and
bit-exact resumable checkpoints.

The schedule is expressed in units: lr(unit) = lr0 * 2^(-floor(unit /
halve_every)), and each unit runs `steps_per_unit` gradient steps, so the
shape of the published schedule (1000 units, halving every 200) is
preserved at any scale by shrinking steps_per_unit.

Checkpoints hold the parameters, both Adam moment sets, the sampling
generator's state, and the metric history, so resuming continues the exact
trajectory the uninterrupted run would have taken.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .arch import PmrnConfig, PmrnModel, lift_params
from .autodiff import Eager, Tape, Tensor, backward
from .data import DegradationSpec, crop_to_multiple, degrade
from .dihedral import apply_transform
from .metrics import psnr
from .nn import ParamStore, WeightFileError, read_container, write_container

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, unit: int, step: int, value: float):
        super().__init__(
            f"non-finite loss {value!r} at unit {unit}, step {step}"
        )
        self.unit = unit
        self.step = step
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    halve_every: int = 200
    total_units: int = 1000
    steps_per_unit: int = 1
    batch_size: int = 16
    patch_size: int = 48
    seed: int = 0
    degradation: str = "BI"
    val_interval: int = 0  # 0: validate only after the final unit
    init_gain: float = 1.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.init_gain <= 0:
            raise ValueError(f"init_gain must be positive, got {self.init_gain}")
        for name in ("halve_every", "total_units", "steps_per_unit",
                     "batch_size", "patch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.val_interval < 0:
            raise ValueError(f"val_interval must be >= 0, got {self.val_interval}")
        if self.degradation not in ("BI", "BD"):
            raise ValueError(f"degradation must be BI or BD, got {self.degradation!r}")


def learning_rate(cfg: TrainConfig, unit: int) -> float:
    if unit < 0:
        raise ValueError(f"unit must be >= 0, got {unit}")
    return cfg.lr0 * 2.0 ** (-(unit // cfg.halve_every))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: ParamStore) -> AdamState:
    m = {name: np.zeros(t.shape, dtype=t.dtype) for name, t in params.items()}
    v = {name: np.zeros(t.shape, dtype=t.dtype) for name, t in params.items()}
    return AdamState(m=m, v=v, t=0)


def adam_step(params: ParamStore, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    out = params.copy()
    new_m, new_v = {}, {}
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.shape:
            raise ValueError(
                f"{name}: gradient shape {g.shape} != parameter shape {tensor.shape}"
            )
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        step_arr = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPSILON)
        out[name] = Tensor((tensor.numpy() - step_arr).astype(tensor.dtype))
        new_m[name] = m.astype(tensor.dtype)
        new_v[name] = v.astype(tensor.dtype)
    return out, AdamState(m=new_m, v=new_v, t=t)


@dataclass
class TrainResult:
    params: ParamStore
    adam: AdamState
    history: list = field(default_factory=list)
    units_run: int = 0


def _draw_batch(rng, lr_imgs, hr_imgs, usable, p, r, batch_size):
    """Aligned random crops with a random dihedral transform per sample."""
    lrs, hrs = [], []
    for _ in range(batch_size):
        idx = usable[int(rng.integers(0, len(usable)))]
        lr_img, hr_img = lr_imgs[idx], hr_imgs[idx]
        h_lr, w_lr = lr_img.shape[-2], lr_img.shape[-1]
        top = int(rng.integers(0, h_lr - p + 1))
        left = int(rng.integers(0, w_lr - p + 1))
        k = int(rng.integers(0, 8))
        lrs.append(apply_transform(lr_img[:, top : top + p, left : left + p], k))
        hrs.append(apply_transform(
            hr_img[:, r * top : r * (top + p), r * left : r * (left + p)], k
        ))
    lr_batch = np.ascontiguousarray(np.stack(lrs), dtype=np.float32)
    hr_batch = np.ascontiguousarray(np.stack(hrs), dtype=np.float32)
    return lr_batch, hr_batch


def evaluate_psnr(model: PmrnModel, params, pairs, shave=None) -> float:
    """Mean Y-channel PSNR of the model over (lr, hr) full-image pairs."""
    if shave is None:
        shave = model.config.scale
    ctx = Eager()
    scores = []
    for lr_img, hr_img in pairs:
        pred = model.forward(ctx, params, Tensor(lr_img[None])).numpy()[0]
        scores.append(psnr(pred, hr_img, shave=shave))
    finite = [s for s in scores if math.isfinite(s)]
    return float(np.mean(finite)) if finite else math.inf


def make_eval_pairs(images, spec: DegradationSpec) -> list:
    """(LR, cropped HR) pairs from HR float images, for validation."""
    pairs = []
    for img in images:
        hr = crop_to_multiple(img, spec.scale)
        pairs.append((degrade(hr, spec), hr))
    return pairs


def train(model: PmrnModel, dataset, cfg: TrainConfig, *, heldout=None,
          checkpoint_path=None, checkpoint_every=0, resume=None,
          log=None) -> TrainResult:
    """Run the unit/step loop over a list of HR float images.

    `heldout` is an optional list of HR float images scored by PSNR against
    the bicubic-shaped degradation in `cfg`. With `resume`, training picks
    up a checkpoint written by this function and continues bit-identically.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    r = model.config.scale
    spec = DegradationSpec(cfg.degradation, r)
    hr_imgs = [crop_to_multiple(np.asarray(img, dtype=np.float32), r) for img in dataset]
    lr_imgs = [degrade(hr, spec) for hr in hr_imgs]
    p = cfg.patch_size
    usable = [
        i for i, lr_img in enumerate(lr_imgs)
        if lr_img.shape[-2] >= p and lr_img.shape[-1] >= p
    ]
    if not usable:
        raise ValueError(
            f"no training image can hold a {p}x{p} LR patch at scale {r}"
        )

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if resume is not None:
        params, adam, rng_state, start_unit, history = load_checkpoint(
            resume, model.config, cfg
        )
        rng.bit_generator.state = rng_state
    else:
        params = model.init_params(seed=cfg.seed, gain=cfg.init_gain)
        adam = init_adam(params)
        start_unit = 0
        history = []

    val_pairs = make_eval_pairs(heldout, spec) if heldout else None

    for unit in range(start_unit, cfg.total_units):
        lr = learning_rate(cfg, unit)
        losses = []
        for step in range(cfg.steps_per_unit):
            lr_batch, hr_batch = _draw_batch(
                rng, lr_imgs, hr_imgs, usable, p, r, cfg.batch_size
            )
            tape = Tape()
            handles = lift_params(tape, params)
            pred = model.forward(tape, handles, tape.leaf(Tensor(lr_batch)))
            loss = tape.l1_loss(pred, tape.leaf(Tensor(hr_batch)))
            loss_value = loss.value.item()
            if not math.isfinite(loss_value):
                raise DivergenceError(unit, step, loss_value)
            grads = backward(tape, loss)
            grad_map = {name: grads[h] for name, h in handles.items()}
            params, adam = adam_step(params, grad_map, adam, lr)
            losses.append(loss_value)

        val = None
        last = unit == cfg.total_units - 1
        if val_pairs is not None and (
            last or (cfg.val_interval and (unit + 1) % cfg.val_interval == 0)
        ):
            val = evaluate_psnr(model, params, val_pairs)
        row = {
            "unit": unit,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "val_psnr": val,
        }
        history.append(row)
        if log is not None:
            log(row)
        if checkpoint_path is not None and (
            last or (checkpoint_every and (unit + 1) % checkpoint_every == 0)
        ):
            save_checkpoint(
                checkpoint_path, model.config, cfg, params, adam,
                rng.bit_generator.state, unit + 1, history,
            )

    return TrainResult(
        params=params, adam=adam, history=history,
        units_run=cfg.total_units - start_unit,
    )


def save_checkpoint(path, model_config: PmrnConfig, train_config: TrainConfig,
                    params: ParamStore, adam: AdamState, rng_state: dict,
                    next_unit: int, history: list) -> None:
    store = ParamStore()
    for name, t in params.items():
        store.add(f"model.{name}", t)
    for name, arr in adam.m.items():
        store.add(f"adam.m.{name}", Tensor(arr))
    for name, arr in adam.v.items():
        store.add(f"adam.v.{name}", Tensor(arr))
    meta = {
        "next_unit": next_unit,
        "adam_t": adam.t,
        "rng_state": rng_state,
        "train_config": asdict(train_config),
        "history": history,
    }
    write_container(path, "pmrn-checkpoint", model_config.to_dict(), meta, store)


def load_checkpoint(path, model_config: PmrnConfig, train_config: TrainConfig | None = None):
    """Returns (params, adam, rng_state, next_unit, history)."""
    store, config, meta = read_container(path, "pmrn-checkpoint")
    for key, want in model_config.to_dict().items():
        if config.get(key) != want:
            raise WeightFileError(
                f"{path}: checkpoint config mismatch at {key!r}: "
                f"file has {config.get(key)!r}, expected {want!r}"
            )
    if train_config is not None:
        saved = meta.get("train_config", {})
        for key, want in asdict(train_config).items():
            if saved.get(key) != want:
                raise WeightFileError(
                    f"{path}: train config mismatch at {key!r}: "
                    f"file has {saved.get(key)!r}, expected {want!r}"
                )
    params = ParamStore()
    m, v = {}, {}
    for name, t in store.items():
        if name.startswith("model."):
            params.add(name[len("model."):], t)
        elif name.startswith("adam.m."):
            m[name[len("adam.m."):]] = t.numpy()
        elif name.startswith("adam.v."):
            v[name[len("adam.v."):]] = t.numpy()
        else:
            raise WeightFileError(f"{path}: unexpected checkpoint entry {name}")
    adam = AdamState(m=m, v=v, t=int(meta["adam_t"]))
    return params, adam, meta["rng_state"], int(meta["next_unit"]), list(meta["history"])


def history_csv(history: list) -> str:
    lines = ["unit,lr,train_loss,val_psnr"]
    for row in history:
        val = "" if row["val_psnr"] is None else f"{row['val_psnr']:.4f}"
        lines.append(f"{row['unit']},{row['lr']:.8g},{row['train_loss']:.6f},{val}")
    return "\n".join(lines)
