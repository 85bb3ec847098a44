"""Objectives, the unpaired training loop, inference and paired evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..nncore import Adam, OptimizerConfig, Tensor, frozen, load_checkpoint, no_grad
from .losses import (
    adversarial_loss_x,
    adversarial_loss_y,
    cycle_loss,
    generator_adversarial_term,
    l1_mean,
    total_loss,
)
from .model import CycleGanModel, HistoryBuffer, TranslatorConfig

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "adv_x", "adv_y", "cyc", "total")
PSNR_CAP = 99.0


class TrainingDiverged(FloatingPointError):
    pass


# -- image conversion at the module boundary ------------------------------------


def to_internal(images) -> np.ndarray:
    """(N, H, W[, C]) or a single (H, W[, C]) image in [0, 1] -> (N, C, H, W) in [-1, 1]."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        # a single HWC image, or a stack of grayscale ones
        arr = arr[None] if arr.shape[-1] in (1, 3) else arr[..., None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2) * 2.0 - 1.0)


def to_external(batch: np.ndarray) -> np.ndarray:
    """(N, C, H, W) in [-1, 1] -> (N, H, W, C) in [0, 1]."""
    return np.clip((np.asarray(batch).transpose(0, 2, 3, 1) + 1.0) * 0.5, 0.0, 1.0).astype(np.float32)


# -- objectives ------------------------------------------------------------------------


@dataclass
class ObjectiveResult:
    loss: Tensor
    parts: dict[str, float] = field(default_factory=dict)


def generator_objective(model: CycleGanModel, x_batch, y_batch) -> ObjectiveResult:
    """Non-saturating adversarial terms plus the weighted cycle loss.

    The graph is recorded with the discriminators frozen, so calling
    ``backward`` on the result touches only G and F.
    """
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(x_batch)
    y = y_batch if isinstance(y_batch, Tensor) else Tensor(y_batch)
    cfg = model.config
    with frozen(model.discriminator_parameters()):
        fake_y = model.G(x)
        fake_x = model.F(y)
        adv = generator_adversarial_term(model.D_Y(fake_y)) + generator_adversarial_term(model.D_X(fake_x))
        cyc = cycle_loss(x, model.F(fake_y), y, model.G(fake_x))
        loss = adv + cyc * cfg.lambda_cyc
        parts = {"gen_adv": float(adv.data), "cyc": float(cyc.data)}
        if cfg.identity_weight:
            ident = l1_mean(model.G(y), y) + l1_mean(model.F(x), x)
            loss = loss + ident * cfg.identity_weight
            parts["identity"] = float(ident.data)
    return ObjectiveResult(loss, parts)


def discriminator_objective(model: CycleGanModel, x_batch, y_batch,
                            buffered_fakes: tuple | None = None) -> ObjectiveResult:
    """Both domain adversarial losses with the generators held fixed.

    ``buffered_fakes`` is ``(fake_x, fake_y)``, typically drawn through a
    :class:`HistoryBuffer`. When omitted, fresh fakes are generated.
    """
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(x_batch)
    y = y_batch if isinstance(y_batch, Tensor) else Tensor(y_batch)
    if buffered_fakes is None:
        with no_grad():
            buffered_fakes = (model.F(y).data, model.G(x).data)
    fake_x, fake_y = (f.detach() if isinstance(f, Tensor) else Tensor(f) for f in buffered_fakes)
    with frozen(model.generator_parameters()):
        adv_x = adversarial_loss_x(model.D_X(x), model.D_X(fake_x))
        adv_y = adversarial_loss_y(model.D_Y(y), model.D_Y(fake_y))
    return ObjectiveResult(adv_x + adv_y, {"adv_x": float(adv_x.data), "adv_y": float(adv_y.data)})


# -- training -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: CycleGanModel
    log: list[dict]
    steps: int


def _load_pool(pool, domain: str) -> np.ndarray:
    if hasattr(pool, "items"):
        from ..datapipe.io import load_manifest_images

        pool = load_manifest_images(pool, domain)
    if len(pool) == 0:
        raise ValueError(f"{domain} pool is empty")
    arr = to_internal(np.stack([np.asarray(p, dtype=np.float32) for p in pool]))
    return arr


def _optimizer_config(cfg: TranslatorConfig) -> OptimizerConfig:
    return OptimizerConfig(learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)


def write_loss_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for row in rows:
            writer.writerow([row["epoch"]] + [f"{row[c]:.6f}" for c in LOSS_COLUMNS[1:]])
    return path


def _save_state(model, path, opt_g, opt_d, epoch, rng, buffers, rows):
    extra = {}
    for tag, buf in zip(("x", "y"), buffers):
        for i, img in enumerate(buf.images):
            extra[f"buffer/{tag}/{i:04d}"] = img
    meta = {
        "epoch": epoch,
        "gen_steps": opt_g.step_index,
        "disc_steps": opt_d.step_index,
        "rng_state": rng.bit_generator.state,
        "buffer_sizes": [len(b) for b in buffers],
        "log": rows,
    }
    return model.save(path, step_index=opt_g.step_index, meta=meta, extra_arrays=extra)


def train(config: TranslatorConfig, visible_pool, ir_pool, checkpoint_dir: str | Path | None = None,
          resume_from: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Alternate generator and discriminator Adam steps over unpaired pools.

    Each epoch draws independent seeded permutations of both pools and runs
    ``ceil(max(len) / batch_size)`` steps. The per-epoch log averages the
    discriminator losses, the cycle loss and their weighted total.
    """
    xs = _load_pool(visible_pool, "visible")
    ys = _load_pool(ir_pool, "real_ir")
    s = config.image_size
    if xs.shape[1:] != (config.visible_channels, s, s) or ys.shape[1:] != (config.ir_channels, s, s):
        raise ValueError(f"pool images {xs.shape[1:]} / {ys.shape[1:]} do not match config "
                         f"({config.visible_channels}|{config.ir_channels}, {s}, {s})")

    rng = np.random.default_rng(config.seed)
    model = CycleGanModel.build(config, rng)
    opt_g = Adam(model.generator_parameters(), _optimizer_config(config))
    opt_d = Adam(model.discriminator_parameters(), _optimizer_config(config))
    buffers = (HistoryBuffer(config.history_buffer_capacity, rng),
               HistoryBuffer(config.history_buffer_capacity, rng))
    rows: list[dict] = []
    start_epoch = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        ckpt.restore(model.named_parameters())
        meta = ckpt.meta
        start_epoch = meta["epoch"]
        opt_g.step_index, opt_d.step_index = meta["gen_steps"], meta["disc_steps"]
        rng.bit_generator.state = meta["rng_state"]
        for tag, buf, n in zip(("x", "y"), buffers, meta["buffer_sizes"]):
            buf.images = [ckpt.arrays[f"buffer/{tag}/{i:04d}"] for i in range(n)]
        rows = list(meta["log"])

    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    steps_per_epoch = math.ceil(max(len(xs), len(ys)) / config.batch_size)
    b = config.batch_size
    last_good = None

    for epoch in range(start_epoch, config.epochs):
        perm_x = rng.permutation(len(xs))
        perm_y = rng.permutation(len(ys))
        sums = dict(adv_x=0.0, adv_y=0.0, cyc=0.0)
        for step in range(steps_per_epoch):
            ix = perm_x[np.arange(step * b, step * b + b) % len(xs)]
            iy = perm_y[np.arange(step * b, step * b + b) % len(ys)]
            x, y = Tensor(xs[ix]), Tensor(ys[iy])

            model.zero_grad()
            gen = generator_objective(model, x, y)
            gen.loss.backward()
            opt_g.step()

            with no_grad():
                fake_y = model.G(x).data
                fake_x = model.F(y).data
            fakes = (buffers[0].query(fake_x), buffers[1].query(fake_y))
            model.zero_grad()
            disc = discriminator_objective(model, x, y, fakes)
            disc.loss.backward()
            opt_d.step()

            values = [gen.parts["cyc"], disc.parts["adv_x"], disc.parts["adv_y"]]
            if not all(math.isfinite(v) for v in values):
                if last_good is not None:
                    load_checkpoint(last_good).restore(model.named_parameters())
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, step {step + 1}; "
                                       f"last good checkpoint: {last_good}")
            sums["adv_x"] += disc.parts["adv_x"]
            sums["adv_y"] += disc.parts["adv_y"]
            sums["cyc"] += gen.parts["cyc"]

        row = {k: v / steps_per_epoch for k, v in sums.items()}
        row["total"] = total_loss(row["adv_x"], row["adv_y"], row["cyc"], config.lambda_cyc)
        row["epoch"] = epoch + 1
        rows.append(row)
        log.info("epoch %d: adv_x=%.4f adv_y=%.4f cyc=%.4f total=%.4f",
                 row["epoch"], row["adv_x"], row["adv_y"], row["cyc"], row["total"])
        if on_epoch is not None:
            on_epoch(row)
        if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            last_good = _save_state(model, out_dir / f"translator_epoch{epoch + 1:04d}.ckpt",
                                    opt_g, opt_d, epoch + 1, rng, buffers, rows)
    if out_dir is not None:
        _save_state(model, out_dir / "translator_last.ckpt", opt_g, opt_d, config.epochs, rng, buffers, rows)
        write_loss_csv(rows, out_dir / "translator_loss.csv")
    return TrainResult(model, rows, opt_g.step_index)


# -- inference and evaluation -----------------------------------------------------------


def translate(model: CycleGanModel, visible_image) -> np.ndarray:
    """Map one visible image (H, W, C) in [0, 1] to a pseudo-infrared (H, W, C_ir) in [0, 1]."""
    img = np.asarray(visible_image, dtype=np.float32)
    want = (model.config.image_size, model.config.image_size)
    if img.shape[:2] != want:
        raise ValueError(f"translate expects {want[0]}x{want[1]} images, got {img.shape[0]}x{img.shape[1]}; "
                         f"tile or resize first")
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[-1] != model.config.visible_channels:
        raise ValueError(f"translate expects {model.config.visible_channels} channels, got {img.shape[-1]}")
    with no_grad():
        out = model.G(Tensor(to_internal(img))).data
    return to_external(out)[0]


def psnr_from_mse(mse: float, cap: float = PSNR_CAP) -> float:
    if mse <= 0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def image_metrics(outputs: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> dict:
    if len(outputs) == 0:
        raise ValueError("empty evaluation set")
    abs_sum = sq_sum = count = 0.0
    for out, tgt in zip(outputs, targets):
        out = np.asarray(out, dtype=np.float64).reshape(np.shape(out)[:2] + (-1,))
        tgt = np.asarray(tgt, dtype=np.float64).reshape(np.shape(tgt)[:2] + (-1,))
        if out.shape != tgt.shape:
            raise ValueError(f"shape mismatch {out.shape} vs {tgt.shape}")
        diff = out - tgt
        abs_sum += float(np.abs(diff).sum())
        sq_sum += float((diff * diff).sum())
        count += diff.size
    mse = sq_sum / count
    return {"mean_l1": abs_sum / count, "mse": mse, "psnr": psnr_from_mse(mse), "n": len(outputs)}


def evaluate_translation(model: CycleGanModel, paired_test: Sequence[tuple]) -> dict:
    """Mean L1 and PSNR of G(visible) against the aligned real infrared image."""
    if len(paired_test) == 0:
        raise ValueError("paired test set is empty")
    outputs = [translate(model, vis) for vis, _ in paired_test]
    return image_metrics(outputs, [ir for _, ir in paired_test])


def save_metrics(metrics: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return path
