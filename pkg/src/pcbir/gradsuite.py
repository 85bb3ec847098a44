"""Finite-difference checks of every layer kind and every training objective.

All cases run on 4x4 images (the detector loss on a one-cell grid) with
fixed seeds, so a pass or fail is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .detector import DetectorConfig, GridDetector, detector_loss, encode_targets
from .datapipe.labels import BoundingBox
from .nncore import (
    LAYER_KINDS,
    GradCheckReport,
    LayerSpec,
    Parameter,
    Tensor,
    build_network,
    grad_check,
    grad_check_fn,
    projection_loss,
)
from .translator import TranslatorConfig, CycleGanModel, discriminator_objective, generator_objective

TOY_SIZE = 4
# Instance norm is scale invariant, so with tiny kernels a fixed epsilon is a large
# relative step; the toys use a larger init so epsilon stays in the linear regime.
TOY_INIT_STD = 0.5
# entries straddling a relu/abs kink are skipped; too many would hollow out a check
MAX_SKIPPED_FRACTION = 0.1


@dataclass
class CaseResult:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed and self.report.skipped_fraction <= MAX_SKIPPED_FRACTION

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel err {self.report.worst:.3e} "
                f"(tol {self.report.tolerance:g}), kink-skipped {self.report.skipped_fraction:.1%}")


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    # keep inputs off the relu kink so no difference quotient spans it
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _layer_case(kind: str, epsilon: float, tolerance: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    shape = (2, 2, TOY_SIZE, TOY_SIZE)
    if kind in ("conv2d", "transposed_conv2d", "residual_block"):
        specs = {
            "conv2d": [LayerSpec("conv2d", 3, 3, 1, 1)],
            "transposed_conv2d": [LayerSpec("transposed_conv2d", 3, 3, 2, 1, output_padding=1)],
            "residual_block": [LayerSpec("residual_block", 2)],
        }[kind]
        net = build_network(specs, shape[1:], rng, f"toy_{kind}", init_std=TOY_INIT_STD)
        for p in net.parameters():
            p.data = p.data + rng.normal(0.0, 0.1, size=p.shape).astype(p.dtype)
        return grad_check(net, Tensor(rng.normal(size=shape)), epsilon, tolerance)
    net = build_network([LayerSpec(kind, 2)], shape[1:], rng, f"toy_{kind}")
    x = Parameter(_away_from_zero(rng, shape), name=f"toy_{kind}.input")
    return grad_check_fn(lambda: projection_loss(net(x), seed), [x], epsilon, tolerance)


def toy_translator_config(seed: int = 0) -> TranslatorConfig:
    return TranslatorConfig(image_size=TOY_SIZE, gen_base_channels=2, gen_downsamplings=1,
                            gen_residual_blocks=1, disc_base_channels=2, disc_layers=1,
                            init_std=TOY_INIT_STD, seed=seed)


def _toy_batches(config: TranslatorConfig, rng: np.random.Generator):
    s = config.image_size
    x = rng.uniform(-0.9, 0.9, size=(2, config.visible_channels, s, s))
    y = rng.uniform(-0.9, 0.9, size=(2, config.ir_channels, s, s))
    return Tensor(x), Tensor(y)


def _generator_case(epsilon: float, tolerance: float, seed: int) -> GradCheckReport:
    config = toy_translator_config(seed)
    model = CycleGanModel.build(config)
    x, y = _toy_batches(config, np.random.default_rng(seed + 1))
    return grad_check_fn(lambda: generator_objective(model, x, y).loss, model.generator_parameters(),
                         epsilon, tolerance, inputs=[x, y])


def _discriminator_case(epsilon: float, tolerance: float, seed: int) -> GradCheckReport:
    config = toy_translator_config(seed)
    model = CycleGanModel.build(config)
    rng = np.random.default_rng(seed + 2)
    x, y = _toy_batches(config, rng)
    fakes = (Tensor(rng.uniform(-0.9, 0.9, size=x.shape)), Tensor(rng.uniform(-0.9, 0.9, size=y.shape)))
    return grad_check_fn(lambda: discriminator_objective(model, x, y, fakes).loss,
                         model.discriminator_parameters(), epsilon, tolerance,
                         inputs=[x, y, *fakes])


def _detector_case(epsilon: float, tolerance: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    config = DetectorConfig(image_size=TOY_SIZE, grid_cells_per_side=1, base_channels=2, seed=seed)
    model = GridDetector.build(config, rng)
    x = Tensor(rng.uniform(0.0, 1.0, size=(2, 1, TOY_SIZE, TOY_SIZE)))
    targets = [encode_targets([BoundingBox(0, 0.45, 0.55, 0.6, 0.4)], 1), encode_targets([], 1)]
    raw = Parameter(np.array([0.3, 0.2, -0.4, -0.3, 0.2]).reshape(1, 5, 1, 1), name="raw_prediction")
    one = [encode_targets([BoundingBox(0, 0.5, 0.5, 0.7, 0.5)], 1)]
    net_report = grad_check_fn(lambda: detector_loss(model(x), targets).total, model.parameters(),
                               epsilon, tolerance, inputs=[x])
    raw_report = grad_check_fn(lambda: detector_loss(raw, one).total, [raw], epsilon, tolerance)
    net_report.max_rel_error.update(raw_report.max_rel_error)
    net_report.checked.update(raw_report.checked)
    net_report.skipped.update(raw_report.skipped)
    return net_report


def suite_cases() -> dict[str, Callable[[float, float, int], GradCheckReport]]:
    cases: dict[str, Callable[[float, float, int], GradCheckReport]] = {}
    for kind in LAYER_KINDS:
        cases[f"layer/{kind}"] = (lambda k: lambda e, t, s: _layer_case(k, e, t, s))(kind)
    cases["objective/generator"] = _generator_case
    cases["objective/discriminator"] = _discriminator_case
    cases["objective/detector"] = _detector_case
    return cases


def run_suite(epsilon: float = 1e-3, tolerance: float = 1e-2, seed: int = 0,
              only: str | None = None) -> list[CaseResult]:
    return [CaseResult(name, fn(epsilon, tolerance, seed)) for name, fn in suite_cases().items()
            if only is None or only in name]
