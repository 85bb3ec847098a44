"""Unpaired visible-to-infrared translation with a CycleGAN."""

from .losses import (
    SCORE_EPS,
    adversarial_loss,
    adversarial_loss_x,
    adversarial_loss_y,
    cycle_loss,
    generator_adversarial_term,
    total_loss,
)
from .model import CycleGanModel, HistoryBuffer, TranslatorConfig, discriminator_specs, generator_specs
from .training import (
    LOSS_COLUMNS,
    PSNR_CAP,
    ObjectiveResult,
    TrainingDiverged,
    TrainResult,
    discriminator_objective,
    evaluate_translation,
    generator_objective,
    image_metrics,
    psnr_from_mse,
    save_metrics,
    to_external,
    to_internal,
    train,
    translate,
    write_loss_csv,
)

__all__ = [
    "CycleGanModel", "HistoryBuffer", "LOSS_COLUMNS", "ObjectiveResult", "PSNR_CAP", "SCORE_EPS",
    "TrainResult", "TrainingDiverged", "TranslatorConfig", "adversarial_loss", "adversarial_loss_x",
    "adversarial_loss_y", "cycle_loss", "discriminator_objective", "discriminator_specs",
    "evaluate_translation", "generator_adversarial_term", "generator_objective", "generator_specs",
    "image_metrics", "psnr_from_mse", "save_metrics", "to_external", "to_internal", "total_loss", "train", "translate", "write_loss_csv",
]
