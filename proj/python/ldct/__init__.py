"""Python bindings for the ldct library."""

from ._ldct import (
    ConfigError,
    DimensionError,
    Geometry,
    UsageError,
    dice_loss,
    fbp,
    generate_phantom,
    hard_dice,
    mse_loss,
    psnr_roi,
    radon,
    roi_mask,
    run_cli,
    simulate_low_dose,
    ssim_roi,
    task_adaptive_loss,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Geometry",
    "UsageError",
    "dice_loss",
    "fbp",
    "generate_phantom",
    "hard_dice",
    "mse_loss",
    "psnr_roi",
    "radon",
    "roi_mask",
    "run_cli",
    "simulate_low_dose",
    "ssim_roi",
    "task_adaptive_loss",
]
