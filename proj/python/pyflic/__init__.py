"""Python bindings for the frequency-aware scalable image codec."""

from ._flic import (
    FormatError,
    Model,
    ModelMismatchError,
    bd_rate,
    decode,
    encode,
    extract_roi,
    latent_mosaics,
    ms_ssim,
    mse,
    psnr,
    spectrum,
)

__all__ = [
    "FormatError",
    "Model",
    "ModelMismatchError",
    "bd_rate",
    "decode",
    "encode",
    "extract_roi",
    "latent_mosaics",
    "ms_ssim",
    "mse",
    "psnr",
    "spectrum",
]
