"""Flow-guided video inpainting with noise-optimized diffusion.

Frames are float64 arrays shaped (C, H, W) with values in [0, 1]; masks are
(H, W) arrays where nonzero marks a missing pixel; flows are (2, H, W).
"""

import json

from . import _vipflow
from ._vipflow import (
    ConfigError,
    IoError,
    NumericError,
    ShapeError,
    estimate_flow,
    fit_prior,
    psnr,
    read_flo,
    ssim,
    standard_suite,
    synth,
    warp_error,
    write_flo,
)

__all__ = [
    "ConfigError",
    "IoError",
    "NumericError",
    "ShapeError",
    "estimate_flow",
    "fit_prior",
    "inpaint",
    "psnr",
    "read_flo",
    "ssim",
    "standard_suite",
    "synth",
    "warp_error",
    "write_flo",
]


def inpaint(frames, masks, forward_flows=None, backward_flows=None, **options):
    """Complete a masked sequence.

    Without flows the motion is estimated from the masked frames. Returns
    (frames, provenance, report) with the report decoded from JSON.
    """
    out, provenance, report = _vipflow.inpaint(
        list(frames), list(masks), forward_flows, backward_flows, **options
    )
    return out, provenance, json.loads(report)
