"""Storage-gain and region PSNR accounting."""
from __future__ import annotations

import numpy as np

from ..deblursim import PSNR_CAP, psnr
from ..errors import ConfigError


def _bits(log):
    return [e.bits if hasattr(e, "bits") else int(e) for e in log]


def storage_gain(encoder_log, baseline_log) -> float:
    """Percentage of bits saved relative to the baseline encode."""
    bits, base = _bits(encoder_log), _bits(baseline_log)
    if len(bits) != len(base):
        raise ConfigError(f"frame counts differ: {len(bits)} vs {len(base)}")
    total = sum(base)
    if total <= 0:
        raise ConfigError("baseline has no bits")
    return 100.0 * (1.0 - sum(bits) / total)


def storage_report(runs: dict, baseline_log) -> list[dict]:
    """One row per scenario: name, bits, baseline bits, gain in percent."""
    base = sum(_bits(baseline_log))
    return [{"scenario": name, "bits": sum(_bits(log)), "baseline_bits": base,
             "gain_percent": storage_gain(log, baseline_log)} for name, log in runs.items()]


def region_psnr(a, b, region, max_val=255.0) -> float:
    region = np.asarray(region, bool)
    if not region.any():
        return float("nan")
    return psnr(np.asarray(a)[region], np.asarray(b)[region], max_val)


def psnr_report(decoded, original, roi_masks, max_val=255.0) -> list[dict]:
    """Per-frame PSNR inside and outside the relevance masks (capped at PSNR_CAP)."""
    if not (len(decoded) == len(original) == len(roi_masks)):
        raise ConfigError("decoded, original and masks differ in frame count")
    rows = []
    for t, (d, o, m) in enumerate(zip(decoded, original, roi_masks)):
        m = np.asarray(m, bool)
        if d.ndim == 3 and m.ndim == 2:
            m = np.repeat(m[..., None], d.shape[-1], axis=-1)
        rows.append({"frame": t, "psnr_roi": region_psnr(d, o, m, max_val),
                     "psnr_non_roi": region_psnr(d, o, ~m, max_val)})
    return rows


__all__ = ["storage_gain", "storage_report", "region_psnr", "psnr_report", "PSNR_CAP"]
