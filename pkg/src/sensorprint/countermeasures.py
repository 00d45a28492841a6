"""Privacy defenses for motion-sensor streams and their identification cost.

Two schemes: per-session affine obfuscation (random gain and offset per
axis, emulating a swap to a differently miscalibrated sensor) and polar
quantization (snapping magnitudes and angles to coarse bins). Both are pure
per-sample transforms; ``privacy_impact`` measures what each one costs an
identification pipeline on the same data.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, RawSample

OBFUSCATE = "obfuscate"
QUANTIZE = "quantize"
SCHEMES = (OBFUSCATE, QUANTIZE)


@dataclass
class ObfuscationConfig:
    """Ranges for the per-session gain/offset draws.

    Offsets are in m/s^2 for the accelerometer and rad/s for the gyroscope;
    gains are unitless and must stay strictly positive.
    """

    offset_range: tuple = (-1.5, 1.5)
    gain_range: tuple = (0.75, 1.25)
    seed: int = 0

    def __post_init__(self):
        o_lo, o_hi = self.offset_range
        g_lo, g_hi = self.gain_range
        if o_lo > o_hi or g_lo > g_hi:
            raise ValueError("ranges must be non-empty (lo <= hi)")
        if g_lo <= 0:
            raise ValueError("gain range must be strictly positive")


@dataclass
class QuantizationConfig:
    angle_bin: float = 6.0  # degrees; also applied to gyro rates in deg/s
    magnitude_bin: float = 1.0  # m/s^2

    def __post_init__(self):
        if self.angle_bin <= 0 or self.magnitude_bin <= 0:
            raise ValueError("bin sizes must be > 0")


def _session_rng(seed: int, device_id: str, sample_id: str) -> np.random.Generator:
    # keyed stream: draws depend only on (seed, device, sample), not on
    # processing order, so data-parallel application stays deterministic
    digest = hashlib.sha256(f"{seed}:{device_id}:{sample_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def obfuscate(sample: RawSample, cfg: ObfuscationConfig) -> RawSample:
    """Apply one random affine map per axis per sensor to a whole session.

    Each of the six axes gets its own (gain, offset) pair, drawn uniformly
    from the configured ranges and held constant across the session; every
    reading maps to ``value * gain + offset``. Timestamps are untouched.
    """
    rng = _session_rng(cfg.seed, sample.device_id, sample.sample_id)
    out = {}
    for name, data in (("accel", sample.accel), ("gyro", sample.gyro)):
        gains = rng.uniform(cfg.gain_range[0], cfg.gain_range[1], size=3)
        offsets = rng.uniform(cfg.offset_range[0], cfg.offset_range[1], size=3)
        out[name] = data * gains + offsets
    return RawSample(
        device_id=sample.device_id,
        sample_id=sample.sample_id,
        timestamps=sample.timestamps.copy(),
        accel=out["accel"],
        gyro=out["gyro"],
    )


def to_polar(accel) -> tuple[float, float, float]:
    """Cartesian acceleration to (radius, inclination, azimuth).

    Inclination theta is measured from the +z axis, in [0, pi]; azimuth psi
    is the two-argument arctangent of (ay, ax), in (-pi, pi]. The zero
    vector and the poles (ax = ay = 0) return angle 0 by convention.
    """
    ax, ay, az = (float(v) for v in accel)
    r = math.sqrt(ax * ax + ay * ay + az * az)
    if r == 0.0:
        return 0.0, 0.0, 0.0
    theta = math.acos(min(1.0, max(-1.0, az / r)))
    if ax == 0.0 and ay == 0.0:
        psi = 0.0
    else:
        psi = math.atan2(ay, ax)
        if psi == -math.pi:  # contract wants the half-open interval
            psi = math.pi
    return r, theta, psi


def from_polar(r: float, theta: float, psi: float) -> np.ndarray:
    if r < 0:
        raise ValueError("radius must be >= 0")
    s = math.sin(theta)
    return np.array([r * s * math.cos(psi), r * s * math.sin(psi), r * math.cos(theta)])


def quantize_value(val: float, bin_size: float) -> float:
    """Snap to the nearest multiple of ``bin_size``, halves rounding up.

    Implemented as floored division with a floored (always non-negative)
    remainder, so negative inputs behave consistently: -3.1 with bin 6 sits
    in bin -1 with remainder 2.9 and stays at -6.
    """
    if bin_size <= 0:
        raise ValueError("bin_size must be > 0")
    b = np.floor(np.asarray(val, dtype=float) / bin_size)
    rem = val - b * bin_size
    b = np.where(rem >= bin_size / 2, b + 1, b)
    out = b * bin_size
    return float(out) if np.ndim(val) == 0 else out


def quantize_sample(sample: RawSample, cfg: QuantizationConfig) -> RawSample:
    """Quantize a session: accelerometer in polar bins, gyroscope in rate bins.

    Each accel reading goes to polar form, gets its radius snapped to
    ``magnitude_bin`` and both angles (in degrees) to ``angle_bin``, with
    inclination clamped to [0, 180] degrees, then maps back. Gyro rates are
    converted to deg/s, snapped to ``angle_bin``, and converted back.
    Timestamps are untouched.
    """
    accel_q = np.empty_like(sample.accel)
    for i in range(len(accel_q)):
        r, theta, psi = to_polar(sample.accel[i])
        r_q = quantize_value(r, cfg.magnitude_bin)
        theta_q = quantize_value(math.degrees(theta), cfg.angle_bin)
        theta_q = min(180.0, max(0.0, theta_q))  # rounding may overshoot the pole
        psi_q = quantize_value(math.degrees(psi), cfg.angle_bin)
        accel_q[i] = from_polar(r_q, math.radians(theta_q), math.radians(psi_q))
    gyro_q = np.radians(quantize_value(np.degrees(sample.gyro), cfg.angle_bin))
    return RawSample(
        device_id=sample.device_id,
        sample_id=sample.sample_id,
        timestamps=sample.timestamps.copy(),
        accel=accel_q,
        gyro=gyro_q,
    )


def apply_countermeasure(
    dataset: Dataset,
    scheme: str,
    obfuscation: ObfuscationConfig | None = None,
    quantization: QuantizationConfig | None = None,
) -> Dataset:
    """Transform every sample and tag the result with the scheme that made it."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown countermeasure {scheme!r}; choose from {SCHEMES}")
    if scheme == OBFUSCATE:
        cfg = obfuscation if obfuscation is not None else ObfuscationConfig()
        transform = lambda s: obfuscate(s, cfg)
    else:
        qcfg = quantization if quantization is not None else QuantizationConfig()
        transform = lambda s: quantize_sample(s, qcfg)
    out = Dataset(countermeasure=scheme)
    for s in dataset.samples:
        out.add(transform(s))
    return out


@dataclass
class PrivacyReport:
    countermeasure: str
    baseline_avg_f: float
    protected_avg_f: float
    relative_drop: float  # (baseline - protected) / baseline; 0 when baseline is 0
    baseline_accuracy: float
    protected_accuracy: float

    def to_dict(self) -> dict:
        return {
            "countermeasure": self.countermeasure,
            "baseline_avg_f": self.baseline_avg_f,
            "protected_avg_f": self.protected_avg_f,
            "relative_drop": self.relative_drop,
            "baseline_accuracy": self.baseline_accuracy,
            "protected_accuracy": self.protected_accuracy,
        }


def privacy_impact(
    dataset: Dataset,
    scheme: str,
    classifier: str = "rf",
    train_per_device: int = 3,
    repeats: int = 10,
    seed: int = 0,
    obfuscation: ObfuscationConfig | None = None,
    quantization: QuantizationConfig | None = None,
    **protocol_kwargs,
) -> PrivacyReport:
    """Measure what a countermeasure costs the identification pipeline.

    Runs the identical repeated-split protocol on the raw dataset and on
    the transformed one (the transform precedes all preprocessing) and
    reports both mean AvgF scores plus the relative drop.
    """
    from .classify import run_protocol

    protected_ds = apply_countermeasure(
        dataset, scheme, obfuscation=obfuscation, quantization=quantization
    )
    base = run_protocol(
        dataset, classifier=classifier, train_per_device=train_per_device,
        repeats=repeats, seed=seed, **protocol_kwargs,
    )
    prot = run_protocol(
        protected_ds, classifier=classifier, train_per_device=train_per_device,
        repeats=repeats, seed=seed, **protocol_kwargs,
    )
    drop = 0.0 if base.avg_f_mean == 0 else (base.avg_f_mean - prot.avg_f_mean) / base.avg_f_mean
    return PrivacyReport(
        countermeasure=scheme,
        baseline_avg_f=base.avg_f_mean,
        protected_avg_f=prot.avg_f_mean,
        relative_drop=drop,
        baseline_accuracy=base.accuracy_mean,
        protected_accuracy=prot.accuracy_mean,
    )
