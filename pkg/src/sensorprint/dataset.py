"""Dataset model, JSONL ingestion, and synthetic device generation.

A dataset is a collection of short sensor captures ("samples"), each a burst
of timestamped 3-axis accelerometer and gyroscope readings from one device.
The on-disk format is one JSON object per line with keys ``device_id``,
``sample_id``, ``t``, ``ax``, ``ay``, ``az``, ``gx``, ``gy``, ``gz`` (all
arrays of equal length).

The synthetic generator stands in for real data collection: it models a
stationary device lying flat on a surface, so the only device-to-device
signal is the per-device calibration error (gain/offset per axis) plus
measurement noise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GRAVITY = 9.81  # m/s^2, true |accel| for a stationary flat device

# RawSample validity bounds
MIN_RATE_HZ = 20.0
MAX_RATE_HZ = 200.0
NOMINAL_DURATION_S = 5.0
DURATION_TOLERANCE = 0.20


@dataclass
class RawSample:
    """One ~5 s burst of raw motion-sensor readings from one device.

    ``accel`` includes gravity (m/s^2), ``gyro`` is rotational rate (rad/s);
    both are (n, 3) arrays aligned with ``timestamps`` (seconds).
    """

    device_id: str
    sample_id: str
    timestamps: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)

    @property
    def n_readings(self) -> int:
        return len(self.timestamps)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def mean_rate(self) -> float:
        return (self.n_readings - 1) / self.duration

    def validate(self) -> None:
        """Raise ValueError on any invariant violation."""
        n = self.n_readings
        if n < 2:
            raise ValueError(
                f"sample {self.device_id}/{self.sample_id}: needs >= 2 readings, got {n}"
            )
        if self.accel.shape != (n, 3) or self.gyro.shape != (n, 3):
            raise ValueError(
                f"sample {self.device_id}/{self.sample_id}: length mismatch "
                f"(timestamps {n}, accel {self.accel.shape}, gyro {self.gyro.shape})"
            )
        if not np.all(np.isfinite(self.timestamps)):
            raise ValueError(f"sample {self.device_id}/{self.sample_id}: non-finite timestamps")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"sample {self.device_id}/{self.sample_id}: non-monotone timestamps")
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.gyro))):
            raise ValueError(f"sample {self.device_id}/{self.sample_id}: non-finite readings")
        rate = self.mean_rate
        if not (MIN_RATE_HZ <= rate <= MAX_RATE_HZ):
            raise ValueError(
                f"sample {self.device_id}/{self.sample_id}: mean rate {rate:.1f} Hz "
                f"outside [{MIN_RATE_HZ:.0f}, {MAX_RATE_HZ:.0f}]"
            )
        lo = NOMINAL_DURATION_S * (1 - DURATION_TOLERANCE)
        hi = NOMINAL_DURATION_S * (1 + DURATION_TOLERANCE)
        if not (lo <= self.duration <= hi):
            raise ValueError(
                f"sample {self.device_id}/{self.sample_id}: duration {self.duration:.2f} s "
                f"outside [{lo:.1f}, {hi:.1f}]"
            )


@dataclass
class Dataset:
    """Immutable-after-construction collection of RawSamples with a device index."""

    samples: list[RawSample] = field(default_factory=list)
    index: dict[str, list[str]] = field(default_factory=dict)
    countermeasure: str | None = None  # which defense rewrote this dataset, if any

    def add(self, sample: RawSample) -> None:
        ids = self.index.setdefault(sample.device_id, [])
        if sample.sample_id in ids:
            raise ValueError(
                f"duplicate sample id {sample.sample_id!r} for device {sample.device_id!r}"
            )
        ids.append(sample.sample_id)
        self.samples.append(sample)

    @property
    def device_ids(self) -> list[str]:
        return list(self.index.keys())

    @property
    def n_devices(self) -> int:
        return len(self.index)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def by_device(self) -> dict[str, list[RawSample]]:
        out: dict[str, list[RawSample]] = {d: [] for d in self.index}
        for s in self.samples:
            out[s.device_id].append(s)
        return out

    def underpopulated_devices(self, min_samples: int = 2) -> list[str]:
        """Devices with fewer than min_samples samples (loadable but flagged)."""
        return [d for d, ids in self.index.items() if len(ids) < min_samples]


@dataclass
class DeviceModel:
    """Per-device sensor calibration error: measured = truth * gain + offset + noise."""

    accel_gain: np.ndarray   # unitless, near 1, per axis
    accel_offset: np.ndarray  # m/s^2, per axis
    gyro_gain: np.ndarray    # unitless, per axis
    gyro_offset: np.ndarray  # rad/s, per axis
    noise_sigma_accel: float  # m/s^2
    noise_sigma_gyro: float   # rad/s

    def __post_init__(self):
        self.accel_gain = np.asarray(self.accel_gain, dtype=float)
        self.accel_offset = np.asarray(self.accel_offset, dtype=float)
        self.gyro_gain = np.asarray(self.gyro_gain, dtype=float)
        self.gyro_offset = np.asarray(self.gyro_offset, dtype=float)
        if np.any(self.accel_gain <= 0) or np.any(self.gyro_gain <= 0):
            raise ValueError("gains must be positive")
        if self.noise_sigma_accel < 0 or self.noise_sigma_gyro < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class DevicePrior:
    """Sampling ranges for DeviceModel fields (uniform per axis).

    Defaults reflect consumer MEMS calibration-error magnitudes.
    """

    accel_gain: tuple[float, float] = (0.95, 1.05)
    accel_offset: tuple[float, float] = (-0.2, 0.2)
    gyro_gain: tuple[float, float] = (0.95, 1.05)
    gyro_offset: tuple[float, float] = (-0.05, 0.05)
    noise_sigma_accel: float = 0.02
    noise_sigma_gyro: float = 0.002

    @classmethod
    def from_dict(cls, d: dict) -> "DevicePrior":
        kwargs = {}
        for key in ("accel_gain", "accel_offset", "gyro_gain", "gyro_offset"):
            if key in d:
                lo, hi = d[key]
                kwargs[key] = (float(lo), float(hi))
        for key in ("noise_sigma_accel", "noise_sigma_gyro"):
            if key in d:
                kwargs[key] = float(d[key])
        unknown = set(d) - {
            "accel_gain", "accel_offset", "gyro_gain", "gyro_offset",
            "noise_sigma_accel", "noise_sigma_gyro",
        }
        if unknown:
            raise ValueError(f"unknown device-prior keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "DevicePrior":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def draw(self, rng: np.random.Generator) -> DeviceModel:
        return DeviceModel(
            accel_gain=rng.uniform(*self.accel_gain, size=3),
            accel_offset=rng.uniform(*self.accel_offset, size=3),
            gyro_gain=rng.uniform(*self.gyro_gain, size=3),
            gyro_offset=rng.uniform(*self.gyro_offset, size=3),
            noise_sigma_accel=self.noise_sigma_accel,
            noise_sigma_gyro=self.noise_sigma_gyro,
        )


RECORD_KEYS = ("device_id", "sample_id", "t", "ax", "ay", "az", "gx", "gy", "gz")


def _sample_from_record(rec: dict, lineno: int) -> tuple[RawSample, str | None]:
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise ValueError(f"line {lineno}: missing keys {missing}")
    t = np.asarray(rec["t"], dtype=float)
    cols = {}
    for k in ("ax", "ay", "az", "gx", "gy", "gz"):
        cols[k] = np.asarray(rec[k], dtype=float)
        if cols[k].shape != t.shape:
            raise ValueError(f"line {lineno}: array {k!r} length differs from t")
    sample = RawSample(
        device_id=str(rec["device_id"]),
        sample_id=str(rec["sample_id"]),
        timestamps=t,
        accel=np.column_stack([cols["ax"], cols["ay"], cols["az"]]),
        gyro=np.column_stack([cols["gx"], cols["gy"], cols["gz"]]),
    )
    return sample, rec.get("countermeasure")


def load_dataset(path) -> Dataset:
    """Load and validate a JSONL dataset file.

    Every RawSample invariant is enforced; errors carry the 1-based line
    number. Devices with fewer than 2 samples load fine but are logged.
    """
    ds = Dataset()
    cm_values = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: malformed record ({e.msg})") from e
            if not isinstance(rec, dict):
                raise ValueError(f"line {lineno}: record is not a JSON object")
            sample, cm = _sample_from_record(rec, lineno)
            try:
                sample.validate()
            except ValueError as e:
                raise ValueError(f"line {lineno}: {e}") from e
            if cm is not None:
                cm_values.add(cm)
            ds.add(sample)
    if cm_values:
        if len(cm_values) > 1:
            raise ValueError(f"mixed countermeasure tags in one file: {sorted(cm_values)}")
        ds.countermeasure = cm_values.pop()
    flagged = ds.underpopulated_devices()
    if flagged:
        log.warning("%d device(s) have fewer than 2 samples: %s", len(flagged), flagged[:5])
    return ds


def write_dataset(dataset: Dataset, path) -> None:
    """Write a dataset in the JSONL record format (round-trips with load_dataset)."""
    with open(path, "w") as fh:
        for s in dataset.samples:
            rec = {
                "device_id": s.device_id,
                "sample_id": s.sample_id,
                "t": s.timestamps.tolist(),
                "ax": s.accel[:, 0].tolist(),
                "ay": s.accel[:, 1].tolist(),
                "az": s.accel[:, 2].tolist(),
                "gx": s.gyro[:, 0].tolist(),
                "gy": s.gyro[:, 1].tolist(),
                "gz": s.gyro[:, 2].tolist(),
            }
            if dataset.countermeasure is not None:
                rec["countermeasure"] = dataset.countermeasure
            fh.write(json.dumps(rec) + "\n")


def synthesize_sample(
    model: DeviceModel,
    rng: np.random.Generator,
    device_id: str = "dev",
    sample_id: str = "s0",
    fs_nominal: float = 100.0,
    duration: float = 5.0,
) -> RawSample:
    """Emit one sample of a stationary device under the given calibration model.

    Truth is accel (0, 0, 9.81) m/s^2 and gyro (0, 0, 0) rad/s; the measured
    reading is truth * gain + offset + Gaussian noise. Timestamps are nominal
    ``fs_nominal`` with uniform jitter of +/-10% of the period, which keeps
    them strictly increasing.
    """
    period = 1.0 / fs_nominal
    n = int(round(duration * fs_nominal)) + 1
    t = np.arange(n) * period + rng.uniform(-0.1 * period, 0.1 * period, size=n)
    truth_accel = np.array([0.0, 0.0, GRAVITY])
    accel = (
        truth_accel * model.accel_gain
        + model.accel_offset
        + rng.normal(0.0, model.noise_sigma_accel, size=(n, 3))
    )
    gyro = model.gyro_offset + rng.normal(0.0, model.noise_sigma_gyro, size=(n, 3))
    return RawSample(device_id, sample_id, t, accel, gyro)


def generate_synthetic(
    n_devices: int,
    samples_per_device: int,
    device_prior: DevicePrior | None = None,
    seed: int = 0,
) -> Dataset:
    """Generate a synthetic dataset of stationary-device captures.

    One DeviceModel is drawn per device from the prior; per-device RNG
    streams are keyed (seed, device index) so generation is reproducible
    regardless of evaluation order or thread count.
    """
    if n_devices < 0 or samples_per_device < 0:
        raise ValueError("counts must be >= 0")
    prior = device_prior or DevicePrior()
    ds = Dataset()
    for i in range(n_devices):
        rng = np.random.default_rng([seed, i])
        model = prior.draw(rng)
        device_id = f"dev{i:04d}"
        for j in range(samples_per_device):
            ds.add(synthesize_sample(model, rng, device_id, f"s{j:03d}"))
    return ds
