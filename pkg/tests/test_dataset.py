"""Dataset model, JSONL round-trip, and synthetic generator tests."""

import json

import numpy as np
import pytest

from sensorprint.dataset import (
    Dataset,
    DeviceModel,
    DevicePrior,
    RawSample,
    generate_synthetic,
    load_dataset,
    synthesize_sample,
    write_dataset,
)


def make_record(device_id="d1", sample_id="s1", n=500, rate=100.0):
    t = np.arange(n) / rate
    return {
        "device_id": device_id,
        "sample_id": sample_id,
        "t": t.tolist(),
        "ax": [0.0] * n,
        "ay": [0.0] * n,
        "az": [9.81] * n,
        "gx": [0.0] * n,
        "gy": [0.0] * n,
        "gz": [0.0] * n,
    }


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    ds = load_dataset(p)
    assert ds.n_devices == 0
    assert ds.n_samples == 0


def test_load_two_records_one_device(tmp_path):
    p = tmp_path / "two.jsonl"
    write_jsonl(p, [make_record(sample_id="s1"), make_record(sample_id="s2")])
    ds = load_dataset(p)
    assert ds.n_devices == 1
    assert ds.n_samples == 2
    assert ds.index["d1"] == ["s1", "s2"]


def test_load_rejects_non_monotone_timestamps(tmp_path):
    rec = make_record()
    rec["t"][1] = rec["t"][0]  # duplicate timestamp
    p = tmp_path / "bad.jsonl"
    write_jsonl(p, [rec])
    with pytest.raises(ValueError, match="line 1.*non-monotone"):
        load_dataset(p)


def test_load_rejects_length_mismatch(tmp_path):
    rec = make_record()
    rec["gx"] = rec["gx"][:-1]
    p = tmp_path / "bad.jsonl"
    write_jsonl(p, [rec])
    with pytest.raises(ValueError, match="line 1"):
        load_dataset(p)


def test_load_rejects_malformed_json_with_line_number(tmp_path):
    p = tmp_path / "bad.jsonl"
    with open(p, "w") as fh:
        fh.write(json.dumps(make_record()) + "\n")
        fh.write("{not json\n")
    with pytest.raises(ValueError, match="line 2"):
        load_dataset(p)


def test_load_rejects_missing_key(tmp_path):
    rec = make_record()
    del rec["az"]
    p = tmp_path / "bad.jsonl"
    write_jsonl(p, [rec])
    with pytest.raises(ValueError, match="line 1.*az"):
        load_dataset(p)


def test_load_rejects_duplicate_sample(tmp_path):
    p = tmp_path / "dup.jsonl"
    write_jsonl(p, [make_record(), make_record()])
    with pytest.raises(ValueError, match="duplicate"):
        load_dataset(p)


def test_load_rejects_out_of_range_rate(tmp_path):
    rec = make_record(n=50, rate=10.0)  # 10 Hz, below the 20 Hz floor
    p = tmp_path / "slow.jsonl"
    write_jsonl(p, [rec])
    with pytest.raises(ValueError, match="rate"):
        load_dataset(p)


def test_load_rejects_bad_duration(tmp_path):
    rec = make_record(n=200, rate=100.0)  # 2 s, below 5 s - 20%
    p = tmp_path / "short.jsonl"
    write_jsonl(p, [rec])
    with pytest.raises(ValueError, match="duration"):
        load_dataset(p)


def test_round_trip_record_equivalent(tmp_path):
    ds = generate_synthetic(3, 2, seed=7)
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_dataset(ds, p1)
    write_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_countermeasure_tag_round_trips(tmp_path):
    ds = generate_synthetic(1, 2, seed=0)
    ds.countermeasure = "obfuscation"
    p = tmp_path / "cm.jsonl"
    write_dataset(ds, p)
    loaded = load_dataset(p)
    assert loaded.countermeasure == "obfuscation"


def test_generate_zero_devices_is_empty():
    ds = generate_synthetic(0, 5, seed=42)
    assert ds.n_devices == 0
    assert ds.n_samples == 0


def test_generate_negative_count_rejected():
    with pytest.raises(ValueError):
        generate_synthetic(-1, 5)


def test_generate_same_seed_byte_identical(tmp_path):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_dataset(generate_synthetic(4, 3, seed=123), p1)
    write_dataset(generate_synthetic(4, 3, seed=123), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_different_seeds_differ(tmp_path):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_dataset(generate_synthetic(2, 2, seed=1), p1)
    write_dataset(generate_synthetic(2, 2, seed=2), p2)
    assert p1.read_bytes() != p2.read_bytes()


def test_generated_samples_satisfy_invariants():
    ds = generate_synthetic(5, 4, seed=99)
    assert ds.n_devices == 5
    assert ds.n_samples == 20
    for s in ds.samples:
        s.validate()  # raises on any violation
        assert 90.0 <= s.mean_rate <= 110.0
        assert 4.9 <= s.duration <= 5.1


def test_offset_z_shift_separates_magnitude_means():
    # Two devices identical except accel_offset_z differs by 1.0 m/s^2, with
    # noise sigma 0.01. Mean |a| per sample is ~= 9.81 + offset_z (cross-axis
    # noise enters only at second order, ~sigma^2 / (2 * 9.81) ~ 5e-6), and the
    # mean over ~500 readings has std ~ 0.01 / sqrt(500) < 5e-4. So the gap
    # between the two devices' per-sample means must stay close to 1.0 and
    # certainly above 0.5.
    base = dict(
        accel_gain=np.ones(3),
        gyro_gain=np.ones(3),
        gyro_offset=np.zeros(3),
        noise_sigma_accel=0.01,
        noise_sigma_gyro=0.002,
    )
    dev_a = DeviceModel(accel_offset=np.array([0.0, 0.0, 0.0]), **base)
    dev_b = DeviceModel(accel_offset=np.array([0.0, 0.0, 1.0]), **base)
    rng = np.random.default_rng(5)
    means_a = []
    means_b = []
    for j in range(5):
        sa = synthesize_sample(dev_a, rng, "a", f"s{j}")
        sb = synthesize_sample(dev_b, rng, "b", f"s{j}")
        means_a.append(np.mean(np.linalg.norm(sa.accel, axis=1)))
        means_b.append(np.mean(np.linalg.norm(sb.accel, axis=1)))
    margin = min(means_b) - max(means_a)
    assert margin > 0.5
    assert abs(np.mean(means_b) - np.mean(means_a) - 1.0) < 0.01


def test_device_model_rejects_nonpositive_gain():
    with pytest.raises(ValueError, match="gain"):
        DeviceModel(
            accel_gain=np.array([1.0, 0.0, 1.0]),
            accel_offset=np.zeros(3),
            gyro_gain=np.ones(3),
            gyro_offset=np.zeros(3),
            noise_sigma_accel=0.02,
            noise_sigma_gyro=0.002,
        )


def test_device_prior_from_dict_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        DevicePrior.from_dict({"accel_bias": [0, 1]})


def test_device_prior_file_round_trip(tmp_path):
    p = tmp_path / "prior.json"
    p.write_text(json.dumps({"accel_offset": [-0.5, 0.5], "noise_sigma_accel": 0.05}))
    prior = DevicePrior.from_file(p)
    assert prior.accel_offset == (-0.5, 0.5)
    assert prior.noise_sigma_accel == 0.05
    assert prior.accel_gain == (0.95, 1.05)  # untouched default


def test_underpopulated_devices_flagged():
    ds = Dataset()
    ds.add(RawSample("d1", "s1", np.arange(500) / 100.0, np.zeros((500, 3)), np.zeros((500, 3))))
    ds.add(RawSample("d2", "s1", np.arange(500) / 100.0, np.zeros((500, 3)), np.zeros((500, 3))))
    ds.add(RawSample("d2", "s2", np.arange(500) / 100.0, np.zeros((500, 3)), np.zeros((500, 3))))
    assert ds.underpopulated_devices() == ["d1"]
