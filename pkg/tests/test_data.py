import numpy as np
import pytest

from upseg.data import (DatasetSpec, downscale_image, downscale_mask,
                        generate, load_dataset, read_tensor_file,
                        save_dataset, split_samples, write_tensor_file)
from upseg.errors import ConfigError, FormatError, ShapeError, UsageError


def spec(**kw):
    base = dict(num_samples=4, input_res=8, gt_res=32, seed=3)
    base.update(kw)
    return DatasetSpec(**base)


# ---------------------------------------------------------------------------
# synthetic generation


def test_spec_validation():
    with pytest.raises(ConfigError):
        spec(num_samples=0)
    with pytest.raises(ConfigError):
        spec(gt_res=24)                      # ratio 3: not a power of two
    with pytest.raises(ConfigError):
        spec(gt_res=4)                       # smaller than the input
    with pytest.raises(ConfigError):
        spec(shape_family="squares")
    with pytest.raises(ConfigError):
        spec(noise_level=-0.1)
    with pytest.raises(ConfigError):
        spec(num_classes=0)


def test_spec_derived_quantities():
    s = spec(input_res=16, gt_res=256)
    assert s.scale_factor == 16
    assert s.num_stages == 4
    assert spec(input_res=8, gt_res=8).num_stages == 0


def test_generate_shapes_and_ranges():
    s = spec(num_samples=6, num_classes=2)
    samples = generate(s)
    assert len(samples) == 6
    for smp in samples:
        assert smp.image.shape == (1, 8, 8)
        assert smp.mask.shape == (32, 32)
        assert smp.image.min() >= 0.0 and smp.image.max() <= 1.0
        assert set(np.unique(smp.mask)) <= {0, 1, 2}


def test_generate_is_deterministic():
    a, b = generate(spec()), generate(spec())
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.mask, y.mask)
    different = generate(spec(seed=4))
    assert any(not np.array_equal(x.image, y.image)
               for x, y in zip(a, different))


def test_sample_streams_are_stable_across_corpus_size():
    # sample i depends only on (seed, i), so growing the corpus must not
    # reshuffle earlier samples
    short = generate(spec(num_samples=3))
    long = generate(spec(num_samples=8))
    for x, y in zip(short, long):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.mask, y.mask)


def test_masks_ignore_input_resolution():
    # the mask is rendered at gt resolution before the image is reduced,
    # so sweeping input_res keeps the ground truth fixed
    lo = generate(spec(input_res=8))
    hi = generate(spec(input_res=16))
    for x, y in zip(lo, hi):
        assert np.array_equal(x.mask, y.mask)


def test_foreground_fraction_stays_moderate():
    samples = generate(spec(num_samples=64, input_res=16, gt_res=64, seed=7))
    fractions = [float((s.mask > 0).mean()) for s in samples]
    assert min(fractions) > 0.02
    assert max(fractions) < 0.5


def test_blob_family_also_generates():
    samples = generate(spec(shape_family="blobs", num_samples=4,
                            num_classes=3, seed=11))
    for smp in samples:
        assert (smp.mask > 0).any()
        assert set(np.unique(smp.mask)) <= {0, 1, 2, 3}


def test_noise_level_zero_is_pure_area_average():
    clean = generate(spec(noise_level=0.0))
    noisy = generate(spec(noise_level=0.1))
    assert any(not np.array_equal(x.image, y.image)
               for x, y in zip(clean, noisy))
    for x, y in zip(clean, noisy):
        assert np.array_equal(x.mask, y.mask)


# ---------------------------------------------------------------------------
# down-scaling helpers


def test_downscale_image_is_area_average():
    img = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    out = downscale_image(img, 2)
    expected = np.array([[[2.5, 4.5], [10.5, 12.5]]])
    assert np.array_equal(out, expected)
    assert np.array_equal(downscale_image(img, 1), img)


def test_downscale_mask_keeps_top_left_labels():
    checker = np.indices((4, 4)).sum(axis=0) % 2
    out = downscale_mask(checker, 2)
    assert np.array_equal(out, np.zeros((2, 2), dtype=checker.dtype))
    shifted = np.roll(checker, 1, axis=1)
    assert np.array_equal(downscale_mask(shifted, 2), np.ones((2, 2), int))


def test_downscale_validation():
    with pytest.raises(ShapeError):
        downscale_image(np.zeros((1, 6, 6)), 4)
    with pytest.raises(ShapeError):
        downscale_mask(np.zeros((6, 6), int), 4)


# ---------------------------------------------------------------------------
# tensor file format


def random_tensors(rng):
    return {
        "alpha": rng.normal(size=(3, 4)).astype(np.float64),
        "beta": rng.normal(size=(2, 2, 2)).astype(np.float32),
        "gamma": rng.integers(0, 256, size=(5,)).astype(np.uint8),
        "scalarish": np.array([rng.normal()]),
    }


def test_round_trip_bit_exact(tmp_path, rng):
    path = tmp_path / "t.utsr"
    tensors = random_tensors(rng)
    write_tensor_file(path, tensors)
    back = read_tensor_file(path)
    assert list(back) == list(tensors)
    for name, arr in tensors.items():
        assert back[name].dtype == arr.dtype
        assert back[name].shape == arr.shape
        assert arr.tobytes() == back[name].tobytes()


def test_write_is_byte_deterministic(tmp_path, rng):
    tensors = random_tensors(rng)
    a, b = tmp_path / "a.utsr", tmp_path / "b.utsr"
    write_tensor_file(a, tensors)
    write_tensor_file(b, tensors)
    assert a.read_bytes() == b.read_bytes()


def test_zero_dim_and_empty_arrays_round_trip(tmp_path):
    tensors = {"empty": np.zeros((0, 3), dtype=np.float32),
               "scalar": np.array(7.5)}
    path = tmp_path / "edge.utsr"
    write_tensor_file(path, tensors)
    back = read_tensor_file(path)
    assert back["empty"].shape == (0, 3)
    assert back["scalar"].shape == ()
    assert back["scalar"] == 7.5


def test_writer_usage_errors(tmp_path):
    path = tmp_path / "x.utsr"
    with pytest.raises(UsageError):
        write_tensor_file(path, {"naïve": np.zeros(2)})
    with pytest.raises(UsageError):
        write_tensor_file(path, {"ints": np.zeros(2, dtype=np.int64)})
    with pytest.raises(UsageError):
        write_tensor_file(path, {"": np.zeros(2)})


def test_reader_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.utsr"
    path.write_bytes(b"NOPE" + bytes([1]))
    with pytest.raises(FormatError, match="magic"):
        read_tensor_file(path)


def test_reader_rejects_unknown_version(tmp_path, rng):
    path = tmp_path / "v.utsr"
    write_tensor_file(path, {"a": rng.normal(size=3)})
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_tensor_file(path)


def test_reader_rejects_unknown_dtype_naming_record(tmp_path, rng):
    path = tmp_path / "d.utsr"
    write_tensor_file(path, {"weights": rng.normal(size=3)})
    raw = bytearray(path.read_bytes())
    # dtype code byte sits right after magic+version+namelen+name
    offset = 5 + 2 + len("weights")
    raw[offset] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="weights"):
        read_tensor_file(path)


def test_reader_rejects_truncation(tmp_path, rng):
    path = tmp_path / "t.utsr"
    write_tensor_file(path, {"a": rng.normal(size=8)})
    raw = path.read_bytes()
    for cut in (len(raw) - 1, len(raw) - 30, 6):
        path.write_bytes(raw[:cut])
        with pytest.raises(FormatError, match="truncated"):
            read_tensor_file(path)


def test_reader_rejects_duplicate_records(tmp_path, rng):
    path = tmp_path / "dup.utsr"
    write_tensor_file(path, {"a": rng.normal(size=2)})
    raw = path.read_bytes()
    record = raw[5:]
    path.write_bytes(raw + record)           # same record appended twice
    with pytest.raises(FormatError, match="duplicate"):
        read_tensor_file(path)


def test_many_random_round_trips(tmp_path, rng):
    dtypes = [np.float64, np.float32, np.uint8]
    for case in range(25):
        tensors = {}
        for t in range(int(rng.integers(1, 5))):
            rank = int(rng.integers(0, 4))
            shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
            dt = dtypes[int(rng.integers(0, 3))]
            if dt is np.uint8:
                arr = rng.integers(0, 256, size=shape).astype(dt)
            else:
                arr = rng.normal(size=shape).astype(dt)
            tensors[f"t{t}"] = arr
        path = tmp_path / f"case{case}.utsr"
        write_tensor_file(path, tensors)
        back = read_tensor_file(path)
        assert list(back) == list(tensors)
        for name, arr in tensors.items():
            assert arr.dtype == back[name].dtype
            assert arr.shape == back[name].shape
            assert arr.tobytes() == back[name].tobytes()


# ---------------------------------------------------------------------------
# dataset persistence and splitting


def test_dataset_save_load_round_trip(tmp_path):
    s = spec(num_samples=5, num_classes=2)
    samples = generate(s)
    path = tmp_path / "data.utsr"
    save_dataset(path, s, samples)
    back, num_classes = load_dataset(path)
    assert num_classes == 2
    assert len(back) == 5
    for x, y in zip(samples, back):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.mask, y.mask)


def test_load_dataset_missing_record(tmp_path, rng):
    path = tmp_path / "partial.utsr"
    write_tensor_file(path, {"images": rng.normal(size=(2, 1, 4, 4))})
    with pytest.raises(FormatError, match="masks"):
        load_dataset(path)


def test_split_samples_proportions():
    samples = generate(spec(num_samples=9))
    train, val = split_samples(samples, 1 / 3)
    assert len(train) == 6 and len(val) == 3
    assert train[0] is samples[0] and val[-1] is samples[-1]
    tiny_train, tiny_val = split_samples(samples[:2], 0.05)
    assert len(tiny_val) == 1 and len(tiny_train) == 1


def test_split_samples_validation():
    samples = generate(spec(num_samples=4))
    with pytest.raises(ConfigError):
        split_samples(samples, 0.0)
    with pytest.raises(ConfigError):
        split_samples(samples, 1.0)
    with pytest.raises(ConfigError):
        split_samples(samples[:1], 0.5)
