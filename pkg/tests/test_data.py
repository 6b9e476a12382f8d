"""Shape generator, dataset I/O, augmentation."""

import numpy as np
import pytest

from specseg.data import (
    CORPUS_HW,
    CORPUS_RECIPES,
    Sample,
    ShapeSpec,
    augment,
    gen_shape,
    generate_dataset,
    load_dataset,
    save_sample,
)
from specseg.errors import DataError
from specseg.loss import morph_features


def test_gen_deterministic_per_seed():
    a = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=42), (64, 64))
    b = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=42), (64, 64))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)
    c = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=43), (64, 64))
    assert not np.array_equal(a.mask, c.mask)


def test_blob_size_fraction_in_band():
    hits = []
    for seed in range(10):
        s = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=seed), (64, 64))
        hits.append(s.mask.mean())
    assert all(0.15 <= h <= 0.25 for h in hits)


def test_tube_less_compact_than_blob_at_matched_area():
    blob = gen_shape(ShapeSpec("blob", size_fraction=0.1, seed=3), (96, 96))
    tube = gen_shape(ShapeSpec("tube", size_fraction=0.1, seed=3, tube_width=13), (96, 96))
    cb = morph_features(blob.mask.astype(np.float64)).compactness
    ct = morph_features(tube.mask.astype(np.float64)).compactness
    assert ct < cb


def test_mask_is_binary_and_image_in_unit_range():
    s = gen_shape(ShapeSpec("irregular", size_fraction=0.1, seed=9), (64, 64))
    assert set(np.unique(s.mask)) <= {0.0, 1.0}
    assert 0.0 <= s.image.min() and s.image.max() <= 1.0
    assert s.image.shape == (3, 64, 64)


def test_infeasible_sizes_error():
    with pytest.raises(DataError):
        gen_shape(ShapeSpec("tube", size_fraction=0.5), (64, 64))
    with pytest.raises(DataError):
        gen_shape(ShapeSpec("blob", size_fraction=0.95), (64, 64))
    with pytest.raises(DataError):
        gen_shape(ShapeSpec("blob", size_fraction=0.1), (16, 16))


def test_unknown_kind_errors():
    with pytest.raises(DataError):
        ShapeSpec("star", size_fraction=0.1)


def test_multi_produces_multiple_components():
    s = gen_shape(ShapeSpec("multi", size_fraction=0.1, seed=2), (96, 96))
    assert 0.0 < s.mask.mean() <= 0.15


def test_corpus_morphology_orderings():
    """Blob/irregular/tube corpora separate along the compactness axis."""
    stats = {}
    for kind, recipe in CORPUS_RECIPES.items():
        cs, iotas, ss = [], [], []
        for i in range(100):
            sample = gen_shape(ShapeSpec(kind, seed=7000 + i, **recipe), CORPUS_HW)
            f = morph_features(sample.mask.astype(np.float64))
            cs.append(f.compactness)
            iotas.append(f.irregularity)
            ss.append(f.scale)
        stats[kind] = (np.mean(cs), np.mean(iotas), np.mean(ss), recipe["size_fraction"])
    assert stats["blob"][0] > stats["irregular"][0] > stats["tube"][0]
    assert stats["irregular"][1] > stats["blob"][1]
    for kind, (_, _, mean_s, target_s) in stats.items():
        assert abs(mean_s - target_s) < 0.05, kind


# -- disk round trip ------------------------------------------------------------


def test_dataset_write_load_roundtrip(tmp_path):
    stems = generate_dataset(tmp_path, "blob", 3, 0.15, (64, 64), seed=5)
    assert len(stems) == 3
    assert (tmp_path / "manifest.csv").exists()
    samples = load_dataset(tmp_path, (64, 64))
    assert [s.id for s in samples] == sorted(stems)
    for s in samples:
        assert set(np.unique(s.mask)) <= {0.0, 1.0}
        assert s.image.shape == (3, 64, 64)


def test_load_empty_dir_gives_empty_list(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    assert load_dataset(tmp_path, (64, 64)) == []


def test_load_missing_pair_lists_stems(tmp_path):
    generate_dataset(tmp_path, "blob", 2, 0.15, (64, 64), seed=1)
    extra = tmp_path / "images" / "orphan.png"
    from PIL import Image

    Image.new("RGB", (64, 64)).save(extra)
    with pytest.raises(DataError) as exc:
        load_dataset(tmp_path, (64, 64))
    assert "orphan" in str(exc.value)


def test_load_unreadable_file_names_path(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    (tmp_path / "images" / "bad.png").write_bytes(b"not a png")
    (tmp_path / "masks" / "bad.png").write_bytes(b"not a png")
    with pytest.raises(DataError) as exc:
        load_dataset(tmp_path, (64, 64))
    assert "bad" in str(exc.value)


def test_load_resize_keeps_mask_binary(tmp_path):
    sample = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=0), (256, 256))
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    save_sample(tmp_path, sample)
    loaded = load_dataset(tmp_path, (64, 64))
    assert loaded[0].image.shape == (3, 64, 64)
    assert set(np.unique(loaded[0].mask)) <= {0.0, 1.0}
    assert loaded[0].mask.sum() > 0


def test_manifest_columns(tmp_path):
    generate_dataset(tmp_path, "tube", 2, 0.1, (96, 96), seed=3)
    header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
    assert header.split(",") == ["stem", "kind", "seed", "s", "tau", "c", "iota"]


# -- augmentation ----------------------------------------------------------------


class _FixedRng:
    """Deterministic stand-in driving augment to chosen branches."""

    def __init__(self, uniforms, integer):
        self.uniforms = list(uniforms)
        self.integer = integer

    def random(self):
        return self.uniforms.pop(0)

    def integers(self, lo, hi):
        return self.integer


def test_augment_identity_draws():
    s = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=1), (64, 64))
    out = augment(s, _FixedRng([0.9, 0.9], 0))
    np.testing.assert_array_equal(out.image, s.image)
    np.testing.assert_array_equal(out.mask, s.mask)


def test_double_hflip_is_identity():
    s = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=1), (64, 64))
    once = augment(s, _FixedRng([0.1, 0.9], 0))
    twice = augment(once, _FixedRng([0.1, 0.9], 0))
    np.testing.assert_array_equal(twice.image, s.image)
    np.testing.assert_array_equal(twice.mask, s.mask)


def test_augment_preserves_area_and_binarity(rng):
    s = gen_shape(ShapeSpec("irregular", size_fraction=0.12, seed=4), (64, 64))
    for _ in range(10):
        out = augment(s, rng)
        assert out.mask.sum() == s.mask.sum()
        assert set(np.unique(out.mask)) <= {0.0, 1.0}
        assert out.image.shape == s.image.shape


def test_augment_rotation_stable_morphology(rng):
    s = gen_shape(ShapeSpec("blob", size_fraction=0.15, seed=8), (64, 64))
    f0 = morph_features(s.mask.astype(np.float64))
    rot = augment(s, _FixedRng([0.9, 0.9], 1))
    f1 = morph_features(rot.mask.astype(np.float64))
    assert abs(f1.compactness - f0.compactness) < 0.02
    assert abs(f1.tubularity - f0.tubularity) < 0.02
