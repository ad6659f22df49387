"""Volume files, augmentation, oversampling, folds and test-time augmentation."""
import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from MDL.dataset import (
    AUGMENTATION_OPS,
    AugmentationPolicy,
    OpRange,
    Volume,
    augment,
    load_dataset,
    load_folds,
    load_volume,
    oversample_indices,
    save_dataset,
    save_volume,
    stratified_kfold,
    tta_predict,
)


def test_volume_validation(rng):
    voxels = rng.normal(size=(4, 8, 8))
    with pytest.raises(ValueError, match="out of range"):
        Volume(voxels, (0.4, 0.4), 3.0, 1, (4,))
    with pytest.raises(ValueError, match="1 to 3"):
        Volume(voxels, (0.4, 0.4), 3.0, 1, (0, 1, 2, 3))
    with pytest.raises(ValueError, match="Label"):
        Volume(voxels, (0.4, 0.4), 3.0, 2, (0,))
    with pytest.raises(ValueError, match="D, H, W"):
        Volume(voxels[0], (0.4, 0.4), 3.0, 1, (0,))


def test_save_load_is_bit_exact(tmp_path, volume_factory):
    volume = volume_factory(depth=4, size=8, reps=(0, 3))
    vox = save_volume(volume, str(tmp_path / "case"))
    assert os.path.getsize(vox) == 4 * 8 * 8 * 8
    loaded = load_volume(str(tmp_path / "case.vox"))
    assert_array_equal(loaded.voxels, volume.voxels)
    assert loaded.meta() == volume.meta()
    assert loaded.name == "case"


def test_sidecar_layout(tmp_path, volume_factory):
    save_volume(volume_factory(depth=4, size=8), str(tmp_path / "case"))
    with open(tmp_path / "case.meta") as f:
        meta = json.load(f)
    assert meta["dims"] == [4, 8, 8]
    assert set(meta) == {"dims", "spacing_mm", "thickness_mm", "label", "representative_slices"}


def test_out_of_range_representative_slice_rejected(tmp_path, volume_factory):
    save_volume(volume_factory(depth=4, size=8), str(tmp_path / "case"))
    meta_path = tmp_path / "case.meta"
    meta = json.loads(meta_path.read_text())
    meta["representative_slices"] = [4]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="out of range"):
        load_volume(str(tmp_path / "case"))


def test_truncated_voxels_rejected(tmp_path, volume_factory):
    save_volume(volume_factory(depth=4, size=8), str(tmp_path / "case"))
    raw = (tmp_path / "case.vox").read_bytes()
    (tmp_path / "case.vox").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="bytes"):
        load_volume(str(tmp_path / "case"))


def test_missing_sidecar_field_rejected(tmp_path, volume_factory):
    save_volume(volume_factory(depth=4, size=8), str(tmp_path / "case"))
    meta_path = tmp_path / "case.meta"
    meta = json.loads(meta_path.read_text())
    del meta["thickness_mm"]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="thickness_mm"):
        load_volume(str(tmp_path / "case"))


def test_dataset_directory(tmp_path, volumes):
    folds = stratified_kfold([v.label for v in volumes], 2, seed=0).to_lists()
    names = save_dataset(volumes, str(tmp_path), folds)
    assert (tmp_path / "manifest.txt").read_text().split() == names
    loaded = load_dataset(str(tmp_path))
    assert [v.name for v in loaded] == names
    assert load_folds(str(tmp_path), loaded) == folds
    for a, b in zip(volumes, loaded):
        assert_array_equal(a.voxels, b.voxels)


def test_duplicate_names_rejected(tmp_path, volume_factory):
    with pytest.raises(ValueError, match="unique"):
        save_dataset([volume_factory(name="a"), volume_factory(name="a")], str(tmp_path))


def test_empty_policy_is_identity(volume_factory):
    volume = volume_factory()
    out = augment(volume, AugmentationPolicy.empty(), draw_seed=3)
    assert_array_equal(out.voxels, volume.voxels)


def test_hflip_twice_restores(volume_factory):
    volume = volume_factory()
    policy = AugmentationPolicy({"hflip": OpRange(1.0)})
    once = augment(volume, policy, 0)
    assert_array_equal(once.voxels, volume.voxels[:, :, ::-1])
    assert_array_equal(augment(once, policy, 1).voxels, volume.voxels)


@pytest.mark.parametrize("op", AUGMENTATION_OPS)
def test_each_op_keeps_shape_label_and_slices(volume_factory, op):
    volume = volume_factory(depth=5, size=24, label=1, reps=(1, 3))
    rule = AugmentationPolicy.default().ops[op]
    out = augment(volume, AugmentationPolicy({op: OpRange(1.0, rule.low, rule.high)}), 7)
    assert out.voxels.shape == volume.voxels.shape
    assert out.label == volume.label
    assert out.representative_slices == volume.representative_slices
    assert np.all(np.isfinite(out.voxels))


def test_augment_is_deterministic(volume_factory):
    volume = volume_factory()
    policy = AugmentationPolicy(
        {"rotate": OpRange(1.0, -15, 15), "brightness": OpRange(1.0, -0.1, 0.1)}, seed=5
    )
    a, b = augment(volume, policy, 11), augment(volume, policy, 11)
    assert_array_equal(a.voxels, b.voxels)
    c = augment(volume, policy, 12)
    assert not np.array_equal(a.voxels, c.voxels)


def test_in_plane_ops_treat_slices_alike(rng):
    plane = rng.normal(size=(16, 16))
    volume = Volume(np.stack([plane] * 3), (0.4, 0.4), 3.0, 0, (1,))
    policy = AugmentationPolicy(
        {
            "rotate": OpRange(1.0, 10, 20),
            "shift": OpRange(1.0, 0.05, 0.1),
            "crop": OpRange(1.0, 0.8, 0.9),
        }
    )
    out = augment(volume, policy, 0).voxels
    assert_allclose(out[0], out[1])
    assert_allclose(out[0], out[2])


def test_policy_dict_roundtrip():
    policy = AugmentationPolicy.default(seed=9)
    assert AugmentationPolicy.from_dict(policy.to_dict()) == policy
    with pytest.raises(ValueError, match="elastic"):
        AugmentationPolicy({"elastic": OpRange(0.5)})


def test_oversampling_balances_classes():
    labels = np.array([0] * 168 + [1] * 399)
    picks = oversample_indices(labels, 10_000, seed=0)
    frac = labels[picks].mean()
    assert abs(frac - 0.5) <= 0.02
    assert picks.min() >= 0 and picks.max() < len(labels)


def test_oversampling_balanced_input_is_uniform():
    labels = np.array([0, 1] * 50)
    counts = np.bincount(oversample_indices(labels, 20_000, seed=1), minlength=100)
    assert counts.min() > 120 and counts.max() < 290


def test_oversampling_needs_two_classes():
    with pytest.raises(ValueError, match="both classes"):
        oversample_indices([1, 1, 1], 10, 0)


def test_two_fold_split():
    folds = stratified_kfold([0, 0, 1, 1], 2, seed=0)
    for fold in folds.folds:
        assert sorted(np.array([0, 0, 1, 1])[fold].tolist()) == [0, 1]


def test_ten_folds_partition_and_stratify():
    labels = np.array([0] * 40 + [1] * 60)
    assignment = stratified_kfold(labels, 10, seed=3)
    every = np.concatenate(assignment.folds)
    assert sorted(every.tolist()) == list(range(100))
    for i, fold in enumerate(assignment.folds):
        assert abs(labels[fold].sum() - 0.6 * len(fold)) <= 1
        assert not set(fold) & set(assignment.train_indices(i))
    assert_array_equal(np.bincount(assignment.fold_of()), [10] * 10)


def test_folds_are_seeded():
    labels = [0] * 12 + [1] * 18
    a = stratified_kfold(labels, 3, seed=1).to_lists()
    assert a == stratified_kfold(labels, 3, seed=1).to_lists()
    assert a != stratified_kfold(labels, 3, seed=2).to_lists()


def test_too_many_folds_rejected():
    with pytest.raises(ValueError, match="smallest class count"):
        stratified_kfold([0, 0, 1, 1, 1], 3, seed=0)


def test_tta_empty_policy_equals_plain_prediction(volume_factory):
    volume = volume_factory()

    def model(vols):
        return np.array([[v.voxels.mean()] for v in vols])

    out = tta_predict(model, volume, 10, AugmentationPolicy.empty())
    assert_allclose(out, model([volume])[0])


def test_tta_constant_model(volume_factory):
    constant = 1.0 / (1.0 + np.exp(-0.4))
    out = tta_predict(
        lambda vols: np.full((len(vols), 1), constant),
        volume_factory(),
        5,
        AugmentationPolicy.default(),
    )
    assert_allclose(out, [constant])


def test_tta_is_mean_of_copies(volume_factory):
    volume = volume_factory()
    seen = []

    def model(vols):
        probs = np.array([[1.0 / (1.0 + np.exp(-v.voxels.sum()))] for v in vols])
        seen.append(probs)
        return probs

    out = tta_predict(model, volume, 6, AugmentationPolicy.default(), seed=2)
    assert len(seen[0]) == 7
    assert seen[0].min() <= out[0] <= seen[0].max()
