import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradseg.cohort import (
    DEFAULT_LAYOUT,
    FoldPlan,
    expand_training,
    load_layout,
    sample_seed,
    scan_dataset,
    split_folds,
)
from gradseg.errors import DuplicateId, EmptyDataset, TooFewPatients
from gradseg.gradmap import assemble_sample
from gradseg.nifti_io import read_mask, read_volume
from gradseg.phantom import PhantomSpec, TumorSpec, generate_case, generate_cohort


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    generate_cohort(10, root, seed=3)
    return root


def test_scan_ten_complete(tree):
    cases = scan_dataset(tree)
    assert [c.patient_id for c in cases] == [f"{i:03d}" for i in range(1, 11)]
    assert all(c.complete for c in cases)
    assert cases[0].mid_img.name == "001_midRT_T2.nii.gz"


def test_scan_missing_role(tree, tmp_path):
    import shutil

    root = tmp_path / "copy"
    shutil.copytree(tree, root)
    (root / "004" / "midRT" / "004_midRT_mask.nii.gz").unlink()
    cases = scan_dataset(root)
    assert sum(c.complete for c in cases) == 9
    bad = [c for c in cases if not c.complete]
    assert bad[0].patient_id == "004" and bad[0].missing == ["mid_gt"]


def test_scan_duplicate_id(tree, tmp_path):
    import shutil

    root = tmp_path / "dup"
    shutil.copytree(tree / "001", root / "siteA" / "001")
    shutil.copytree(tree / "001", root / "siteB" / "001")
    with pytest.raises(DuplicateId):
        scan_dataset(root)


def test_scan_empty(tmp_path):
    with pytest.raises(EmptyDataset):
        scan_dataset(tmp_path)
    with pytest.raises(EmptyDataset):
        scan_dataset(tmp_path / "nope")


def test_custom_layout(tmp_path):
    (tmp_path / "layout.json").write_text(json.dumps({"roles": {"mid_img": "{id}_image.nii.gz"}}))
    layout = load_layout(tmp_path / "layout.json")
    assert layout["mid_img"] == "{id}_image.nii.gz" and layout["mid_gt"] == DEFAULT_LAYOUT["mid_gt"]
    (tmp_path / "bad.json").write_text(json.dumps({"mid_img": "static.nii"}))
    with pytest.raises(ValueError):
        load_layout(tmp_path / "bad.json")


def test_split_150():
    ids = [f"P{i:03d}" for i in range(150)]
    plan = split_folds(ids, 5, seed=1)
    for f in plan.folds:
        assert len(f.validation) == 30
        assert len(f.train) == 240
        assert not set(f.validation) & {p for p, _ in f.train}
    assert sorted(p for f in plan.folds for p in f.validation) == sorted(ids)


def test_split_seven():
    plan = split_folds([str(i) for i in range(7)], 5, seed=0)
    assert sorted(len(f.validation) for f in plan.folds) == [1, 1, 1, 2, 2]


def test_split_determinism_and_errors(tmp_path):
    ids = [str(i) for i in range(20)]
    a, b = split_folds(ids, 5, 9), split_folds(list(reversed(ids)), 5, 9)
    assert a.to_dict() == b.to_dict()
    assert split_folds(ids, 5, 10).to_dict() != a.to_dict()
    a.save(tmp_path / "folds.json")
    assert FoldPlan.load(tmp_path / "folds.json").to_dict() == a.to_dict()
    with pytest.raises(TooFewPatients):
        split_folds(ids[:3], 5)
    with pytest.raises(TooFewPatients):
        split_folds(ids, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 1000))
def test_split_properties(n, k, seed):
    if n < k:
        return
    ids = [f"x{i}" for i in range(n)]
    plan = split_folds(ids, k, seed)
    sizes = [len(f.validation) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(p for f in plan.folds for p in f.validation) == sorted(ids)
    for f in plan.folds:
        assert len(f.train) == 2 * (n - len(f.validation))
        assert not set(f.validation) & {p for p, _ in f.train}


def test_expand_training(tree):
    cases = scan_dataset(tree)
    desc = expand_training(cases)
    assert len(desc) == 2 * len(cases)
    one = expand_training(cases[:1])
    assert [d.phase for d in one] == ["midRT", "preRT"]
    assert one[0].prior == cases[0].pre_gt_registered and one[1].prior == cases[0].pre_gt_native
    assert one[0].image == cases[0].mid_img and one[1].image == cases[0].pre_img_native


def test_expand_150_to_300(tmp_path):
    from gradseg.cohort import PatientCase

    cases = [PatientCase(f"{i:03d}", tmp_path, {r: tmp_path / r for r in DEFAULT_LAYOUT}) for i in range(150)]
    assert len(expand_training(cases)) == 300


def test_expand_rejects_incomplete(tmp_path):
    from gradseg.cohort import PatientCase

    c = PatientCase("a", tmp_path, {r: tmp_path / r for r in DEFAULT_LAYOUT}, missing=["mid_gt"])
    with pytest.raises(FileNotFoundError):
        expand_training([c])


def test_empty_pre_gtvp_keeps_both_samples(tmp_path):
    spec = PhantomSpec(
        shape=(32, 32, 24),
        tumors=[TumorSpec((16.0, 16.0, 14.0), (4.0, 4.0, 4.0), 0.8, label=2)],
        jitter=1,
    )
    case, _ = generate_case(spec, tmp_path, "n01", np.random.default_rng(0))
    desc = expand_training([case])
    assert len(desc) == 2
    for d in desc:
        img, _ = read_volume(d.image)
        prior, _ = read_mask(d.prior)
        s = assemble_sample(img, prior, np.random.default_rng(sample_seed(0, d.patient_id, d.phase)), phase=d.phase)
        assert [b.source_label for b in s.rois.boxes] == [2]
        assert s.channel1.data.any()


def test_sample_seed_independent_of_order():
    a = np.random.default_rng(sample_seed(5, "001", "midRT")).integers(0, 1 << 30)
    b = np.random.default_rng(sample_seed(5, "001", "midRT")).integers(0, 1 << 30)
    c = np.random.default_rng(sample_seed(5, "001", "preRT")).integers(0, 1 << 30)
    assert a == b and a != c
