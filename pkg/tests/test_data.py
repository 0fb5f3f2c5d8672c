import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archverify.data import (
    SPLIT_PRESETS,
    DatasetManifest,
    ManifestRecord,
    SplitConfig,
    SplitSet,
    build_pair_dataset,
    build_splits,
    load_manifest,
    load_split_config,
    write_manifest,
)
from archverify.errors import ConfigError, ContractError, InsufficientDataError, ManifestError


def synthetic_manifest(archs, per_arch, prefix="/data"):
    return DatasetManifest(tuple(
        ManifestRecord(f"{prefix}/{a}/{i:06d}.png", a, "ffhq", f"{a}-m{i % 2}") for a in archs for i in range(per_arch)
    ))


def check_pairs(pairs, split):
    """Brute-force label soundness against the source split."""
    arch_of = {r.path: a for a, recs in split.items() for r in recs}
    for p in pairs:
        same = arch_of[p.x_path] == arch_of[p.y_path]
        assert p.m == (0 if same else 1)
        if p.m == 0:
            assert p.x_path != p.y_path


# -- manifests ----------------------------------------------------------------


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_manifest_with_missing_field_names_line(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.png\tx\tffhq\tx1\nb.png\tx\tffhq\n")
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(p)


def test_ten_record_manifest(tmp_path):
    recs = [ManifestRecord(f"img{i}.png", "x" if i < 5 else "y", "ffhq", "m") for i in range(10)]
    write_manifest(recs, tmp_path / "m.tsv")
    m = load_manifest(tmp_path / "m.tsv")
    assert len(m) == 10
    assert m.architectures == ["x", "y"]
    # relative paths are resolved against the manifest directory
    assert all(r.path.startswith(str(tmp_path.resolve())) for r in m)


def test_duplicate_path_rejected(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.png\tx\tffhq\tx1\na.png\ty\tffhq\ty1\n")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(p)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "nope.tsv")


def test_empty_architecture_rejected():
    with pytest.raises(ManifestError):
        DatasetManifest((ManifestRecord("a.png", "", "ffhq", "m"),))


def test_check_files_reports_missing(tmp_path):
    m = DatasetManifest((ManifestRecord(str(tmp_path / "gone.png"), "x", "ffhq", "m"),))
    with pytest.raises(ManifestError, match="gone.png"):
        m.check_files()


# -- split configs ------------------------------------------------------------


def test_split_config_defaults():
    c = SplitConfig("c", ("a",), ("b",))
    assert c.counts == (45000, 2500, 500) and c.out_test_count == 500


def test_split_config_overlap_rejected():
    with pytest.raises(ConfigError):
        SplitConfig("c", ("a", "b"), ("b",))


def test_split_config_unknown_key():
    with pytest.raises(ConfigError, match="colour"):
        SplitConfig.from_dict({"name": "c", "in_set": ["a"], "colour": 1})


def test_split_config_yaml_round_trip(tmp_path):
    import yaml

    c = SplitConfig("c", ("a", "b"), ("z",), (3, 2, 1), 4, seed=9)
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(c.to_dict()))
    assert load_split_config(tmp_path / "s.yaml") == c


def test_split_presets_partition_ten_architectures():
    # ten face generators, split 5/5 three different ways
    for name in ("config1", "config2", "config3"):
        c = SPLIT_PRESETS[name]
        assert len(c.in_set) == 5 and len(c.out_of_set) == 5
        assert len(set(c.architectures)) == 10
    assert set(SPLIT_PRESETS["config1"].architectures) == set(SPLIT_PRESETS["config2"].architectures) \
        == set(SPLIT_PRESETS["config3"].architectures)
    assert SPLIT_PRESETS["config1"].in_set == ("latent_diffusion", "taming_transformers", "stylegan2", "ddpm", "began")
    assert SPLIT_PRESETS["config2"].in_set == ("stylegan2", "latent_diffusion", "biggan", "progan", "lsgm")
    assert SPLIT_PRESETS["config3"].in_set == ("stylegan2", "stylegan3", "progan", "began", "biggan")


# -- splits -------------------------------------------------------------------


def test_toy_split_partitions():
    m = synthetic_manifest(["a", "b"], 30)
    c = SplitConfig("toy", ("a", "b"), (), (20, 5, 5), 0)
    s = build_splits(m, c, seed=1)
    for arch in ("a", "b"):
        parts = [set(r.path for r in s.get(arch, k)) for k in ("train", "val", "test")]
        assert [len(p) for p in parts] == [20, 5, 5]
        assert all(not (x & y) for x, y in itertools.combinations(parts, 2))
        assert set().union(*parts) == {r.path for r in m if r.architecture == arch}


def test_split_determinism_and_seed_sensitivity():
    m = synthetic_manifest(["a", "b", "c"], 40)
    c = SplitConfig("toy", ("a", "b"), ("c",), (20, 5, 5), 10)
    assert build_splits(m, c, seed=3) == build_splits(m, c, seed=3)
    assert build_splits(m, c, seed=3) != build_splits(m, c, seed=4)


def test_split_independent_of_manifest_order():
    m = synthetic_manifest(["a", "b"], 30)
    rev = DatasetManifest(tuple(reversed(m.records)))
    c = SplitConfig("toy", ("a",), ("b",), (10, 5, 5), 7)
    assert build_splits(m, c, 0).splits == build_splits(rev, c, 0).splits


def test_out_of_set_is_test_only():
    m = synthetic_manifest(["a", "b"], 30)
    s = build_splits(m, SplitConfig("toy", ("a",), ("b",), (10, 5, 5), 7), 0)
    assert len(s.get("b", "test")) == 7
    assert s.get("b", "train") == () and s.get("b", "val") == ()


def test_insufficient_images_names_architecture_and_shortfall():
    m = synthetic_manifest(["a", "b"], 10)
    with pytest.raises(InsufficientDataError, match=r"b \(need 12, have 10\)"):
        build_splits(m, SplitConfig("toy", ("a",), ("b",), (5, 2, 2), 12), 0)


@pytest.mark.slow
def test_config1_full_scale_counts_and_pairs():
    c = SPLIT_PRESETS["config1"]
    per_in = sum(c.counts)
    recs = [ManifestRecord(f"/f/{a}/{i}.png", a, "ffhq", a) for a in c.in_set for i in range(per_in)]
    recs += [ManifestRecord(f"/f/{a}/{i}.png", a, "ffhq", a) for a in c.out_of_set for i in range(c.out_test_count)]
    s = build_splits(DatasetManifest(tuple(recs)), c, seed=0)
    for a in c.in_set:
        assert tuple(len(s.get(a, k)) for k in ("train", "val", "test")) == (45000, 2500, 500)
    for a in c.out_of_set:
        assert len(s.get(a, "test")) == 500
    pairs = build_pair_dataset(s.split_map("train"), seed=0)
    assert len(pairs) == 450_000
    assert sum(p.m == 0 for p in pairs) == sum(p.m == 1 for p in pairs) == 225_000


def test_split_set_write_read_round_trip(tmp_path):
    m = synthetic_manifest(["a", "b", "c"], 12)
    s = build_splits(m, SplitConfig("toy", ("a", "b"), ("c",), (6, 3, 3), 4), 2)
    s.write(tmp_path)
    back = SplitSet.read(tmp_path)
    assert back.config == s.config
    for arch in s.config.architectures:
        for k in ("train", "val", "test"):
            assert back.get(arch, k) == s.get(arch, k)
    lines = (tmp_path / "val.tsv").read_text().splitlines()
    assert all(line.split("\t")[-1] == "val" for line in lines)


# -- pairs --------------------------------------------------------------------


def test_two_by_two_pairs_brute_force():
    split = synthetic_manifest(["a", "b"], 2).by_architecture()
    pairs = build_pair_dataset(split, seed=0)
    assert sum(p.m == 0 for p in pairs) == 4 and sum(p.m == 1 for p in pairs) == 4
    check_pairs(pairs, split)


def test_single_architecture_cannot_build_negatives():
    with pytest.raises(ContractError, match="negative"):
        build_pair_dataset(synthetic_manifest(["a"], 5).by_architecture(), seed=0)


def test_single_image_architecture_rejected():
    split = {"a": synthetic_manifest(["a"], 3).records, "b": synthetic_manifest(["b"], 1).records}
    with pytest.raises(ContractError, match="'b'"):
        build_pair_dataset(split, seed=0)


@given(
    n_arch=st.integers(2, 5),
    per_arch=st.integers(2, 12),
    seed=st.integers(0, 2**31 - 1),
)
@settings(max_examples=40, deadline=None)
def test_pair_invariants(n_arch, per_arch, seed):
    archs = [f"arch{i}" for i in range(n_arch)]
    split = synthetic_manifest(archs, per_arch).by_architecture()
    pairs = build_pair_dataset(split, seed)
    n = n_arch * per_arch
    assert sum(p.m == 0 for p in pairs) == n and sum(p.m == 1 for p in pairs) == n
    check_pairs(pairs, split)
    # every image is the anchor of exactly one positive and one negative
    anchors = {}
    for p in pairs:
        anchors.setdefault(p.x_path, []).append(p.m)
    assert all(sorted(v) == [0, 1] for v in anchors.values()) and len(anchors) == n
    assert pairs == build_pair_dataset(split, seed)


def test_negative_architectures_cover_all_others():
    split = synthetic_manifest(["a", "b", "c", "d"], 200).by_architecture()
    pairs = build_pair_dataset(split, seed=11)
    arch_of = {r.path: r.architecture for recs in split.values() for r in recs}
    seen = {(arch_of[p.x_path], arch_of[p.y_path]) for p in pairs if p.m == 1}
    assert seen == {(x, y) for x in "abcd" for y in "abcd" if x != y}
