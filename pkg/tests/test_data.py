import numpy as np
import pytest

from dreamnet.data import (
    SampleSet,
    SynthSpec,
    batch_iter,
    load_dataset,
    read_frames_file,
    save_dataset,
    split,
    synth_generate,
    write_frames_file,
)
from dreamnet.errors import DegenerateSet, ParseError, ShapeError, TooFew

SMALL = SynthSpec(dim=5, num_classes=3, sets_per_class=10, frames_per_set=20, seed=3)


def write_manifest(path, header, records):
    path.write_text("\n".join(header + records) + "\n")
    return path


# ---------------------------------------------------------------- generator


def test_reference_spec_shape():
    s = synth_generate(SynthSpec())
    assert len(s) == 300 and s.dim == 20 and s.num_classes == 3
    assert list(s.class_counts()) == [100, 100, 100]
    assert np.all(np.linalg.eigvalsh(s.matrices)[:, 0] > 0)
    assert s.provenance == "synthetic"


def test_generator_deterministic():
    a, b = synth_generate(SMALL), synth_generate(SMALL)
    assert a.matrices.tobytes() == b.matrices.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_null_separation_tag():
    import dataclasses

    s = synth_generate(dataclasses.replace(SMALL, separation=0.0))
    assert s.provenance == "null-separation"


def test_bad_spec():
    with pytest.raises(ValueError):
        synth_generate(SynthSpec(separation=-1))
    with pytest.raises(ValueError):
        synth_generate(SynthSpec(frames_per_set=1))


# ---------------------------------------------------------------- split / batches


def test_split_seventy_thirty():
    s = synth_generate(SynthSpec())
    tr, te = split(s, 0.7, seed=0)
    assert (len(tr), len(te)) == (210, 90)
    assert list(tr.class_counts()) == [70, 70, 70]
    assert list(te.class_counts()) == [30, 30, 30]
    assert sorted(tr.ids + te.ids) == sorted(s.ids)
    assert not set(tr.ids) & set(te.ids)


def test_split_two_sample_class():
    s = SampleSet(np.stack([np.eye(2)] * 2), [0, 0], 1)
    tr, te = split(s, 0.5, seed=1)
    assert (len(tr), len(te)) == (1, 1)


def test_split_deterministic_and_too_few():
    s = synth_generate(SMALL)
    a, b = split(s, 0.7, 5), split(s, 0.7, 5)
    assert a[0].ids == b[0].ids
    with pytest.raises(TooFew):
        split(SampleSet(np.stack([np.eye(2)] * 3), [0, 0, 1], 2), 0.5)
    with pytest.raises(ValueError):
        split(s, 1.0)


@pytest.mark.parametrize("n,b,expected", [(300, 30, [30] * 10), (7, 10, [7]), (7, 3, [3, 3, 1])])
def test_batch_iter(n, b, expected):
    batches = list(batch_iter(n, b, seed=4))
    assert [len(x) for x in batches] == expected
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))


# ---------------------------------------------------------------- files


def test_save_load_round_trip(tmp_path):
    s = synth_generate(SMALL)
    loaded = load_dataset(save_dataset(s, tmp_path))
    assert loaded.matrices.tobytes() == s.matrices.tobytes()
    assert loaded.labels.tolist() == s.labels.tolist()
    assert loaded.provenance == "synthetic"


def test_matrix_mode_two_samples(tmp_path):
    for i, x in enumerate([np.eye(3), 2 * np.eye(3)]):
        (tmp_path / f"{i}.bin").write_bytes(x.astype("<f8").tobytes())
    m = write_manifest(tmp_path / "m.txt", ["mode: matrix", "dim: 3", "classes: 2"], ["0.bin,0", "1.bin,1"])
    s = load_dataset(m)
    assert len(s) == 2 and s.ids == ["0.bin", "1.bin"]


def test_frames_mode_matches_covariance(tmp_path):
    write_frames_file(tmp_path / "a.bin", np.array([[1.0, 0.0], [3.0, 2.0]]))
    m = write_manifest(tmp_path / "m.txt", ["# two frames", "mode: frames", "dim: 2", "classes: 1"], ["a.bin,0"])
    s = load_dataset(m)
    np.testing.assert_allclose(s.matrices[0], [[2.004, 2.0], [2.0, 2.004]], atol=1e-15)


def test_frames_file_round_trip(tmp_path):
    f = np.random.default_rng(0).standard_normal((4, 3))
    write_frames_file(tmp_path / "f.bin", f)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == (4).to_bytes(8, "little")
    np.testing.assert_array_equal(read_frames_file(tmp_path / "f.bin", 3), f)


def test_label_out_of_range_names_record(tmp_path):
    (tmp_path / "0.bin").write_bytes(np.eye(2).tobytes())
    m = write_manifest(tmp_path / "m.txt", ["mode: matrix", "dim: 2", "classes: 2"], ["0.bin,0", "0.bin,5"])
    with pytest.raises(ParseError, match=r"m.txt:5.*'0.bin'.*label 5"):
        load_dataset(m)


@pytest.mark.parametrize(
    "header,records",
    [
        (["mode: matrix", "dim: 2"], ["0.bin,0"]),
        (["mode: video", "dim: 2", "classes: 1"], ["0.bin,0"]),
        (["mode: matrix", "dim: two", "classes: 1"], ["0.bin,0"]),
        (["mode: matrix", "dim: 2", "classes: 1"], ["0.bin"]),
        (["mode: matrix", "dim: 2", "classes: 1"], ["0.bin,x"]),
    ],
)
def test_malformed_manifest(tmp_path, header, records):
    (tmp_path / "0.bin").write_bytes(np.eye(2).tobytes())
    with pytest.raises(ParseError):
        load_dataset(write_manifest(tmp_path / "m.txt", header, records))


def test_wrong_file_size(tmp_path):
    (tmp_path / "0.bin").write_bytes(np.eye(3).tobytes())
    m = write_manifest(tmp_path / "m.txt", ["mode: matrix", "dim: 2", "classes: 1"], ["0.bin,0"])
    with pytest.raises(ShapeError):
        load_dataset(m)


def test_degenerate_frames_name_sample(tmp_path):
    write_frames_file(tmp_path / "flat.bin", np.ones((3, 2)))
    m = write_manifest(tmp_path / "m.txt", ["mode: frames", "dim: 2", "classes: 1"], ["flat.bin,0"])
    with pytest.raises(DegenerateSet, match="flat.bin"):
        load_dataset(m)


def test_empty_manifest_loads_empty(tmp_path):
    m = write_manifest(tmp_path / "m.txt", ["mode: matrix", "dim: 2", "classes: 2"], [])
    assert len(load_dataset(m)) == 0
