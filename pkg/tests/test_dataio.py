"""Dataset container round trips, validation, and the synthetic generator."""

import json
import struct

import numpy as np
import pytest

from viewgraph.dataio import (
    DATASET_MAGIC,
    Dataset,
    ShapeSample,
    generate_synthetic,
    import_csv,
    load,
    save,
    validate_dataset,
)
from viewgraph.errors import DataIOError, FormatError, ValidationError
from viewgraph.geometry import build_view_graph, default_viewpoints


class TestRoundTrip:
    def test_save_load_save_is_bit_identical(self, tmp_path):
        ds = generate_synthetic(3, 4, 6, 5, 0.2, 1)
        a, b = tmp_path / "a.3dvgd", tmp_path / "b.3dvgd"
        save(ds, a)
        save(load(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_contents_survive(self, tmp_path):
        ds = generate_synthetic(3, 4, 6, 5, 0.2, 1, split="test")
        path = tmp_path / "d.3dvgd"
        save(ds, path)
        back = load(path)
        assert back.split == "test"
        assert back.class_names == ds.class_names
        assert back.num_samples == ds.num_samples
        for orig, copy in zip(ds.samples, back.samples):
            assert orig.label == copy.label
            assert copy.features.dtype == np.float32
            np.testing.assert_array_equal(orig.features, copy.features)
            np.testing.assert_array_equal(
                orig.graph.directions, copy.graph.directions
            )

    def test_shared_rig_is_shared_after_load(self, tmp_path):
        ds = generate_synthetic(2, 3, 4, 3, 0.1, 0)
        path = tmp_path / "d.3dvgd"
        save(ds, path)
        back = load(path)
        graphs = {id(s.graph) for s in back.samples}
        assert len(graphs) == 1

    def test_per_shape_rigs_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        samples = []
        for i in range(4):
            raw = rng.standard_normal((5, 3))
            dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            samples.append(
                ShapeSample(
                    label=i % 2,
                    features=rng.standard_normal((5, 3)).astype(np.float32),
                    graph=build_view_graph(dirs, 10.0),
                )
            )
        ds = Dataset(samples=samples, class_names=["a", "b"], split="train")
        path = tmp_path / "d.3dvgd"
        save(ds, path)
        back = load(path)
        assert len({id(s.graph) for s in back.samples}) == 4
        for orig, copy in zip(ds.samples, back.samples):
            np.testing.assert_allclose(
                orig.graph.directions, copy.graph.directions, atol=1e-15
            )

    def test_load_honors_sigma(self, tmp_path):
        ds = generate_synthetic(2, 2, 4, 3, 0.1, 0)
        path = tmp_path / "d.3dvgd"
        save(ds, path)
        assert load(path, sigma=3.5).samples[0].graph.sigma == 3.5

    def test_with_sigma_rebuilds_shared(self):
        ds = generate_synthetic(2, 3, 4, 3, 0.1, 0)
        rebuilt = ds.with_sigma(2.0)
        assert len({id(s.graph) for s in rebuilt.samples}) == 1
        assert rebuilt.samples[0].graph.sigma == 2.0
        np.testing.assert_array_equal(
            rebuilt.samples[0].features, ds.samples[0].features
        )


class TestGenerator:
    def test_deterministic(self):
        a = generate_synthetic(3, 5, 6, 4, 0.3, 9)
        b = generate_synthetic(3, 5, 6, 4, 0.3, 9)
        for x, y in zip(a.samples, b.samples):
            np.testing.assert_array_equal(x.features, y.features)

    def test_splits_share_prototypes_but_not_noise(self):
        # at zero noise the splits coincide; with noise they must differ
        clean_train = generate_synthetic(3, 2, 6, 4, 0.0, 9, split="train")
        clean_test = generate_synthetic(3, 2, 6, 4, 0.0, 9, split="test")
        for x, y in zip(clean_train.samples, clean_test.samples):
            np.testing.assert_array_equal(x.features, y.features)
        noisy_train = generate_synthetic(3, 2, 6, 4, 0.2, 9, split="train")
        noisy_test = generate_synthetic(3, 2, 6, 4, 0.2, 9, split="test")
        assert not np.array_equal(
            noisy_train.samples[0].features, noisy_test.samples[0].features
        )

    def test_zero_noise_collapses_classes_to_prototypes(self):
        ds = generate_synthetic(2, 4, 5, 3, 0.0, 3)
        by_label = {}
        for s in ds.samples:
            by_label.setdefault(s.label, []).append(s.features)
        for feats in by_label.values():
            for f in feats[1:]:
                np.testing.assert_array_equal(f, feats[0])
        assert not np.array_equal(by_label[0][0], by_label[1][0])

    def test_features_depend_on_view_direction(self):
        ds = generate_synthetic(2, 1, 6, 4, 0.0, 3)
        feats = ds.samples[0].features
        assert not np.array_equal(feats[0], feats[1])

    def test_grouped_by_class(self):
        ds = generate_synthetic(3, 4, 5, 3, 0.1, 0)
        assert list(ds.labels) == sorted(ds.labels)
        assert ds.num_samples == 12 and ds.num_classes == 3

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            generate_synthetic(0, 5, 6, 4, 0.1, 0)
        with pytest.raises(ValueError):
            generate_synthetic(2, 5, 1, 4, 0.1, 0)
        with pytest.raises(ValueError):
            generate_synthetic(2, 5, 6, 4, -0.1, 0)


class TestValidation:
    def _dataset(self):
        return generate_synthetic(2, 2, 4, 3, 0.1, 0)

    def test_label_out_of_range(self):
        ds = self._dataset()
        ds.samples[1].label = 7
        with pytest.raises(ValidationError, match="sample 1"):
            validate_dataset(ds)

    def test_non_finite_features(self):
        ds = self._dataset()
        feats = ds.samples[2].features.copy()
        feats[0, 0] = np.nan
        ds.samples[2] = ShapeSample(0, feats, ds.samples[2].graph)
        with pytest.raises(ValidationError, match="sample 2"):
            validate_dataset(ds)

    def test_inconsistent_shapes(self):
        ds = self._dataset()
        short = ds.samples[0].features[:, :2]
        ds.samples[3] = ShapeSample(0, short, ds.samples[3].graph)
        with pytest.raises(ValidationError):
            validate_dataset(ds)

    def test_empty_rejected(self):
        with pytest.raises(FormatError):
            validate_dataset(Dataset(samples=[], class_names=["a"], split="x"))


class TestLoaderErrors:
    def _valid_bytes(self, tmp_path):
        path = tmp_path / "d.3dvgd"
        save(generate_synthetic(2, 2, 4, 3, 0.1, 0), path)
        return path, bytearray(path.read_bytes())

    def test_bad_magic(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        data[:6] = b"WRONG!"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load(path)

    def test_bad_version(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        struct.pack_into("<I", data, 6, 9)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            load(path)

    def test_every_truncation_point_is_typed(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        for cut in range(0, len(data), 7):
            path.write_bytes(bytes(data[:cut]))
            with pytest.raises((DataIOError, FormatError)):
                load(path)

    def test_trailing_garbage(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        path.write_bytes(bytes(data) + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load(path)

    def test_zero_counts_rejected(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        struct.pack_into("<I", data, 10, 0)  # class count
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load(path)

    def test_label_out_of_range_rejected(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        # first sample's label sits right after the shared directions block
        ds = load(path)
        offset = len(data) - 4 * (4 + 4 * 3 * 4)
        struct.pack_into("<I", data, offset, 99)
        path.write_bytes(bytes(data))
        with pytest.raises(ValidationError, match="label"):
            load(path)

    def test_non_unit_direction_rejected(self, tmp_path):
        path, data = self._valid_bytes(tmp_path)
        header_end = 6 + 4 + 17 + (2 + 5) + (2 + 7) + (2 + 7)
        struct.pack_into("<d", data, header_end, 9.0)
        path.write_bytes(bytes(data))
        with pytest.raises(ValidationError):
            load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load(tmp_path / "nope.3dvgd")

    def test_magic_constant(self):
        assert DATASET_MAGIC == b"3DVG-D"


class TestCsvImport:
    def _write_manifest(self, tmp_path, **overrides):
        rng = np.random.default_rng(0)
        dirs = default_viewpoints(4)
        np.savetxt(tmp_path / "dirs.csv", dirs, delimiter=",")
        shapes = []
        for i in range(3):
            feats = rng.standard_normal((4, 5))
            np.savetxt(tmp_path / f"s{i}.csv", feats, delimiter=",")
            shapes.append({"features_csv": f"s{i}.csv", "label": i % 2})
        manifest = {
            "split": "train",
            "class_names": ["first", "second"],
            "views": 4,
            "feature_dim": 5,
            "directions_csv": "dirs.csv",
            "shapes": shapes,
        }
        manifest.update(overrides)
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        return mpath

    def test_import_round_trip(self, tmp_path):
        mpath = self._write_manifest(tmp_path)
        ds = import_csv(mpath, sigma=4.0)
        assert ds.num_samples == 3
        assert ds.views == 4 and ds.feature_dim == 5
        assert ds.class_names == ["first", "second"]
        assert ds.samples[0].graph.sigma == 4.0
        raw = np.loadtxt(tmp_path / "s1.csv", delimiter=",")
        np.testing.assert_array_equal(
            ds.samples[1].features, raw.astype(np.float32)
        )

    def test_inline_directions(self, tmp_path):
        dirs = default_viewpoints(4).tolist()
        mpath = self._write_manifest(tmp_path, directions=dirs)
        assert import_csv(mpath).num_samples == 3

    def test_missing_fields(self, tmp_path):
        mpath = self._write_manifest(tmp_path)
        blob = json.loads(mpath.read_text())
        del blob["views"]
        mpath.write_text(json.dumps(blob))
        with pytest.raises(FormatError, match="views"):
            import_csv(mpath)

    def test_wrong_feature_shape(self, tmp_path):
        mpath = self._write_manifest(tmp_path, feature_dim=9)
        with pytest.raises(ValidationError):
            import_csv(mpath)

    def test_non_numeric_csv(self, tmp_path):
        mpath = self._write_manifest(tmp_path)
        (tmp_path / "s1.csv").write_text("a,b,c,d,e\n" * 4)
        with pytest.raises(FormatError):
            import_csv(mpath)

    def test_missing_csv_file(self, tmp_path):
        mpath = self._write_manifest(tmp_path)
        (tmp_path / "s2.csv").unlink()
        with pytest.raises(DataIOError):
            import_csv(mpath)

    def test_bad_json(self, tmp_path):
        mpath = tmp_path / "m.json"
        mpath.write_text("{not json")
        with pytest.raises(FormatError):
            import_csv(mpath)
