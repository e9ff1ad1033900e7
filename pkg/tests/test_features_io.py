"""Round-trip and error-contract tests for the feature file formats."""

import numpy as np
import pytest

from tafssl.episodes import FeatureStore, MoGSpec, generate_mog_store
from tafssl.features_io import load_features, save_features


@pytest.fixture
def store():
    return generate_mog_store(MoGSpec(m=5, signal_dims=2), 4, 7, seed=11)


def stores_equal(a: FeatureStore, b: FeatureStore) -> bool:
    if sorted(a.classes) != sorted(b.classes):
        return False
    return all(np.array_equal(a.classes[c], b.classes[c]) for c in a.classes)


class TestBinary:
    def test_round_trip_bytes_identical(self, store, tmp_path):
        p1, p2 = tmp_path / "a.feats", tmp_path / "b.feats"
        save_features(store, p1)
        save_features(load_features(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_float32_quantization_round_trips(self, store, tmp_path):
        p = tmp_path / "a.feats"
        save_features(store, p)
        loaded = load_features(p)
        for cid in store.classes:
            np.testing.assert_array_equal(
                loaded.classes[cid], store.classes[cid].astype(np.float32).astype(np.float64)
            )

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.feats"
        p.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="bad magic"):
            load_features(p)

    def test_bad_version(self, store, tmp_path):
        p = tmp_path / "a.feats"
        save_features(store, p)
        blob = bytearray(p.read_bytes())
        blob[4] = 99
        p.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="unsupported version"):
            load_features(p)

    def test_truncation_reports_byte_counts(self, store, tmp_path):
        p = tmp_path / "a.feats"
        save_features(store, p)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) - 10])
        with pytest.raises(ValueError, match=r"truncated file: expected \d+ bytes, got \d+"):
            load_features(p)

    def test_trailing_garbage(self, store, tmp_path):
        p = tmp_path / "a.feats"
        save_features(store, p)
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(ValueError, match="trailing data"):
            load_features(p)

    def test_nonfinite_named_by_row(self, store, tmp_path):
        p = tmp_path / "a.feats"
        save_features(store, p)
        blob = bytearray(p.read_bytes())
        # Overwrite the first float of the first class payload with NaN.
        offset = 16 + 8
        blob[offset : offset + 4] = np.float32(np.nan).tobytes()
        p.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="non-finite value in class 0, row 0"):
            load_features(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_features(tmp_path / "missing.feats")


class TestCsv:
    def test_csv_equals_binary(self, store, tmp_path):
        pb, pc = tmp_path / "a.feats", tmp_path / "a.csv"
        save_features(store, pb)
        save_features(store, pc)
        assert stores_equal(load_features(pb), load_features(pc))

    def test_header_written(self, store, tmp_path):
        p = tmp_path / "a.csv"
        save_features(store, p)
        assert p.read_text().splitlines()[0] == "label," + ",".join(f"f{j}" for j in range(5))

    def test_bad_header(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("id,f0\n0,1.0\n")
        with pytest.raises(ValueError, match="bad CSV header"):
            load_features(p)

    def test_bad_value_names_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("label,f0\n0,1.0\n1,oops\n")
        with pytest.raises(ValueError, match="line 3"):
            load_features(p)

    def test_nonfinite_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("label,f0\n0,inf\n")
        with pytest.raises(ValueError, match="line 2: non-finite"):
            load_features(p)

    def test_short_row_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("label,f0,f1\n0,1.0\n")
        with pytest.raises(ValueError, match="expected 3 fields"):
            load_features(p)
