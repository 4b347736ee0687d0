import struct

import numpy as np
import pytest

from avgemb import datasets
from avgemb.errors import FileFormatError, InvalidParameterError
from avgemb.evaluator import EmbeddingMatrix
from avgemb.stats_core import DistributionSpec, RandomSeed


@pytest.fixture
def matrix():
    return datasets.synth(DistributionSpec.normal(), 50, 7, RandomSeed(1), dtype=np.float32)


class TestBinary:
    def test_header_layout(self):
        raw = datasets.EmbeddingFileHeader(3, 2).pack()
        assert len(raw) == 19
        assert raw[:4] == b"EMB1"
        assert struct.unpack("<H", raw[4:6])[0] == 1
        assert struct.unpack("<Q", raw[6:14])[0] == 3
        assert struct.unpack("<I", raw[14:18])[0] == 2
        assert raw[18] == 0

    def test_round_trip(self, matrix, tmp_path):
        path = tmp_path / "m.emb"
        datasets.write_embeddings(matrix, path)
        assert path.stat().st_size == 19 + 50 * 7 * 4
        back = datasets.load_embeddings(path)
        np.testing.assert_array_equal(back.data, matrix.data)
        assert back.origin == "file"

    def test_truncated_payload(self, matrix, tmp_path):
        path = tmp_path / "m.emb"
        datasets.write_embeddings(matrix, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FileFormatError, match="1400 bytes, file holds 1396"):
            datasets.load_embeddings(path)

    @pytest.mark.parametrize(
        "mutate,msg",
        [
            (lambda b: b"EMB2" + b[4:], "magic"),
            (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], "version"),
            (lambda b: b[:18] + b"\x01" + b[19:], "dtype"),
            (lambda b: b[:10], "too short"),
        ],
    )
    def test_corrupt_header(self, matrix, tmp_path, mutate, msg):
        path = tmp_path / "m.emb"
        datasets.write_embeddings(matrix, path)
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(FileFormatError, match=msg):
            datasets.load_embeddings(path)

    def test_non_finite_located(self, tmp_path):
        data = np.zeros((3, 2), dtype="<f4")
        data[2, 1] = np.inf
        path = tmp_path / "bad.emb"
        path.write_bytes(datasets.EmbeddingFileHeader(3, 2).pack() + data.tobytes())
        with pytest.raises(FileFormatError, match="row 2, column 1"):
            datasets.load_embeddings(path)


class TestCsv:
    def test_round_trip_with_ids(self, matrix, tmp_path):
        m = EmbeddingMatrix(matrix.data, item_ids=tuple(f"item{i}" for i in range(50)))
        path = tmp_path / "m.csv"
        datasets.write_embeddings(m, path, "csv")
        back = datasets.load_embeddings(path, "csv")
        assert back.item_ids == m.item_ids
        np.testing.assert_allclose(back.data, matrix.data, rtol=1e-8)

    def test_header_and_crlf(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_bytes(b"a,b\r\n1.5,2\r\n-3,4e-1\r\n")
        m = datasets.load_embeddings(path, "csv", csv_header=True)
        np.testing.assert_array_equal(m.data, [[1.5, 2.0], [-3.0, 0.4]])
        assert m.item_ids is None

    def test_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(FileFormatError, match="ragged"):
            datasets.load_embeddings(path, "csv")

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text("1,2\n3,x\n")
        with pytest.raises(FileFormatError, match="row 1"):
            datasets.load_embeddings(path, "csv")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            datasets.load_embeddings(tmp_path / "x", "parquet")


class TestTransforms:
    def test_center(self, matrix):
        c = datasets.center(matrix)
        assert c.data.dtype == np.float32
        assert np.abs(c.data.astype(np.float64).mean(axis=0)).max() < 1e-6
        assert c.metadata["centered"] is True

    def test_synth_reproducible(self):
        a = datasets.synth(DistributionSpec.rademacher(), 10, 3, RandomSeed(2))
        b = datasets.synth(DistributionSpec.rademacher(), 10, 3, RandomSeed(2))
        np.testing.assert_array_equal(a.data, b.data)
        assert a.origin == "synthetic" and a.metadata["distribution"]["kind"] == "rademacher"


class TestDiagnostics:
    def test_iid_normal(self):
        m = datasets.synth(DistributionSpec.normal(), 20_000, 10, RandomSeed(3))
        rep = datasets.diagnostics(m)
        assert rep.max_abs_offdiag_correlation < 0.05
        assert rep.correlation_pairs == 45
        assert rep.pooled_moments.kurtosis == pytest.approx(3.0, abs=0.1)
        assert not rep.centered
        assert datasets.diagnostics(datasets.center(m)).centered

    def test_detects_correlation_and_degenerate(self):
        rng = RandomSeed(4).generator()
        X = rng.standard_normal((1000, 4))
        X[:, 1] = X[:, 0] * 2 + 0.01 * X[:, 1]
        X[:, 3] = 5.0
        rep = datasets.diagnostics(EmbeddingMatrix(X))
        assert rep.max_abs_offdiag_correlation > 0.99
        assert rep.degenerate_dimensions == (3,)
        assert rep.per_dimension_moments[3] is None
        assert rep.as_dict()["per_dimension_moments"][3] is None

    def test_sampled_pairs_need_seed(self):
        m = datasets.synth(DistributionSpec.normal(), 10, 300, RandomSeed(5))
        with pytest.raises(InvalidParameterError):
            datasets.diagnostics(m)
        rep = datasets.diagnostics(m, correlation_sample=100, seed=RandomSeed(6))
        assert rep.correlation_pairs == 100

    def test_too_few_items(self):
        with pytest.raises(InvalidParameterError):
            datasets.diagnostics(EmbeddingMatrix(np.ones((3, 2))))
