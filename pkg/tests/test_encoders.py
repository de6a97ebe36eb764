"""Encoder forwards, input VJPs vs finite differences, and serialization."""

import numpy as np
import pytest

from graddistill import RngStream, stream_for
from graddistill.encoders import (ConvSmallEncoder, EmbeddingTable, IdentityEncoder,
                                  MlpEncoder, RandomProjectionEncoder, embed_dataset,
                                  load_embeddings, load_encoder, save_embeddings,
                                  save_encoder)
from graddistill.errors import DatasetError, FormatError, ShapeError


def fd_check(encoder, batch, tol=1e-6):
    """Max deviation of the analytic input gradient from central differences,
    relative to the gradient's scale."""
    up = RngStream(99, 99).normal((batch.shape[0], encoder.feature_dim))
    grad = encoder.vjp(batch, up)

    def loss(b):
        return float((encoder.forward(b) * up).sum())

    h = 1e-5
    scale = np.abs(grad).max()
    worst = 0.0
    it = np.nditer(batch, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = batch[idx]
        batch[idx] = orig + h
        lp = loss(batch)
        batch[idx] = orig - h
        lm = loss(batch)
        batch[idx] = orig
        worst = max(worst, abs((lp - lm) / (2 * h) - grad[idx]) / scale)
    assert worst < tol, worst


class TestIdentity:
    def test_forward_passthrough(self):
        enc = IdentityEncoder(5)
        batch = RngStream(1, 1).normal((3, 5))
        assert np.array_equal(enc.forward(batch), batch)

    def test_vjp_passthrough(self):
        enc = IdentityEncoder(5)
        up = RngStream(2, 2).normal((3, 5))
        assert np.array_equal(enc.vjp(np.zeros((3, 5)), up), up)


class TestRandomProjection:
    def test_matches_explicit_matmul(self):
        enc = RandomProjectionEncoder(6, 4, stream_for(3, "enc"))
        batch = RngStream(4, 4).normal((5, 6))
        assert np.abs(enc.forward(batch) - batch @ enc.w.T).max() < 1e-15

    def test_vjp_is_transpose(self):
        enc = RandomProjectionEncoder(6, 4, stream_for(5, "enc"))
        up = RngStream(6, 6).normal((2, 4))
        assert np.array_equal(enc.vjp(np.zeros((2, 6)), up), up @ enc.w)

    def test_row_scaling(self):
        enc = RandomProjectionEncoder(400, 20, stream_for(7, "enc"))
        # entries ~ N(0, 1/d): row norms concentrate near 1
        norms = np.linalg.norm(enc.w, axis=1)
        assert abs(norms.mean() - 1.0) < 0.1


class TestMlp:
    def test_finite_differences(self):
        enc = MlpEncoder(4, 6, 3, stream_for(8, "enc"))
        batch = RngStream(9, 9).normal((2, 4))
        fd_check(enc, batch)

    def test_forward_deterministic(self):
        enc = MlpEncoder(4, 6, 3, stream_for(10, "enc"))
        batch = RngStream(11, 1).normal((2, 4))
        assert np.array_equal(enc.forward(batch), enc.forward(batch))


class TestReluOption:
    # piecewise-linear activations: FD checks get looser tolerances and
    # inputs seeded to keep pre-activations away from the kinks
    def test_mlp_relu_finite_differences(self):
        enc = MlpEncoder(4, 6, 3, stream_for(30, "enc"), activation="relu")
        batch = RngStream(31, 9).normal((2, 4)) + 0.3
        fd_check(enc, batch, tol=1e-4)

    def test_conv_relu_finite_differences(self):
        enc = ConvSmallEncoder(4, stream_for(32, "enc"), channels1=3, channels2=4,
                               activation="relu")
        batch = RngStream(33, 2).normal((1, 3, 8, 8)) * 0.5 + 0.5
        fd_check(enc, batch, tol=1e-4)

    def test_activation_round_trips_through_save(self, tmp_path):
        enc = MlpEncoder(4, 5, 3, stream_for(34, "e"), activation="relu")
        save_encoder(tmp_path / "enc", enc)
        back = load_encoder(tmp_path / "enc")
        assert back.activation == "relu"
        batch = RngStream(35, 5).normal((2, 4))
        assert np.array_equal(back.forward(batch), enc.forward(batch))

    def test_unknown_activation_rejected(self):
        with pytest.raises(ShapeError):
            MlpEncoder(4, 5, 3, stream_for(36, "e"), activation="gelu")


class TestConvSmall:
    def test_zero_image_constant_output(self):
        enc = ConvSmallEncoder(5, stream_for(12, "enc"), channels1=4, channels2=6)
        out = enc.forward(np.zeros((2, 3, 8, 8)))
        assert np.array_equal(out[0], out[1])

    def test_finite_differences(self):
        enc = ConvSmallEncoder(4, stream_for(13, "enc"), channels1=3, channels2=4)
        batch = RngStream(14, 2).normal((1, 3, 8, 8))
        fd_check(enc, batch)

    def test_rejects_indivisible_sizes(self):
        enc = ConvSmallEncoder(4, stream_for(15, "enc"))
        with pytest.raises(ShapeError):
            enc.forward(np.zeros((1, 3, 10, 10)))

    def test_size_agnostic(self):
        enc = ConvSmallEncoder(4, stream_for(16, "enc"), channels1=3, channels2=4)
        assert enc.forward(np.zeros((1, 3, 8, 8))).shape == (1, 4)
        assert enc.forward(np.zeros((1, 3, 16, 16))).shape == (1, 4)


class TestEmbedDataset:
    def test_rows_match_per_sample_forward(self):
        # BLAS batching can differ in the last ulp between batch shapes
        enc = MlpEncoder(4, 5, 3, stream_for(17, "enc"))
        inputs = RngStream(18, 3).normal((7, 4))
        table = embed_dataset(enc, inputs, np.zeros(7, dtype=int), batch_size=3)
        for i in range(7):
            row = enc.forward(inputs[i : i + 1])[0]
            assert np.abs(table.features[i] - row).max() < 1e-12

    def test_empty_dataset_rejected(self):
        enc = IdentityEncoder(4)
        with pytest.raises(DatasetError):
            embed_dataset(enc, np.zeros((0, 4)), [])


class TestEmbeddingIO:
    def test_round_trip_bitwise(self, tmp_path):
        table = EmbeddingTable(RngStream(19, 4).normal((6, 3)),
                               np.array([0, 0, 1, 1, 2, 2]), names=["a", "b", "c"])
        save_embeddings(tmp_path / "emb", table)
        back = load_embeddings(tmp_path / "emb")
        assert np.array_equal(back.features, table.features)
        assert np.array_equal(back.labels, table.labels)
        assert back.names == ["a", "b", "c"]

    def test_corrupted_magic(self, tmp_path):
        table = EmbeddingTable(np.zeros((2, 2)), np.array([0, 1]))
        save_embeddings(tmp_path / "emb", table)
        path = tmp_path / "emb" / "features.ndt"
        blob = bytearray(path.read_bytes())
        blob[:4] = b"JUNK"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="features.ndt"):
            load_embeddings(tmp_path / "emb")

    def test_dims_mismatch(self, tmp_path):
        from graddistill import write_ndt
        out = tmp_path / "emb"
        out.mkdir()
        write_ndt(out / "features.ndt", np.zeros((3, 2)))
        write_ndt(out / "labels.ndt", np.zeros(4, dtype=np.uint32))
        with pytest.raises(FormatError, match="labels"):
            load_embeddings(out)


class TestEncoderIO:
    @pytest.mark.parametrize("build", [
        lambda: RandomProjectionEncoder(4, 3, stream_for(20, "e")),
        lambda: MlpEncoder(4, 5, 3, stream_for(21, "e")),
        lambda: ConvSmallEncoder(4, stream_for(22, "e"), channels1=3, channels2=4),
    ])
    def test_round_trip_bitwise(self, tmp_path, build):
        enc = build()
        save_encoder(tmp_path / "enc", enc)
        back = load_encoder(tmp_path / "enc")
        assert back.architecture == enc.architecture
        for name, value in enc.parameters().items():
            assert np.array_equal(back.parameters()[name], value)
        if enc.input_kind == "vector":
            batch = RngStream(23, 5).normal((2, 4))
        else:
            batch = RngStream(23, 5).normal((2, 3, 8, 8))
        assert np.array_equal(back.forward(batch), enc.forward(batch))
