import numpy as np
import pytest

from src.core import tensor as T
from src.core.errors import ConfigurationError, DimensionError
from src.core.tensor import Tape, Tensor
from src.models.layers import ConvLayer, DenseLayer, conv_down, conv_up, dense_down, dense_up
from src.pipeline.gradcheck import adjointness_gap


@pytest.fixture
def dense():
    rng = np.random.default_rng(0)
    layer = DenseLayer.init(5, 3, rng, name="layer1")
    return layer.with_parameters({
        "layer1.b_up": rng.normal(size=3).astype(np.float32),
        "layer1.b_down": rng.normal(size=5).astype(np.float32),
    })


class TestDenseLayer:
    def test_up_and_down_share_w(self, dense):
        x = np.arange(5, dtype=np.float32)
        z = np.array([1.0, -1.0, 2.0], dtype=np.float32)
        W, b_up, b_down = dense.W.numpy(), dense.b_up.numpy(), dense.b_down.numpy()
        np.testing.assert_allclose(dense_up(dense, Tensor(x)).numpy(), W @ x + b_up, rtol=1e-5)
        np.testing.assert_allclose(dense_down(dense, Tensor(z)).numpy(), W.T @ z + b_down, rtol=1e-5)

    def test_batched_shapes(self, dense):
        assert dense.up(Tensor(np.ones((4, 5)))).shape == (4, 3)
        assert dense.down(Tensor(np.ones((4, 3)))).shape == (4, 5)

    def test_width_mismatch(self, dense):
        with pytest.raises(DimensionError):
            dense.up(Tensor(np.ones(4)))

    def test_untie_starts_equal_then_diverges(self, dense):
        untied = dense.untie()
        z = Tensor(np.ones((2, 3)))
        np.testing.assert_allclose(untied.down(z).numpy(), dense.down(z).numpy(), rtol=1e-6)
        assert list(untied.parameters()) == ["layer1.W", "layer1.W_down", "layer1.b_up", "layer1.b_down"]
        changed = untied.with_parameters({"layer1.W_down": np.zeros((5, 3), np.float32)})
        np.testing.assert_allclose(changed.down(z).numpy(), np.tile(dense.b_down.numpy(), (2, 1)))

    def test_tied_layer_rejects_second_weight(self, dense):
        with pytest.raises(ConfigurationError):
            DenseLayer(dense.W, dense.b_up, dense.b_down, tied=True, W_down=Tensor(np.zeros((5, 3))))

    def test_shared_weight_gets_one_gradient_entry(self, dense):
        tape = Tape()
        bound = dense.bind(tape)
        out = bound.down(bound.up(Tensor(np.ones((2, 5)))))
        grads = tape.backward(T.mse(out, Tensor(np.zeros(out.shape))))
        assert set(grads) == {"layer1.W", "layer1.b_up", "layer1.b_down"}

    def test_adjoint(self, dense):
        rng = np.random.default_rng(1)
        assert max(adjointness_gap(dense, rng) for _ in range(100)) < 1e-5


class TestConvLayer:
    def test_shapes_round_trip(self):
        layer = ConvLayer.init(1, 4, np.random.default_rng(0), name="layer1")
        y = conv_up(layer, Tensor(np.ones((2, 1, 28, 28))))
        assert y.shape == (2, 4, 14, 14)
        assert layer.output_hw((28, 28)) == (14, 14)
        assert conv_down(layer, y, target_hw=(28, 28)).shape == (2, 1, 28, 28)

    def test_single_sample(self):
        layer = ConvLayer.init(2, 3, np.random.default_rng(0), stride=1, padding=1)
        assert layer.up(Tensor(np.ones((2, 6, 6)))).shape == (3, 6, 6)
        assert layer.down(Tensor(np.ones((3, 6, 6)))).shape == (2, 6, 6)

    def test_bias_broadcast_over_space(self):
        layer = ConvLayer.init(1, 2, np.random.default_rng(0), stride=1, padding=0)
        layer = layer.with_parameters({"conv.K": np.zeros((2, 1, 3, 3), np.float32),
                                       "conv.b_up": np.array([1.0, -2.0], np.float32)})
        y = layer.up(Tensor(np.ones((1, 1, 5, 5)))).numpy()
        np.testing.assert_array_equal(y[0, 0], np.ones((3, 3)))
        np.testing.assert_array_equal(y[0, 1], -2 * np.ones((3, 3)))

    def test_untied_needs_matching_kernel(self):
        layer = ConvLayer.init(1, 2, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            ConvLayer(layer.K, layer.b_up, layer.b_down, tied=False, K_down=Tensor(np.zeros((2, 1, 5, 5))))

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("padding", [0, 1])
    def test_adjoint(self, stride, padding):
        rng = np.random.default_rng(stride * 2 + padding)
        layer = ConvLayer.init(2, 3, rng, stride=stride, padding=padding)
        gaps = [adjointness_gap(layer, rng, in_hw=(int(rng.integers(5, 10)), int(rng.integers(5, 10))))
                for _ in range(25)]
        assert max(gaps) < 1e-4
