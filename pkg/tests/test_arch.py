import pytest

from depthleak.arch import (
    ArchitectureSpec,
    comparison_count,
    conv_relu,
    depth,
    describe,
    layer_costs,
    multiplication_count,
    param_count,
    vgg_preset,
    with_classifier,
)
from depthleak.exceptions import ShapeError
from depthleak.layers import Activation, Conv2D, Flatten, FullyConnected, GlobalAvgPool, MaxPool


class TestDepth:
    """Test the counted-depth convention."""

    @pytest.mark.parametrize("model, expected", [(1, 9), (2, 11), (3, 13)])
    def test_reference_presets(self, model: int, expected: int):
        """Test that the classifier is not counted in the VGG-like presets."""
        assert depth(vgg_preset(model)) == expected

    def test_classifier_only(self):
        """Test that a bare classifier has depth 0."""
        arch = ArchitectureSpec((4, 4, 1), (Flatten(), FullyConnected(16, 2)), 2)

        assert depth(arch) == 0
        assert multiplication_count(arch) == 32

    def test_fully_convolutional_counts_every_conv(self):
        """Test that without a dense classifier every conv is counted."""
        arch = ArchitectureSpec((4, 4, 3), (Conv2D(8, 3), Activation(), Conv2D(5, 1), GlobalAvgPool()), 5)

        assert arch.classifier_index() is None
        assert depth(arch) == 2

    def test_hidden_dense_layers_are_counted(self):
        """Test that only the terminal dense layer is excluded."""
        arch = with_classifier((2, 2, 1), [Flatten(), FullyConnected(4, 6), Activation()], 3)

        assert depth(arch) == 1


class TestCosts:
    """Test the analytic cost breakdown."""

    def test_pooling_only_network_has_no_parameters(self):
        """Test a network whose only layers are pooling and reshaping."""
        arch = ArchitectureSpec((4, 4, 3), (MaxPool(2, 2), GlobalAvgPool()), 3)

        assert param_count(arch) == 0
        assert multiplication_count(arch) == 0
        assert comparison_count(arch) == 2 * 2 * 3 * 4

    def test_preset_breakdown(self):
        """Test that per-layer costs add up and follow the shapes."""
        arch = vgg_preset(1)
        costs = layer_costs(arch)

        assert costs[0].multiplications == 884_736
        assert costs[0].params == 896
        assert costs[-1].type == "fc"
        assert costs[-1].in_shape == (2048,)
        assert costs[-1].params == 20_490
        assert sum(c.params for c in costs) == param_count(arch)
        assert all(c.out_shape == arch.shapes[c.index + 1] for c in costs)


class TestValidation:
    """Test shape propagation checks."""

    def test_reports_failing_layer_index(self):
        """Test that the first layer that cannot consume its input is named."""
        layers = (Conv2D(4, 3), Flatten(), MaxPool(2, 2), FullyConnected(64, 2))
        with pytest.raises(ShapeError) as info:
            ArchitectureSpec((4, 4, 1), layers, 2)

        assert info.value.layer_index == 2

    def test_final_width_must_match_classes(self):
        """Test that the output must have num_classes entries."""
        with pytest.raises(ShapeError):
            ArchitectureSpec((4, 4, 1), (Flatten(), FullyConnected(16, 3)), 2)

    def test_softmax_only_last(self):
        """Test that softmax may only close the network."""
        layers = (Flatten(), Activation("softmax"), FullyConnected(16, 2))
        with pytest.raises(ShapeError):
            ArchitectureSpec((4, 4, 1), layers, 2)

    def test_too_many_pools(self):
        """Test that pooling below one pixel is rejected by with_classifier."""
        with pytest.raises(ShapeError):
            with_classifier((2, 2, 1), [MaxPool(2, 2), MaxPool(2, 2)], 2)

    @pytest.mark.parametrize("shape", [(4, 4), (0, 4, 1), "4x4x1"])
    def test_invalid_input_shape(self, shape):
        """Test malformed input shapes."""
        with pytest.raises((TypeError, ValueError)):
            ArchitectureSpec(shape, (Flatten(), FullyConnected(16, 2)), 2)


class TestSerialization:
    """Test the architecture JSON form."""

    def test_json_is_canonical(self):
        """Test compact, stable JSON and equality after parsing."""
        arch = with_classifier((8, 8, 3), conv_relu(4, 5, 2) + [MaxPool(2, 2)], 4, head="gap")
        text = arch.to_json()

        assert " " not in text
        assert ArchitectureSpec.from_json(text) == arch
        assert ArchitectureSpec.from_json(text).to_json() == text

    def test_missing_key(self):
        """Test that incomplete architecture JSON is rejected."""
        with pytest.raises(ValueError):
            ArchitectureSpec.from_dict({"layers": [], "num_classes": 2})

    def test_describe(self):
        """Test the compact listing notation."""
        arch = with_classifier((8, 8, 3), conv_relu(32) + conv_relu(64, 5, 2) + [MaxPool(2, 2)], 10, head="gap")

        assert describe(arch) == "[32(3), 64(5)/s2, MP, GAP]"

    def test_unknown_preset(self):
        """Test that only presets 1 to 3 exist."""
        with pytest.raises(ValueError):
            vgg_preset(4)
