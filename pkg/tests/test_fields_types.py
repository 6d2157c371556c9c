import numpy as np
import pytest

from physix.errors import (
    ConfigError,
    NonFiniteDataError,
    NormalizationStateError,
    ShapeMismatchError,
)
from physix.fields import Boundary, Channel, ChannelUnion, DatasetSpec, FieldSequence


def make_spec(name="demo", channels=("a", "b"), h=16, w=16):
    return DatasetSpec(name=name, channels=channels, height=h, width=w)


class TestChannelUnion:
    def test_positions_and_index(self):
        union = ChannelUnion((Channel("u"), Channel("v"), Channel("temperature")))
        assert union.names == ("u", "v", "temperature")
        assert union.positions(["temperature", "u"]) == [2, 0]

    def test_duplicate_rejected(self):
        with pytest.raises(ConfigError):
            ChannelUnion((Channel("u"), Channel("u")))

    def test_unknown_channel_rejected(self):
        union = ChannelUnion((Channel("u"),))
        with pytest.raises(ConfigError):
            union.positions(["nope"])

    def test_extension_appends_only(self):
        union = ChannelUnion((Channel("u"), Channel("v")))
        bigger = union.extended([Channel("v"), Channel("pollutant")])
        assert bigger.names == ("u", "v", "pollutant")
        # old positions untouched
        assert bigger.positions(["u", "v"]) == union.positions(["u", "v"])


class TestDatasetSpec:
    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            DatasetSpec(name="bad", channels=("a",), height=20, width=16)
        with pytest.raises(ConfigError):
            DatasetSpec(name="bad", channels=("a",), height=16, width=12)

    def test_boundary_coerced(self):
        spec = DatasetSpec(name="d", channels=("a",), height=8, width=8, boundary="wall")
        assert spec.boundary is Boundary.WALL


class TestFieldSequence:
    def test_shape_checked_against_spec(self):
        spec = make_spec()
        with pytest.raises(ShapeMismatchError):
            FieldSequence(data=np.zeros((4, 3, 16, 16), np.float32), spec=spec)
        with pytest.raises(ShapeMismatchError):
            FieldSequence(data=np.zeros((4, 2, 16, 8), np.float32), spec=spec)

    def test_nonfinite_rejected(self):
        spec = make_spec()
        data = np.zeros((4, 2, 16, 16), np.float32)
        data[1, 0, 3, 3] = np.nan
        with pytest.raises(NonFiniteDataError):
            FieldSequence(data=data, spec=spec)

    def test_bad_norm_state(self):
        with pytest.raises(NormalizationStateError):
            FieldSequence(
                data=np.zeros((4, 2, 16, 16), np.float32), spec=make_spec(), norm_state="weird"
            )

    def test_window_and_bounds(self):
        seq = FieldSequence(data=np.arange(8 * 2 * 16 * 16, dtype=np.float32).reshape(8, 2, 16, 16), spec=make_spec())
        win = seq.window(2, 4)
        assert win.num_frames == 4
        assert np.array_equal(win.data, seq.data[2:6])
        with pytest.raises(ShapeMismatchError):
            seq.window(6, 4)

    def test_presence_mask(self):
        union = ChannelUnion((Channel("x"), Channel("a"), Channel("b"), Channel("y")))
        seq = FieldSequence(data=np.zeros((4, 2, 16, 16), np.float32), spec=make_spec())
        mask = seq.presence_mask(union)
        assert mask.tolist() == [False, True, True, False]
