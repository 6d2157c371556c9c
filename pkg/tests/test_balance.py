import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physix.errors import ConfigError
from physix.fields import balance_datasets


class TestBalanceExamples:
    def test_equal_sizes_factor_one(self):
        sched = balance_datasets({"A": 100, "B": 100})
        assert sched.factors == {"A": 1, "B": 1}
        assert all(len(v) == 100 for v in sched.entries.values())

    def test_exact_multiple(self):
        sched = balance_datasets({"A": 100, "B": 25})
        assert sched.factors["B"] == 4
        assert len(sched.entries["A"]) == len(sched.entries["B"]) == 100
        assert sched.entries["B"] == list(range(25)) * 4

    def test_ceil_with_truncation(self):
        sched = balance_datasets({"A": 100, "B": 30})
        assert sched.factors["B"] == 4
        assert len(sched.entries["B"]) == 100
        # last replica truncated to ten entries
        assert sched.entries["B"][90:] == list(range(10))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            balance_datasets({"A": 100, "B": 0})
        with pytest.raises(ConfigError):
            balance_datasets({})

    def test_epoch_order_deterministic(self):
        sched = balance_datasets({"A": 5, "B": 3})
        assert sched.epoch_order(0) == sched.epoch_order(0)
        assert sched.epoch_order(0) != sched.epoch_order(1)


@settings(max_examples=50, deadline=None)
@given(
    sizes=st.dictionaries(
        keys=st.text(min_size=1, max_size=4),
        values=st.integers(min_value=1, max_value=500),
        min_size=1,
        max_size=6,
    )
)
def test_equal_contribution_invariant(sizes):
    sched = balance_datasets(sizes)
    max_size = max(sizes.values())
    assert sched.per_epoch == max_size
    for name, size in sizes.items():
        idxs = sched.entries[name]
        assert len(idxs) == max_size
        assert all(0 <= i < size for i in idxs)
        # ceil rule
        assert sched.factors[name] == -(-max_size // size)
