import numpy as np
import pytest
import torch

from physix.errors import ConfigError, DataError, TrainingDivergedError
from physix.refiner import (
    RefinerBank,
    RefinerConfig,
    RefinerNet,
    RefinerSample,
    RefinerTrainConfig,
    train_refiner,
)
from physix.schedules import warmup_cosine


def make_samples(n=24, dataset="gs", channels=("u", "v"), hw=16, offset=0.5, seed=0):
    """Synthetic corpus where target = coarse + constant offset."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        coarse = rng.normal(size=(len(channels), hw, hw)).astype(np.float32)
        out.append(
            RefinerSample(
                dataset=dataset,
                channels=channels,
                context=rng.normal(size=(4, len(channels), hw, hw)).astype(np.float32),
                coarse=coarse,
                target=coarse + offset,
                lead_time=i % 4 + 1,
            )
        )
    return out


def small_net(dataset="gs", channels=2):
    torch.manual_seed(0)
    cfg = RefinerConfig(
        datasets={"gs": {"channels": ("u", "v")}, "heat": {"channels": ("temperature",)}},
        context_frames=4,
        width=8,
        stages=2,
    )
    return RefinerNet(cfg, dataset)


class TestSchedule:
    def test_no_warmup_cosine_endpoints(self):
        # refiner schedule starts at base rate and decays to zero
        assert warmup_cosine(0, 1000, 0, 5e-3) == 5e-3
        assert warmup_cosine(1000, 1000, 0, 5e-3) == 0.0
        mid = warmup_cosine(500, 1000, 0, 5e-3)
        assert mid == pytest.approx(2.5e-3)


class TestTrainRefiner:
    def test_zero_loss_when_coarse_is_already_truth(self):
        net = small_net()
        samples = make_samples(n=8, offset=0.0)
        res = train_refiner(net, samples, RefinerTrainConfig(epochs=2, batch_frames=8))
        assert res.epoch_losses == [0.0, 0.0]

    def test_learns_constant_residual(self):
        torch.set_num_threads(1)
        net = small_net()
        samples = make_samples(n=24, offset=0.5)
        res = train_refiner(net, samples, RefinerTrainConfig(epochs=30, batch_frames=8, base_lr=5e-3))
        assert res.epoch_losses[0] == pytest.approx(0.25, rel=0.05)
        assert res.final_loss < 0.05

    def test_refined_beats_coarse_after_training(self):
        torch.set_num_threads(1)
        net = small_net()
        samples = make_samples(n=24, offset=0.5)
        train_refiner(net, samples, RefinerTrainConfig(epochs=30, batch_frames=8))
        s = samples[0]
        with torch.no_grad():
            refined = net(
                torch.from_numpy(s.context[None]), torch.from_numpy(s.coarse[None])
            ).numpy()[0]
        err_refined = float(np.mean((refined - s.target) ** 2))
        err_coarse = float(np.mean((s.coarse - s.target) ** 2))
        assert err_refined < 0.2 * err_coarse

    def test_only_matching_dataset_samples_used(self):
        net = small_net("gs")
        with pytest.raises(DataError):
            train_refiner(net, make_samples(dataset="heat", channels=("temperature",)), RefinerTrainConfig(epochs=1))

    def test_per_dataset_isolation(self):
        torch.manual_seed(0)
        cfg = RefinerConfig(
            datasets={"gs": {"channels": ("u", "v")}, "heat": {"channels": ("temperature",)}},
            context_frames=4,
            width=8,
        )
        bank = RefinerBank(cfg)
        before = {k: v.clone() for k, v in bank.nets["heat"].state_dict().items()}
        train_refiner(bank.nets["gs"], make_samples(n=8), RefinerTrainConfig(epochs=2, batch_frames=8))
        after = bank.nets["heat"].state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_float32_enforced(self):
        net = small_net().double()
        with pytest.raises(ConfigError):
            train_refiner(net, make_samples(n=4), RefinerTrainConfig(epochs=1))

    def test_same_seed_same_parameters(self):
        torch.set_num_threads(1)
        samples = make_samples(n=8)
        cfg = RefinerTrainConfig(epochs=3, batch_frames=8, seed=11)
        net_a, net_b = small_net(), small_net()
        train_refiner(net_a, samples, cfg)
        train_refiner(net_b, samples, cfg)
        for pa, pb in zip(net_a.parameters(), net_b.parameters()):
            assert torch.equal(pa, pb)

    def test_divergence_aborts(self):
        net = small_net()
        with pytest.raises(TrainingDivergedError):
            train_refiner(
                net, make_samples(n=8), RefinerTrainConfig(epochs=50, batch_frames=8, base_lr=1e18)
            )

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RefinerTrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            RefinerTrainConfig(base_lr=0.0)
        with pytest.raises(ConfigError):
            RefinerTrainConfig(batch_frames=0)
