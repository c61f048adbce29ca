import numpy as np
import pandas as pd
import pytest

from datamodel.dm_types import ChannelSpec, Dataset, Grid2D
from fno.fno_bundle import TaskSpec
from fno.fno_model import FnoConfig, FnoModel
from pdegen.pde_generate import GenerationSettings, generate
from pretrain.pt_proxy import (
    BlurSpec,
    MaskSpec,
    apply_blur,
    apply_mask,
    blur_transfer,
    gaussian_kernel,
    mask_count,
)
from pretrain.pt_train import PretrainConfig, autoencode_step, perturb_sample, pretrain_step, train_pretrain
from utils.constant import PARAM_RANGES
from utils.errors import ConfigError, ModelStateError
from utils.utils import derive_seed


def _field(C=2, H=16, W=16, seed=0):
    return np.random.default_rng(seed).standard_normal((C, H, W))


def test_zero_ratio_mask_is_identity():
    x = _field()
    out, mask = apply_mask(x, MaskSpec(0.0), seed=3)
    assert np.array_equal(out, x)
    assert not mask.any()


@pytest.mark.parametrize("H, ratio, patch, expected", [
    (64, 0.7, 1, 2867),
    (16, 0.7, 1, 179),
    (64, 0.3, 4, 77),
    (16, 1.0, 1, 256),
])
def test_mask_counts_are_exact(H, ratio, patch, expected):
    spec = MaskSpec(ratio, patch=patch)
    assert mask_count(spec, H, H) == expected
    out, mask = apply_mask(_field(1, H, H), spec, seed=1)
    assert mask.sum() == expected * patch * patch
    assert np.all(out[0][mask] == 0.0)


@pytest.mark.parametrize("H", [8, 16])
def test_mask_counts_exhaustive_over_small_grids(H):
    for patch in (p for p in range(1, H + 1) if H % p == 0):
        units = (H // patch) ** 2
        ratios = [i / units for i in range(units + 1)] + [i / 100 for i in range(101)]
        for ratio in ratios:
            spec = MaskSpec(ratio, patch=patch)
            count = mask_count(spec, H, H)
            assert count == int(np.floor(ratio * units + 0.5)), (patch, ratio)
            _, mask = apply_mask(_field(1, H, H), spec, seed=patch)
            assert mask.sum() == count * patch * patch, (patch, ratio)


def test_mask_is_shared_across_channels_and_spares_coordinates():
    x = _field(C=3) + 10.0
    out, mask = apply_mask(x, MaskSpec(0.5), seed=2, channel_mask=np.array([True, True, False]))
    assert np.all(out[0][mask] == 0) and np.all(out[1][mask] == 0)
    assert np.array_equal(out[2], x[2])


def test_mask_depends_only_on_seed():
    x = _field()
    a = apply_mask(x, MaskSpec(0.4), seed=5)[1]
    b = apply_mask(x, MaskSpec(0.4), seed=5)[1]
    c = apply_mask(x, MaskSpec(0.4), seed=6)[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mask_spec_validation():
    with pytest.raises(ConfigError):
        MaskSpec(1.5)
    with pytest.raises(ConfigError):
        MaskSpec(0.5, patch=3).units(16, 16)
    with pytest.raises(ConfigError):
        BlurSpec(2.0, 1.0)


def test_zero_sigma_blur_is_identity():
    x = _field()
    assert np.array_equal(apply_blur(x, 0.0), x)
    assert gaussian_kernel(0.0).tolist() == [1.0]


def test_blur_keeps_constants_and_means():
    const = np.full((1, 16, 16), 2.5)
    assert np.max(np.abs(apply_blur(const, 1.7) - 2.5)) < 1e-12
    x = _field()
    blurred = apply_blur(x, 2.0)
    assert np.allclose(blurred.mean(axis=(1, 2)), x.mean(axis=(1, 2)), atol=1e-12)
    assert blurred.std() < x.std()


def test_blur_matches_direct_periodic_convolution():
    sigma, H, W = 1.3, 16, 12
    x = _field(1, H, W, seed=4)[0]
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    rows = sum(k[j + r] * np.roll(x, j, axis=1) for j in range(-r, r + 1))
    direct = sum(k[i + r] * np.roll(rows, i, axis=0) for i in range(-r, r + 1))
    assert np.max(np.abs(apply_blur(x[None], sigma)[0] - direct)) < 1e-6


def test_blur_transfer_matches_kernel_dft():
    sigma, n = 0.8, 16
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    freqs = np.arange(n // 2 + 1)
    oracle = np.array([np.sum(k * np.exp(-2j * np.pi * f * np.arange(-r, r + 1) / n)) for f in freqs])
    assert np.max(np.abs(blur_transfer(sigma, n) - oracle.real)) < 1e-6
    assert np.max(np.abs(oracle.imag)) < 1e-12


def test_blur_is_linear():
    a, b = _field(seed=5), _field(seed=6)
    lhs = apply_blur(3.0 * a + b, 1.1)
    rhs = 3.0 * apply_blur(a, 1.1) + apply_blur(b, 1.1)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_mask_and_blur_commute_only_without_blur():
    x = _field(seed=9)
    sharp = dict(mask=MaskSpec(0.5), blur=BlurSpec(0.0, 0.0))
    a = perturb_sample(x, PretrainConfig(order="mask_blur", **sharp), seed=4)
    b = perturb_sample(x, PretrainConfig(order="blur_mask", **sharp), seed=4)
    assert np.array_equal(a, b)

    blurry = dict(mask=MaskSpec(0.5), blur=BlurSpec(1.5, 1.5))
    a = perturb_sample(x, PretrainConfig(order="mask_blur", **blurry), seed=4)
    b = perturb_sample(x, PretrainConfig(order="blur_mask", **blurry), seed=4)
    assert not np.allclose(a, b)
    _, mask = apply_mask(x, MaskSpec(0.5), derive_seed(4, "mask"))
    assert np.all(b[:, mask] == 0.0)
    assert np.any(a[:, mask] != 0.0)


def _model(C=2, seed=0):
    return FnoModel(FnoConfig(C, C, width=4, modes1=3, modes2=3, layers=1, decoder=True, dtype="f64"), seed=seed)


def test_identity_proxy_step_equals_autoencoding():
    batch = np.random.default_rng(7).standard_normal((3, 2, 16, 16))
    a, b = _model(), _model()
    loss_a = pretrain_step(a, batch, PretrainConfig(), seed=11)
    loss_b = autoencode_step(b, batch)
    assert loss_a == loss_b
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.grad, pb.grad), pa.name


def test_step_needs_decoder():
    model = _model()
    model.discard_decoder()
    with pytest.raises(ModelStateError):
        autoencode_step(model, np.zeros((1, 2, 16, 16)))


def _unlabeled(n=6, C=2, H=16):
    rng = np.random.default_rng(8)
    return Dataset("poisson", Grid2D(H, H), [ChannelSpec(f"c{i}") for i in range(C)],
                   rng.standard_normal((n, 1, C, H, H)), [{} for _ in range(n)], seed=8)


def test_zero_epochs_returns_initial_weights():
    model = _model()
    initial = model.state_dict()
    ckpt, losses = train_pretrain(_unlabeled(), model, PretrainConfig(epochs=0))
    assert losses == []
    assert ckpt.stage == "pretrained"
    for name, value in initial.items():
        assert np.array_equal(ckpt.weights[name], value)


def test_seeds_change_the_result_and_curve_is_written(tmp_path):
    config = dict(mask=MaskSpec(0.5), blur=BlurSpec(0.0, 1.0), epochs=2, batch_size=4)
    a, losses = train_pretrain(_unlabeled(), _model(), PretrainConfig(seed=1, **config), out_dir=tmp_path / "a")
    again, _ = train_pretrain(_unlabeled(), _model(), PretrainConfig(seed=1, **config))
    b, _ = train_pretrain(_unlabeled(), _model(), PretrainConfig(seed=2, **config))

    assert np.array_equal(a.weights["lift.weight"], again.weights["lift.weight"])
    assert not np.array_equal(a.weights["lift.weight"], b.weights["lift.weight"])
    assert len(losses) == 2 and all(np.isfinite(losses))
    curve = pd.read_csv(tmp_path / "a" / "loss.csv")
    assert curve["epoch"].tolist() == [1, 2]
    assert (tmp_path / "a" / "checkpoint.json").exists()


def test_pretrain_subset_larger_than_dataset():
    with pytest.raises(ConfigError):
        train_pretrain(_unlabeled(n=2), _model(), PretrainConfig(epochs=1, n=5))


@pytest.mark.slow
def test_pretraining_halves_the_loss_on_poisson():
    dataset, _ = generate("poisson", 512, PARAM_RANGES["poisson"]["pretrain"], False, 1, GenerationSettings(resolution=64))
    task = TaskSpec.for_dataset(dataset)
    model = FnoModel(FnoConfig(task.model_in, task.model_out, decoder=True), seed=1)
    config = PretrainConfig(mask=MaskSpec(0.7), blur=BlurSpec(0.0, 1.0), epochs=200, seed=1)
    _, losses = train_pretrain(dataset, model, config, task)
    assert len(losses) == 200
    assert losses[-1] < 0.5 * losses[0]
