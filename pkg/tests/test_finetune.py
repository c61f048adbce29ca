import numpy as np
import pandas as pd
import pytest

from datamodel.dm_ops import channel_stats, split
from datamodel.dm_types import ChannelSpec, Dataset, Grid2D
from finetune.ft_metrics import EvalReport, append_results, generalization_gap, relative_l2
from finetune.ft_rollout import rollout
from finetune.ft_train import TrainRun, evaluate_operator, operator_from_checkpoint, train_supervised
from fno.fno_bundle import TaskSpec
from fno.fno_checkpoint import checkpoint_from_model, load_checkpoint, save_checkpoint
from fno.fno_model import FnoConfig, FnoModel
from utils.errors import ConfigError, DegenerateTargetError, RolloutError, ShapeError

SMALL = {"width": 4, "modes1": 3, "modes2": 3, "layers": 1, "dtype": "f64"}


def labeled_dataset(n=10, C=4, H=16, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        pde="poisson",
        grid=Grid2D(H, H),
        channels=[ChannelSpec(f"c{i}") for i in range(C)],
        inputs=rng.standard_normal((n, 1, C, H, H)),
        params=[{"i": i} for i in range(n)],
        solutions=rng.standard_normal((n, 1, 1, H, H)),
        solution_channels=[ChannelSpec("u")],
        seed=seed,
    )


def rd_dataset(n=10, H=16, t_in=3, t_sol=4):
    rng = np.random.default_rng(1)
    return Dataset(
        pde="rd",
        grid=Grid2D(H, H),
        channels=[ChannelSpec("u"), ChannelSpec("v")],
        inputs=rng.standard_normal((n, t_in, 2, H, H)),
        params=[{} for _ in range(n)],
        solutions=rng.standard_normal((n, t_sol, 2, H, H)),
        solution_channels=[ChannelSpec("u"), ChannelSpec("v")],
    )


def test_relative_l2_reference_values():
    true = np.random.default_rng(2).standard_normal((3, 1, 8, 8))
    assert relative_l2(true, true) == 0.0
    assert np.isclose(relative_l2(np.zeros_like(true), true), 1.0)
    assert np.isclose(relative_l2(2 * true, true), 1.0)
    with pytest.raises(DegenerateTargetError):
        relative_l2(true, np.zeros_like(true))
    with pytest.raises(ShapeError):
        relative_l2(true, true[:, :, :4])


def test_report_gap_and_json():
    report = EvalReport("poisson", "random", 16, 1, train_rl2=0.2, test_rl2=0.5, rollout=[0.1, 0.3])
    assert np.isclose(generalization_gap(report), 0.3)
    back = EvalReport.from_json(report.to_json())
    assert back == report
    assert [row["rollout_step"] for row in report.to_rows()] == [1, 2]


def test_results_table_appends_with_one_header(tmp_path):
    path = tmp_path / "results.csv"
    append_results([EvalReport("poisson", "random", 16, 1, 0.2, 0.5)], path)
    append_results([EvalReport("poisson", "pretrained", 16, 1, 0.1, 0.3)], path)
    table = pd.read_csv(path)
    assert table["init"].tolist() == ["random", "pretrained"]
    assert table["rollout_step"].tolist() == [0, 0]
    assert append_results([], path) is None


def test_rollout_single_step_equals_forward():
    rng = np.random.default_rng(3)
    window = rng.standard_normal((2, 3, 1, 8, 8))
    truth = rng.standard_normal((2, 4, 1, 8, 8))
    step = lambda w: 0.5 * w[:, -1] + 0.1 * w[:, 0]
    frames, errors = rollout(step, window, 1, truth)
    assert np.array_equal(frames[:, 0], step(window))
    assert errors == [relative_l2(step(window), truth[:, 0])]


def test_identity_forecaster_on_steady_state():
    frame = np.random.default_rng(4).standard_normal((2, 1, 1, 8, 8))
    window = np.repeat(frame, 3, axis=1)
    truth = np.repeat(frame, 5, axis=1)
    frames, errors = rollout(lambda w: w[:, -1], window, 5, truth)
    assert len(errors) == 5 and frames.shape == (2, 5, 1, 8, 8)
    assert errors == [0.0] * 5


def test_rollout_needs_enough_truth():
    window = np.ones((1, 2, 1, 8, 8))
    with pytest.raises(RolloutError):
        rollout(lambda w: w[:, -1], window, 3, np.ones((1, 2, 1, 8, 8)))
    with pytest.raises(RolloutError):
        rollout(lambda w: w[:, -1], window, 0, np.ones((1, 2, 1, 8, 8)))


def test_zero_epochs_keeps_initial_weights_and_error():
    ds = labeled_dataset()
    ckpt, report, op = train_supervised(ds, TrainRun(epochs=0, n=4, seed=3, model=SMALL))
    fresh = FnoModel(FnoConfig(4, 1, **SMALL), seed=3)
    for name, value in fresh.state_dict().items():
        assert np.array_equal(ckpt.weights[name], value)
    assert report.curve == []
    assert report.n == 4
    assert np.isclose(report.gap, report.test_rl2 - report.train_rl2)


def test_training_is_deterministic_and_reduces_train_error(tmp_path):
    ds = labeled_dataset()
    run = TrainRun(epochs=15, n=8, seed=1, lr=1e-2, model=SMALL)
    _, untrained, _ = train_supervised(ds, TrainRun(epochs=0, n=8, seed=1, model=SMALL))
    ckpt_a, report_a, op = train_supervised(ds, run, out_dir=tmp_path / "a")
    ckpt_b, report_b, _ = train_supervised(ds, run)

    assert report_a.train_rl2 == report_b.train_rl2
    for name, value in ckpt_a.weights.items():
        assert np.array_equal(value, ckpt_b.weights[name])
    assert report_a.train_rl2 < untrained.train_rl2

    reloaded = operator_from_checkpoint(load_checkpoint(tmp_path / "a"))
    _, _, test = split(ds, run.fractions, run.split_seed)
    assert np.isclose(evaluate_operator(reloaded, test), report_a.test_rl2, rtol=1e-12)
    assert EvalReport.from_json((tmp_path / "a" / "report.json").read_text()).test_rl2 == report_a.test_rl2


def _pretrained_checkpoint(ds, path):
    model = FnoModel(FnoConfig(ds.C, ds.C, decoder=True, **SMALL), seed=9)
    ckpt = checkpoint_from_model(model, "pretrained", input_stats=channel_stats(ds), task=TaskSpec("static", ds.C, ds.C))
    save_checkpoint(ckpt, path)
    return ckpt


def test_frozen_encoder_matches_pretrained_bytes(tmp_path):
    ds = labeled_dataset()
    pre = _pretrained_checkpoint(ds, tmp_path / "pre")
    run = TrainRun(init="frozen", checkpoint=str(tmp_path / "pre"), epochs=3, n=6, lr=1e-2, model=SMALL)
    ckpt, _, op = train_supervised(ds, run)
    encoder = [p.name for p in op.model.encoder_parameters()]
    assert encoder
    for name in encoder:
        assert ckpt.weights[name].tobytes() == pre.weights[name].tobytes()
    assert not any(name.startswith("decoder") for name in ckpt.weights)
    assert not np.array_equal(ckpt.weights["head.fc2.weight"], pre.weights["head.fc2.weight"])


def test_pretrained_init_zero_pads_fewer_channels(tmp_path):
    wide = labeled_dataset(C=4)
    _pretrained_checkpoint(wide, tmp_path / "pre")
    narrow = labeled_dataset(C=2, seed=5)
    _, report, op = train_supervised(narrow, TrainRun(init="pretrained", checkpoint=str(tmp_path / "pre"),
                                                       epochs=1, n=4, model=SMALL))
    assert op.task.channels == 4
    assert np.isfinite(report.test_rl2)


def test_bad_runs_are_rejected():
    with pytest.raises(ConfigError):
        TrainRun(init="pretrained")
    with pytest.raises(ConfigError):
        train_supervised(labeled_dataset(), TrainRun(n=9, model=SMALL))
    unlabeled = labeled_dataset().without_solutions()
    with pytest.raises(ShapeError):
        train_supervised(unlabeled, TrainRun(model=SMALL))


def test_next_step_training_reports_rollout():
    ds = rd_dataset()
    _, report, op = train_supervised(ds, TrainRun(epochs=1, n=4, model=SMALL, rollout_steps=3))
    assert op.task.kind == "next_step" and op.task.t_in == 3
    assert len(report.rollout) == 3
    assert [row["rollout_step"] for row in report.to_rows()] == [1, 2, 3]
    assert op.step(ds.inputs[:2]).shape == (2, 2, 16, 16)
