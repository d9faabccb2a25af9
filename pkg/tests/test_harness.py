import math

import numpy as np
import pytest

from fggp import harness
from fggp.data import write_synthetic_files
from fggp.harness import (AblationGrid, ExperimentConfig, ExperimentError, dump_schedule, load_checkpoint,
                          load_config, parse_config_text, report_layer_sparsity, run_ablation, run_experiment,
                          save_checkpoint, summarize)
from fggp.netcore import Batch, ConfigError, Network, build_mlp, init_params, loss_and_backward, sgd_step
from fggp.netcore import OptimizerState, apply_lr_schedule
from fggp.prune import PruneSchedule, SparsityMask, round_half_up


def toy_config(**kw):
    base = dict(model="mlp:16", synthetic_classes=3, synthetic_per_class=40, synthetic_shape=(12,),
                synthetic_margin=3.0, epochs=4, batch_size=16, lr=0.05, lr_decay_epochs=(3,), delta_t=3,
                s_fin=0.9, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_defaults_follow_reference_recipe():
    cfg = ExperimentConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.momentum, cfg.weight_decay) == (160, 128, 0.1, 0.9, 0.0005)
    assert cfg.lr_decay_epochs == (80, 120) and cfg.lr_decay_factor == 0.1
    assert cfg.delta_t == 1000 and cfg.prune_stop_fraction == 0.8
    assert (cfg.order, cfg.rate, cfg.r) == ("gradient_first", "fixed", 0.5)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# toy\nepochs = 7\nlr_decay_epochs = 3, 5\nhflip = yes\norder = magnitude_first\n", encoding="utf-8")
    cfg = load_config(path, {"epochs": 9})
    assert cfg.epochs == 9 and cfg.lr_decay_epochs == (3, 5) and cfg.hflip is True
    assert cfg.order == "magnitude_first"
    assert load_config(None, parse_config_text(cfg.to_text())) == cfg


def test_config_errors_are_field_level(tmp_path):
    with pytest.raises(ConfigError) as exc:
        toy_config(epochs=0, s_fin=1.5, order="sideways", model="rnn:3").validate()
    msg = str(exc.value)
    for name in ("epochs:", "s_fin:", "order:", "model:"):
        assert name in msg
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("epochs = 3\nepochs = three\n")
    with pytest.raises(ConfigError, match="bogus: unknown"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError, match="train_images: file not found"):
        ExperimentConfig(dataset="idx", train_images=str(tmp_path / "nope"), train_labels=str(tmp_path / "nope")).validate()


def test_dump_schedule_rows():
    sched = PruneSchedule(0.0, 0.9, 0, 1000, 300)
    rows = dump_schedule(sched, 1000)
    assert rows[0] == (0, 0.0, 1000)
    assert rows[-1][0] == 1000 and rows[-1][2] == round_half_up(0.1 * 1000)
    assert [r[0] for r in rows] == [0, 300, 600, 900, 1000]
    assert all(a[2] >= b[2] for a, b in zip(rows, rows[1:]))


def test_toy_run_hits_target_and_freezes_mask():
    cfg = toy_config()
    masks = {}
    metrics = run_experiment(cfg, on_iteration=lambda t, st: masks.__setitem__(t, st.mask.bits.copy()))
    n_dense = metrics.n_dense
    assert metrics.final_active == round_half_up(0.1 * n_dense)
    assert metrics.epochs[-1]["sparsity"] == pytest.approx(0.9, abs=1 / n_dense)
    after = [t for t in masks if t > metrics.t_fin]
    assert after, "fine-tune phase must exist"
    for t in after:
        assert np.array_equal(masks[t], masks[metrics.t_fin])
    assert max(ev.t for ev in metrics.events) == metrics.t_fin
    # the event log reconstructs the popcount trajectory
    for t_ev, active in metrics.active_trajectory(n_dense)[1:]:
        assert int(masks[t_ev].sum()) == active
    for rec in metrics.events:
        assert rec.n_before - rec.n_pruned == rec.n_target


def test_t_fin_from_stop_fraction():
    cfg = toy_config()
    metrics = run_experiment(cfg)
    n_train = 96  # 120 samples, 20% held out
    ipe = math.ceil(n_train / cfg.batch_size)
    assert metrics.t_fin == round_half_up(0.8 * cfg.epochs * ipe)


def test_equal_sparsities_is_plain_sgd():
    cfg = toy_config(s_fin=0.0, epochs=2)
    metrics = run_experiment(cfg)
    assert metrics.events == []

    train, _ = harness.load_datasets(cfg)
    net = Network(build_mlp([12, 16, 3]), (12,))
    init_params(net, cfg.seed)
    opt = OptimizerState.for_network(net, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                                     lr_decay_epochs=cfg.lr_decay_epochs, lr_decay_factor=cfg.lr_decay_factor)
    rng = np.random.default_rng([cfg.seed, 1])
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for b in range(0, len(train), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            loss_and_backward(net, None, Batch(train.inputs[idx], train.labels[idx]))
            sgd_step(net, None, opt)
        apply_lr_schedule(opt, epoch + 1)
    assert np.array_equal(metrics.state.net.params, net.params)


def test_sparse_to_sparse_starts_from_erk_budget():
    cfg = toy_config(s_ini=0.5, s_fin=0.9)
    seen = []
    metrics = run_experiment(cfg, on_iteration=lambda t, st: seen.append(st.mask.active_count) if t == 1 else None)
    assert seen == [round_half_up(0.5 * metrics.n_dense)]
    assert metrics.final_active == round_half_up(0.1 * metrics.n_dense)


def test_run_is_bit_reproducible(tmp_path):
    a = run_experiment(toy_config(output_dir=str(tmp_path / "a")))
    b = run_experiment(toy_config(output_dir=str(tmp_path / "b")))
    assert a.to_jsonl().replace("/a", "/b") == b.to_jsonl()
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_checkpoint_roundtrip(tmp_path):
    metrics = run_experiment(toy_config(epochs=2))
    st = metrics.state
    path = tmp_path / "ck.bin"
    save_checkpoint(path, st.net, st.mask, st.opt, st.iteration)
    back = load_checkpoint(path)
    assert np.array_equal(back.net.params, st.net.params)
    assert np.array_equal(back.mask.bits, st.mask.bits)
    assert np.array_equal(back.opt.momentum_buffers, st.opt.momentum_buffers)
    assert back.opt.lr == st.opt.lr and back.iteration == st.iteration
    assert back.net.layers == st.net.layers
    save_checkpoint(tmp_path / "again.bin", back.net, back.mask, back.opt, back.iteration)
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_layer_report_dense_and_totals():
    net = Network(build_mlp([4, 3, 2]), (4,))
    mask = SparsityMask.dense(net.n_params)
    report = report_layer_sparsity(net, mask)
    assert [r[3] for r in report.rows] == [0.0, 0.0]
    mask.clear(np.arange(0, 10))
    report = report_layer_sparsity(net, mask)
    assert report.total_active == mask.active_count
    assert report.total_sparsity == pytest.approx(mask.sparsity)
    assert report.rows[0] == ("fc0", 15, 5, pytest.approx(2 / 3))
    lines = report.to_tsv().splitlines()
    assert lines[0] == "layer\tdense\tactive\tsparsity" and lines[-1].startswith("total\t23\t13\t")


def test_cnn_on_cifar_files(tmp_path):
    paths = write_synthetic_files(tmp_path, "cifar10_bin", (3, 32, 32), classes=10, per_class=4, margin=6.0)
    cfg = ExperimentConfig(model="cnn:4,8", dataset="cifar10_bin", cifar_train=str(paths["train"]),
                           cifar_test=str(paths["test"]), epochs=2, batch_size=8, delta_t=2, s_fin=0.8,
                           lr_decay_epochs=(), hflip=True)
    metrics = run_experiment(cfg)
    assert metrics.final_active == round_half_up(0.2 * metrics.n_dense)
    names = [r[0] for r in report_layer_sparsity(metrics.state.net, metrics.state.mask).rows]
    assert names == ["conv0", "conv1", "fc0"]


def test_idx_experiment(tmp_path):
    paths = write_synthetic_files(tmp_path, "idx", (1, 8, 8), classes=4, per_class=20, border=1, margin=6.0)
    cfg = ExperimentConfig(model="mlp:12", dataset="idx", train_images=str(paths["train_images"]),
                           train_labels=str(paths["train_labels"]), test_images=str(paths["test_images"]),
                           test_labels=str(paths["test_labels"]), epochs=3, batch_size=8, delta_t=4,
                           s_fin=0.5, lr_decay_epochs=())
    metrics = run_experiment(cfg)
    assert metrics.state.net.input_shape == (1, 8, 8)
    assert metrics.final_active == round_half_up(0.5 * metrics.n_dense)


def test_failure_flushes_partial_log(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = harness.sgd_step

    def flaky(net, mask, opt):
        calls["n"] += 1
        if calls["n"] == 10:
            raise FloatingPointError("boom")
        return real(net, mask, opt)

    monkeypatch.setattr(harness, "sgd_step", flaky)
    with pytest.raises(ExperimentError) as exc:
        run_experiment(toy_config(output_dir=str(tmp_path)))
    assert exc.value.metrics.error.startswith("FloatingPointError")
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert '"type": "error"' in lines[-1]
    assert any('"type": "epoch"' in line for line in lines)


def test_ablation_counts_and_single_cell(tmp_path):
    cfg = toy_config(epochs=2, output_dir=str(tmp_path))
    logs = run_ablation(cfg, AblationGrid(seeds=(1,)))
    assert len(logs) == 4
    assert {(m.config["order"], m.config["rate"]) for m in logs} == {
        ("gradient_first", "fixed"), ("gradient_first", "cosine"),
        ("magnitude_first", "fixed"), ("magnitude_first", "cosine")}
    assert (tmp_path / "summary.tsv").is_file()

    single = run_ablation(toy_config(epochs=2), AblationGrid(("gradient_first",), ("fixed",), (0.5,), (1,)))
    direct = run_experiment(toy_config(epochs=2))
    assert single[0].to_jsonl() == direct.to_jsonl()


def test_ablation_identical_seeds_have_zero_std():
    logs = run_ablation(toy_config(epochs=2), AblationGrid(("gradient_first",), ("fixed",), (0.5,), (3, 3, 3)))
    (row,) = summarize(logs)
    assert row["runs"] == 3 and row["std"] == 0.0


def test_ablation_records_failing_cell():
    logs = run_ablation(toy_config(epochs=1), AblationGrid(("gradient_first",), ("fixed", "bogus"), (0.5,), (0,)))
    assert logs[0].error is None
    assert logs[1].error is not None and "rate" in logs[1].error
    rows = summarize(logs)
    assert [r["failed"] for r in rows] == [0, 1]
