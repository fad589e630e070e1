import csv
import dataclasses
import importlib
import json

import numpy as np
import pytest

from securemmd.harness import config as C
from securemmd.harness import experiments as E
from securemmd.harness import metrics as Mx
from securemmd.harness.cli import main
from securemmd.model import joint_objective, sgd_step

T = importlib.import_module("securemmd.harness.train")

SMALL = dict(epochs=6, l1_layers=(16,), l2_layers=(8,), early_stop=False)


# metrics -------------------------------------------------------------------


def test_auc_examples():
    assert Mx.auc([0.9, 0.8, 0.3], [1, -1, 1]) == 0.5
    assert Mx.auc([3, 2, -1, -2], [1, 1, -1, -1]) == 1.0
    assert Mx.auc([0.4] * 6, [1, -1, 1, -1, 1, 1]) == 0.5
    with pytest.raises(Mx.MetricError):
        Mx.auc([0.1, 0.2], [1, 1])


def test_separated_metrics():
    m = Mx.score_metrics([2.0, 1.0, -1.0, -3.0], [1, 1, -1, -1])
    assert (m.auc, m.fscore, m.precision, m.n_test) == (1.0, 1.0, 1.0, 4)


def test_auc_equals_pair_count():
    r = np.random.default_rng(0)
    for _ in range(50):
        n = int(r.integers(2, 500))
        y = np.where(r.random(n) < 0.4, 1, -1)
        y[0], y[1] = 1, -1
        s = np.round(r.normal(size=n), 1)
        assert Mx.auc(s, y) == pytest.approx(Mx.auc_pairs(s, y), abs=1e-12)


def test_precision_fscore():
    s, y = [0.5, 0.2, -0.1, 0.3], [1, -1, 1, 1]
    assert Mx.precision(s, y) == pytest.approx(2 / 3)
    assert Mx.fscore(s, y) == pytest.approx(2 * (2 / 3) * (2 / 3) / (4 / 3))
    assert Mx.precision([-1, -2], [1, -1]) == 0.0 and Mx.fscore([-1, -2], [1, -1]) == 0.0


def test_metric_range_check():
    with pytest.raises(Mx.MetricError):
        Mx.Metrics(auc=1.5)


# config -------------------------------------------------------------------


def test_encrypted_gaussian_selects_taylor():
    cfg = C.parse_config(["--kernel", "gaussian", "--sigma", "2", "--mode", "encrypted"])
    spec = cfg.kernel_spec()
    assert spec.mode == "taylor2" and spec.sigma == 2.0


def test_encrypted_poly_c_error():
    with pytest.raises(C.ConfigError, match="polynomial secure mode requires c=0"):
        C.parse_config(["--mode", "encrypted", "--kernel", "poly", "--c", "1"])


def test_defaults_and_header():
    cfg = C.parse_config([])
    assert (cfg.alpha, cfg.beta, cfg.lr, cfg.epochs, cfg.mode, cfg.data) == (1.0, 0.01, 0.05, 50, "plaintext", None)
    head = cfg.header()
    for part in ("alpha=1.0", "beta=0.01", "mode=plaintext", "seed_data=0", "source_fraction=0.5"):
        assert part in head


def test_unknown_flag():
    with pytest.raises(C.ConfigError, match="unknown flag"):
        C.parse_config(["--sigmaa", "2"])
    with pytest.raises(C.ConfigError, match="unknown flag"):
        C.parse_config(["--sig", "2"])


def test_file_then_flags(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nkernel = linear\nalpha = 0.5\nl2-layers = 32, 16\nepochs = 7\n")
    cfg = C.parse_config(["--epochs", "3"], file=f)
    assert (cfg.kernel, cfg.alpha, cfg.l2_layers, cfg.epochs) == ("linear", 0.5, (32, 16), 3)
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma = 2\n")
    with pytest.raises(C.ConfigError, match="unknown config key"):
        C.parse_config([], file=bad)


def test_poly3_width_cap():
    cfg = C.parse_config(["--mode", "encrypted", "--kernel", "poly", "--poly-degree", "3"])
    assert cfg.l2_layers == (C.POLY3_SECURE_WIDTH,)
    assert cfg.notes


def test_encrypted_batch_cap():
    cfg = C.RunConfig(mode="encrypted")
    assert cfg.effective_batch(2000) == C.ENCRYPTED_BATCH_CAP
    assert C.RunConfig().effective_batch(2000) == 2000
    assert C.RunConfig(batch_size=64).effective_batch(2000) == 64


# training -----------------------------------------------------------------


def test_batch_schedule():
    parts = T.batch_schedule(10, 4, 0, 1)
    assert [p.size for p in parts] == [4, 4, 2]
    assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(10))
    assert all(np.array_equal(a, b) for a, b in zip(parts, T.batch_schedule(10, 4, 0, 1)))
    assert not all(np.array_equal(a, b) for a, b in zip(parts, T.batch_schedule(10, 4, 1, 1)))
    assert len(T.batch_schedule(10, 10, 0, 1)) == 1


def test_mmd_decreases_on_synthetic():
    cfg = C.RunConfig(epochs=30, early_stop=False, lr=0.5)
    _, m = T.train(cfg)
    assert len(m.mmd_curve) == 30
    assert m.mmd_curve[-1] < m.mmd_curve[0]


def test_alpha_zero_is_classification_only():
    cfg = C.RunConfig(alpha=0.0, **SMALL)
    prep = T.prepare(cfg)
    (ps, pt), _ = T.train(cfg, prep)
    qs, qt = T.init_params(prep, cfg)
    src, tgt = prep.source_view(), prep.target_view()
    for _ in range(cfg.epochs):
        br, gs, gt = joint_objective(qs, qt, src["X_lab"], src["y_lab"], src["X_co"], tgt["X_co"], src["y_co"],
                                     cfg.kernel_spec(), 0.0, cfg.beta, use_mmd=False)
        lr = cfg.lr / prep.co_ids.size
        qs, qt = sgd_step(qs, gs, lr), sgd_step(qt, gt, lr)
    assert ps.equal(qs) and pt.equal(qt)


def test_plaintext_deterministic():
    cfg = C.RunConfig(**SMALL)
    (a, b), m1 = T.train(cfg)
    (c, d), m2 = T.train(cfg)
    assert a.equal(c) and b.equal(d)
    assert (m1.auc, m1.fscore, m1.precision, m1.loss_curve) == (m2.auc, m2.fscore, m2.precision, m2.loss_curve)


def test_source_only_never_reads_target_training_rows():
    cfg = C.RunConfig(mode="source_only", **SMALL)
    prep = T.prepare(cfg)
    (ps, pt), m = T.train(cfg, prep)
    assert prep.split.target_feature_reads == 0
    assert prep.split.label_reads == 1
    assert pt.equal(T.init_params(prep, cfg)[1])
    assert 0 <= m.auc <= 1


def test_early_stop():
    cfg = C.RunConfig(epochs=200, lr=1e-9, l1_layers=(8,), l2_layers=(4,))
    _, m = T.train(cfg)
    assert m.epochs_run == 1 + T.PATIENCE


def test_encrypted_tiny_matches_plaintext():
    base = C.RunConfig(synthetic_n=60, epochs=2, l1_layers=(6,), l2_layers=(3,), key_bits=512,
                       kernel="gaussian", kernel_mode="taylor2", early_stop=False)
    prep = T.prepare(base)
    (ps, pt), mp = T.train(dataclasses.replace(base, mode="plaintext"), prep)
    (es, et), me = T.train(dataclasses.replace(base, mode="encrypted"), prep)
    assert np.max(np.abs(np.array(mp.loss_curve) - me.loss_curve)) <= 1e-3
    assert es.allclose(ps, atol=1e-6) and et.allclose(pt, atol=1e-6)


# experiments ---------------------------------------------------------------


def test_parse_grid():
    assert E.parse_grid("linear;polynomial:3;gaussian:2") == [
        {"kernel": "linear"}, {"kernel": "polynomial", "poly_degree": 3, "c": 0.0},
        {"kernel": "gaussian", "sigma": 2.0}]
    with pytest.raises(C.ConfigError):
        E.parse_grid("cosine")


def test_empty_grid():
    with pytest.raises(C.ConfigError, match="empty kernel grid"):
        E.run_table_experiment(C.RunConfig(), [])


def test_table_structure_and_failures(tmp_path, monkeypatch):
    base = C.RunConfig(**SMALL)
    real_train = E.train

    def flaky(cfg, prep):
        if cfg.sigma == 2.0 and cfg.mode == "plaintext" and cfg.seed_data == 1:
            raise RuntimeError("boom")
        return real_train(cfg, prep)

    monkeypatch.setattr(E, "train", flaky)
    rep = E.run_table_experiment(base, E.parse_grid("gaussian:1;gaussian:2"), ("plaintext", "source_only"), 2)
    assert rep.kernels == ["gaussian(sigma=1)", "gaussian(sigma=2)"]
    assert len(rep.cells) == 2 * 2 * 2
    failed = [c for c in rep.cells if c["error"]]
    assert len(failed) == 1 and "boom" in failed[0]["error"]
    text = rep.to_text()
    assert "w/o encryption" in text and "source only" in text and "1 cell(s) failed" in text
    rep.write(tmp_path)
    with open(tmp_path / "table.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(E.CSV_COLUMNS)
    assert json.loads((tmp_path / "manifest.json").read_text())["seeds"] == [0, 1]


# cli ------------------------------------------------------------------------


def test_cli_train_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--epochs", "3", "--l1-layers", "8", "--l2-layers", "4", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# mode=plaintext") and "auc=" in text
    assert (out / "model.npz").exists()
    assert main(["eval", str(out / "model.npz")]) == 0
    assert "auc=" in capsys.readouterr().out


def test_cli_keygen_bench_split_table(tmp_path, capsys):
    assert main(["keygen", "--key-bits", "256", "--seed-crypto", "1", "--out", str(tmp_path / "k.json")]) == 0
    assert json.loads((tmp_path / "k.json").read_text())["bits"] == 256
    assert main(["bench", "--key-bits", "256", "--reps", "5"]) == 0
    assert "encrypt" in capsys.readouterr().out
    assert main(["split", "--out", str(tmp_path / "split")]) == 0
    assert (tmp_path / "split" / "manifest.json").exists()
    assert main(["table", "--grid", "linear", "--modes", "plaintext,source_only", "--seeds", "1", "--epochs", "2",
                 "--l1-layers", "8", "--l2-layers", "4", "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "table.csv").exists()


def test_cli_bad_combination(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--mode", "encrypted", "--kernel", "poly", "--c", "1"])
    assert "requires c=0" in capsys.readouterr().err
