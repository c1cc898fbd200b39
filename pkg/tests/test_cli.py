import csv

import pytest

from mumimo_sched.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

CONFIG = """
[env]
n_users = 2
n_subbands = 2
max_coscheduled = 2
buffer_min = 400
buffer_max = 800

[agent]
variant = gnn
gnn_head_size = 4
gnn_heads = 2

[train]
total_samples = 200
samples_per_iteration = 100
opt_steps_per_iteration = 3
batch_size = 32
buffer_size = 200
validation_states = 10
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


@pytest.fixture
def trained(tmp_path, config):
    out = tmp_path / "train"
    assert main(["train", "--config", str(config), "--out", str(out)]) == EXIT_OK
    return out / "checkpoint.bin"


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_writes_outputs(tmp_path, trained):
    out = trained.parent
    for name in ("checkpoint.bin", "train_log.csv", "config.ini", "report.txt"):
        assert (out / name).exists()
    assert len(_rows(out / "train_log.csv")) == 2
    # the written config reproduces the run
    assert main(["train", "--config", str(out / "config.ini"), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert (tmp_path / "again" / "checkpoint.bin").read_bytes() == trained.read_bytes()


def test_seed_flag_changes_run(tmp_path, config, trained):
    out = tmp_path / "seeded"
    assert main(["train", "--config", str(config), "--seed", "5", "--out", str(out)]) == EXIT_OK
    assert (out / "checkpoint.bin").read_bytes() != trained.read_bytes()


def test_eval_is_byte_identical(tmp_path, config, trained):
    outs = [tmp_path / "e1", tmp_path / "e2"]
    for out in outs:
        code = main(["eval", "--config", str(config), "--checkpoint", str(trained), "--n-states", "30",
                     "--out", str(out)])
        assert code == EXIT_OK
    for name in ("eval_summary.csv", "eval_cdf.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = {r["policy"]: r for r in _rows(outs[0] / "eval_summary.csv")}
    assert set(rows) == {"baseline", "random", "gnn:checkpoint"}
    assert float(rows["baseline"]["mean_ratio_pct"]) == pytest.approx(100.0)


def test_finetune_and_oracle_check(tmp_path, config, trained):
    out = tmp_path / "ft"
    assert main(["finetune", "--config", str(config), "--checkpoint", str(trained), "--out", str(out)]) == EXIT_OK
    assert _rows(out / "finetune_log.csv")[0]["epsilon"] == "0.2"
    oc = tmp_path / "oc"
    code = main(["oracle-check", "--config", str(config), "--checkpoint", str(out / "checkpoint.bin"),
                 "--n-states", "20", "--out", str(oc)])
    assert code == EXIT_OK
    rows = {r["policy"]: float(r["oracle_ratio_pct"]) for r in _rows(oc / "oracle_check.csv")}
    assert rows["oracle"] == pytest.approx(100.0)
    assert all(v <= 100.0 + 1e-9 for v in rows.values())


def test_bench_without_checkpoint(tmp_path, config):
    out = tmp_path / "b"
    assert main(["bench", "--config", str(config), "--n-runs", "15", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "latency.csv")
    assert [r["policy"] for r in rows] == ["action_branching", "unibranch", "gnn"]
    assert min(float(r["relative"]) for r in rows) == 1.0


@pytest.mark.parametrize("edit, key", [
    (lambda t: t.replace("n_subbands = 2\n", ""), "n_subbands"),
    (lambda t: t.replace("variant = gnn", "variant = gnn\nfoo = 1"), "foo"),
    (lambda t: t.replace("buffer_max = 800", "buffer_max = 100"), "buffer_max"),
    (lambda t: t + "[eval]\nn = 1\n", "eval"),
])
def test_bad_config_exits_2(tmp_path, capsys, edit, key):
    path = tmp_path / "bad.ini"
    path.write_text(edit(CONFIG))
    assert main(["eval", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["eval", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_checkpoint_for_other_structure_exits_2(tmp_path, trained):
    path = tmp_path / "other.ini"
    path.write_text(CONFIG.replace("n_subbands = 2", "n_subbands = 3"))
    code = main(["eval", "--config", str(path), "--checkpoint", str(trained), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG


def test_corrupt_checkpoint_exits_1(tmp_path, config, trained):
    bad = tmp_path / "bad.bin"
    data = bytearray(trained.read_bytes())
    data[40] ^= 0xFF
    bad.write_bytes(bytes(data))
    code = main(["eval", "--config", str(config), "--checkpoint", str(bad), "--out", str(tmp_path / "o")])
    assert code == EXIT_RUNTIME


def test_finetune_needs_checkpoint(tmp_path, config):
    assert main(["finetune", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
