import numpy as np
import pytest

from graphmetric.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, read_config
from graphmetric.evaluate import read_square_matrix


def run(argv):
    return main([str(a) for a in argv])


def test_usage_errors_exit_one(tmp_path, mutag_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        run(["train"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run(["train", "--dataset", mutag_dir, "--distance", "w3"])
    assert exc.value.code == EXIT_USAGE
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    with pytest.raises(SystemExit) as exc:
        run(["train", "--dataset", mutag_dir, "--config", cfg])
    assert exc.value.code == EXIT_USAGE
    assert run(["train", "--dataset", mutag_dir, "--batch", "1", "--out", tmp_path / "o"]) == EXIT_USAGE
    assert run(["distances", "--dataset", mutag_dir, "--distance", "sw2", "--impl", "sequential",
                "--out", tmp_path / "o"]) == EXIT_USAGE


def test_runtime_failure_exit_two_and_marked(tmp_path):
    out = tmp_path / "out"
    assert run(["distances", "--dataset", tmp_path / "nope", "--out", out]) == EXIT_RUNTIME
    assert "DatasetError" in (out / "FAILED").read_text()
    assert not (out / "manifest.txt").exists()


def test_train_then_distances_deterministic(tmp_path, mutag_dir):
    t = tmp_path / "t"
    assert run(["train", "--dataset", mutag_dir, "--epochs", 1, "--depth", 2, "--out", t]) == EXIT_OK
    assert (t / "theta.txt").read_text().startswith("# q=7 p=5 r=2 normalize=0")
    assert (t / "history.csv").read_text().startswith("epoch,batch,loss\n")
    outs = []
    for name in ("d1", "d2"):
        assert run(["distances", "--dataset", mutag_dir, "--theta", t / "theta.txt",
                    "--out", tmp_path / name]) == EXIT_OK
        outs.append((tmp_path / name / "distances.txt").read_bytes())
    assert outs[0] == outs[1]
    assert read_square_matrix(tmp_path / "d1" / "distances.txt").shape == (188, 188)
    assert (tmp_path / "d1" / "manifest.txt").read_bytes() == (tmp_path / "d2" / "manifest.txt").read_bytes()


def test_config_file_with_flag_precedence(tmp_path, mutag_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ndataset = {mutag_dir}\nepochs = 1\nbatch = 16\nnormalize_adjacency = true\n")
    out = tmp_path / "o"
    assert run(["train", "--config", cfg, "--batch", 4, "--out", out]) == EXIT_OK
    resolved = read_config(out / "config.txt")
    assert resolved["epochs"] == "1" and resolved["batch"] == "4"
    assert resolved["normalize-adjacency"] == "true"
    # the snapshot alone reproduces the run
    again = tmp_path / "o2"
    assert run(["train", "--config", out / "config.txt", "--out", again]) == EXIT_OK
    assert (out / "theta.txt").read_bytes() == (again / "theta.txt").read_bytes()


def test_dataset_overrides_apply_unless_flagged(tmp_path, cuneiform_dir):
    out = tmp_path / "o"
    assert run(["train", "--dataset", cuneiform_dir, "--recipe", "raw-continuous", "--epochs", 1,
                "--out", out]) == EXIT_OK
    assert read_config(out / "config.txt")["batch"] == "64"


def test_kernel_outputs(tmp_path, mutag_dir):
    out = tmp_path / "k"
    assert run(["kernel", "--dataset", mutag_dir, "--out", out]) == EXIT_OK
    k = read_square_matrix(out / "kernel_5.txt")
    np.testing.assert_array_equal(np.diag(k), 1.0)
    grid = (out / "grids.csv").read_text().splitlines()
    assert grid[0] == "kind,index,value" and len(grid) == 1 + 6 + 12
    assert run(["kernel", "--dataset", mutag_dir, "--lambda", "0", "--out", out]) == EXIT_USAGE


def test_evaluate_writes_report(tmp_path, mutag_dir):
    out = tmp_path / "e"
    assert run(["evaluate", "--dataset", mutag_dir, "--runs", 1, "--r-grid", "1", "--epochs", 1,
                "--untrained", "--out", out]) == EXIT_OK
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "run,r_star,k_star,val_acc,test_acc" and lines[2] == "mean,std"
    manifest = (out / "manifest.txt").read_text()
    assert "seed.per-run" in manifest and "config.untrained = true" in manifest


def test_bench_and_proptest(tmp_path):
    out = tmp_path / "b"
    assert run(["bench", "--sizes", "10,20", "--methods", "rpw2-seq,rpw2-quad", "--out", out]) == EXIT_OK
    assert (out / "bench.csv").read_text().startswith("method,n,median_seconds,value,note\n")
    assert run(["bench", "--methods", "magic", "--out", out]) == EXIT_USAGE
    out = tmp_path / "p"
    assert run(["proptest", "--scale", "0.01", "--out", out]) == EXIT_OK
    assert all(line.startswith("PASS") for line in (out / "proptest.txt").read_text().splitlines())
