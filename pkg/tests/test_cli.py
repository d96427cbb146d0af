import json

import numpy as np
import pytest

from cycflow.cli import main
from cycflow.decode import angular_sort, two_opt
from cycflow.instances import make_tour, read_dataset

TINY_TRAIN = [
    "--epochs", "15", "--dim", "16", "--layers", "1", "--heads", "2",
    "--t-dim", "8", "--batch-size", "8", "--seed", "5",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "d.txt"
    ckpt = root / "m.ckpt"
    direct = root / "m_direct.ckpt"
    assert main(["gen", "--n", "8", "--count", "8", "--seed", "3",
                 "--solver", "heldkarp", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt),
                 "--deterministic", *TINY_TRAIN]) == 0
    assert main(["train", "--data", str(data), "--out", str(direct),
                 "--objective", "direct", "--deterministic", *TINY_TRAIN]) == 0
    return root, data, ckpt, direct


def test_gen_writes_labeled_dataset(workspace):
    _, data, _, _ = workspace
    ds = read_dataset(data)
    assert len(ds) == 8
    assert ds.labeled
    assert all(r.tour.provenance == "exact" for r in ds.records)


def test_gen_deterministic_bytes(tmp_path):
    out1, out2 = tmp_path / "a.txt", tmp_path / "b.txt"
    args = ["gen", "--n", "6", "--count", "4", "--seed", "9",
            "--solver", "heuristic", "--out"]
    assert main(args + [str(out1)]) == 0
    assert main(args + [str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_gen_size_limit_suggests_heuristic(capsys):
    code = main(["gen", "--n", "50", "--count", "1", "--solver", "heldkarp",
                 "--out", "/tmp/never.txt"])
    assert code == 1
    assert "--solver heuristic" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert main(["gen", "--count", "1", "--out", "/tmp/x.txt"]) == 1  # missing --n


def test_missing_file_is_data_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path / "m.ckpt")]) == 2


def test_unlabeled_dataset_is_data_error(tmp_path):
    data = tmp_path / "u.txt"
    assert main(["gen", "--n", "6", "--count", "2", "--solver", "none",
                 "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m.ckpt")]) == 2


def test_train_deterministic_checkpoints(workspace, tmp_path):
    _, data, _, _ = workspace
    outs = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"{tag}.ckpt"
        tele = tmp_path / f"{tag}.csv"
        assert main(["train", "--data", str(data), "--out", str(ckpt),
                     "--telemetry", str(tele), "--deterministic", *TINY_TRAIN]) == 0
        outs.append((ckpt.read_bytes(), tele.read_bytes()))
    assert outs[0] == outs[1]


def test_eval_zero_like_checkpoint_matches_baseline(workspace, tmp_path):
    root, data, _, _ = workspace
    zero = tmp_path / "zero.ckpt"
    assert main(["train", "--data", str(data), "--out", str(zero), "--epochs", "1",
                 "--lr", "0", "--dim", "16", "--layers", "1", "--heads", "2",
                 "--t-dim", "8", "--deterministic"]) == 0
    csv_path = tmp_path / "ev.csv"
    assert main(["eval", "--checkpoint", str(zero), "--data", str(data),
                 "--csv", str(csv_path), "--k", "3", "--deterministic"]) == 0
    rows = [l for l in csv_path.read_text().splitlines() if not l.startswith("#")]
    header = rows[0].split(",")
    assert len(rows) - 1 == 8
    ds = read_dataset(data)
    li = header.index("tour_length")
    for rec, row in zip(ds.records, rows[1:]):
        baseline = two_opt(
            rec.instance,
            make_tour(rec.instance, angular_sort(rec.instance.points).order, "decoded"),
        )
        assert float(row.split(",")[li]) == baseline.length


def test_eval_deterministic_reports(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    reports = []
    for tag in ("a", "b"):
        csv_path = tmp_path / f"{tag}.csv"
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                     "--csv", str(csv_path), "--k", "3", "--deterministic"]) == 0
        reports.append(csv_path.read_bytes())
    assert reports[0] == reports[1]


def test_eval_report_embeds_provenance_and_fingerprint(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    csv_path = tmp_path / "ev.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                 "--csv", str(csv_path), "--k", "3", "--deterministic"]) == 0
    text = csv_path.read_text()
    assert "# dataset_fingerprint=" in text
    assert "# label_provenance=exact" in text
    assert "# version=" in text


def test_solve_writes_tours_and_trajectory(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    out = tmp_path / "solved.txt"
    traj = tmp_path / "traj.txt"
    assert main(["solve", "--checkpoint", str(ckpt), "--data", str(data),
                 "--out", str(out), "--k", "4",
                 "--dump-trajectory", str(traj)]) == 0
    solved = read_dataset(out)
    assert solved.labeled
    assert all(r.tour.provenance == "decoded" for r in solved.records)
    lines = traj.read_text().splitlines()
    assert lines[0] == "cycflow-trajectory v1"
    assert sum(l.startswith("step ") for l in lines) == 5


def test_ablate_table_and_fingerprint(workspace, tmp_path, capsys):
    _, data, ckpt, direct = workspace
    csv_path = tmp_path / "ab.csv"
    assert main(["ablate", "--checkpoint", str(ckpt), "--direct-checkpoint",
                 str(direct), "--data", str(data), "--k", "3",
                 "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "Angular Sort" in out and "CycFlow" in out
    body = [l for l in csv_path.read_text().splitlines() if not l.startswith("#")]
    assert body[0] == "method,gap_percent"
    assert len(body) == 4
    assert any("dataset_fingerprint=" in l for l in csv_path.read_text().splitlines())


def test_ablate_names_missing_artifact(workspace, tmp_path, capsys):
    _, data, ckpt, _ = workspace
    missing = tmp_path / "absent.ckpt"
    code = main(["ablate", "--checkpoint", str(ckpt), "--direct-checkpoint",
                 str(missing), "--data", str(data)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_ablate_rejects_wrong_objective(workspace, tmp_path):
    _, data, ckpt, _ = workspace
    code = main(["ablate", "--checkpoint", str(ckpt), "--direct-checkpoint",
                 str(ckpt), "--data", str(data)])
    assert code == 2


def test_bench_reports_stage_accounting(workspace, tmp_path):
    _, _, ckpt, _ = workspace
    csv_path = tmp_path / "bench.csv"
    assert main(["bench", "--checkpoint", str(ckpt), "--sizes", "8,12",
                 "--count", "4", "--k", "2", "--csv", str(csv_path)]) == 0
    body = [l for l in csv_path.read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 3
    header = body[0].split(",")
    assert header[0] == "n"
    for row in body[1:]:
        vals = row.split(",")
        assert all(float(v) >= 0.0 for v in vals[1:])


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 7, "count": 3, "solver": "none"}))
    out = tmp_path / "d.txt"
    assert main(["gen", "--config", str(cfg), "--count", "2", "--out", str(out)]) == 0
    ds = read_dataset(out)
    assert len(ds) == 2  # flag wins over config file
    assert ds.records[0].instance.n == 7  # config wins over default


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["gen", "--config", str(cfg), "--n", "5", "--count", "1",
                 "--out", str(tmp_path / "d.txt")]) == 1


def test_numerical_error_exit_code(workspace, tmp_path, capsys):
    import torch

    from cycflow.model import load_checkpoint, save_checkpoint

    _, data, ckpt, _ = workspace
    model, meta = load_checkpoint(str(ckpt))
    with torch.no_grad():
        model.head.bias.fill_(float("inf"))
    broken = tmp_path / "broken.ckpt"
    save_checkpoint(str(broken), model, meta)
    code = main(["eval", "--checkpoint", str(broken), "--data", str(data),
                 "--k", "2", "--threads", "1"])
    assert code == 3
    assert "numerical error" in capsys.readouterr().err
