import json

import numpy as np
import pytest

from haam import cli, dataio, model
from haam.graph import homophily_ratio
from haam.spectral import GammaParams

SMALL_TRAIN = ["--k", "2", "--m", "8", "--epochs", "30", "--patience", "30", "--threads", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = cli.main(["generate", "--n", "120", "--classes", "3", "--dims", "2",
                     "--rho", "0.2,0.8", "--features", "8", "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert cli.main(["train", "--data", str(dataset), "--out", str(out)] + SMALL_TRAIN) == 0
    return out


def test_generate_writes_dataset(dataset):
    bundle = dataio.load_dataset(dataset)
    assert bundle.n_nodes == 120 and bundle.graph.n_dims == 2
    assert [homophily_ratio(g, bundle.labels) for g in bundle.graph] == bundle.meta["homophily"]
    cfg = json.loads((dataset / "config.json").read_text())
    assert cfg["command"] == "generate" and cfg["options"]["rho"] == "0.2,0.8"
    assert cfg["options"]["mean_degree"] == 12.0


def test_generate_desk_homophily(tmp_path):
    assert cli.main(["generate", "--n", "600", "--classes", "4", "--dims", "3",
                     "--rho", "0.9,0.9,0.9", "--seed", "1", "--features", "4",
                     "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "meta.json").read_text())
    np.testing.assert_allclose(meta["homophily"], 0.9, atol=0.03)


def test_single_rho_broadcasts_over_dims(tmp_path):
    assert cli.main(["generate", "--n", "60", "--dims", "3", "--rho", "0.5",
                     "--features", "2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "meta.json").read_text())["n_dims"] == 3


@pytest.mark.parametrize("args", [
    ["generate", "--rho", "1.0"],
    ["generate", "--rho", "0.5,abc"],
    ["generate", "--rho", "0.5,0.5", "--dims", "3"],
    ["train"],
    ["train", "--data", "x", "--k", "0"],
    ["evaluate", "--data", "x"],
])
def test_usage_errors_exit_2(args, tmp_path):
    assert cli.main(args + ["--out", str(tmp_path)]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--n", "many"])
    assert info.value.code == 2


def test_missing_data_exits_3(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_4(dataset, tmp_path):
    code = cli.main(["train", "--data", str(dataset), "--out", str(tmp_path), "--lr", "1e300",
                     "--epochs", "5", "--patience", "5", "--k", "2", "--m", "4"])
    assert code == 4


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    expected = {"config.json", "checkpoint.json", "metrics.txt", "metrics.json",
                "consensus.csv", "consensus_trace.csv", "training_log.csv",
                "predictions_dim0.csv", "predictions_dim1.csv", "H_0.csv", "H_1.csv"}
    assert expected <= names
    metrics = json.loads((trained / "metrics.json").read_text())
    assert 0.0 <= metrics["accuracy"] <= 1.0
    trace = np.loadtxt(trained / "consensus_trace.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(trace[:, 1]) <= 1e-9)
    opts = json.loads((trained / "config.json").read_text())["options"]
    assert opts["k"] == 2 and opts["beta"] == 1.0 and opts["lr"] == 1e-3


def test_config_precedence(dataset, tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"k": 3, "m": 4, "epochs": 7, "patience": 7}))
    out = tmp_path / "run"
    assert cli.main(["train", "--data", str(dataset), "--config", str(conf), "--k", "2",
                     "--out", str(out)]) == 0
    opts = json.loads((out / "config.json").read_text())["options"]
    assert (opts["k"], opts["m"], opts["epochs"]) == (2, 4, 7)
    assert opts["alpha"] == 1e-5


def test_rerun_from_written_config(trained, tmp_path):
    out = tmp_path / "again"
    assert cli.main(["train", "--config", str(trained / "config.json"), "--out", str(out)]) == 0
    for name in ("metrics.json", "checkpoint.json", "consensus.csv"):
        assert (out / name).read_bytes() == (trained / name).read_bytes()


def test_evaluate_zero_perturbation(trained, dataset, tmp_path):
    assert cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                     "--data", str(dataset), "--drop-edges", "0", "--mask-features", "0",
                     "--trials", "3", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "evaluation.json").read_text())
    clean = json.loads((trained / "metrics.json").read_text())
    assert doc["clean"]["f1_micro"] == clean["f1_micro"]
    for entry in doc["perturbations"].values():
        assert entry["trials"] == 3
        assert entry["f1_micro_drop_pp"]["values"] == [0.0, 0.0, 0.0]
        assert entry["f1_macro_drop_pp"]["std"] == 0.0


def test_evaluate_reports_drop_with_spread(trained, dataset, tmp_path):
    assert cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                     "--data", str(dataset), "--drop-edges", "0.5", "--out", str(tmp_path)]) == 0
    entry = json.loads((tmp_path / "evaluation.json").read_text())["perturbations"]["drop_edges"]
    assert len(entry["f1_micro_drop_pp"]["values"]) == 5
    assert np.isfinite(entry["f1_micro_drop_pp"]["mean"])
    assert np.isfinite(entry["f1_micro_drop_pp"]["std"])


def test_evaluate_rejects_incompatible_data(trained, tmp_path):
    other = tmp_path / "other"
    assert cli.main(["generate", "--n", "60", "--classes", "3", "--rho", "0.5",
                     "--features", "8", "--out", str(other)]) == 0
    assert cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                     "--data", str(other), "--out", str(tmp_path / "e")]) == 3


def test_filter_response(trained, tmp_path):
    assert cli.main(["filter-response", "--checkpoint", str(trained / "checkpoint.json"),
                     "--grid-size", "33", "--out", str(tmp_path)]) == 0
    state, _ = model.load_checkpoint(trained / "checkpoint.json")
    for d in range(2):
        table = np.loadtxt(tmp_path / f"filter_response_{d}.csv", delimiter=",", skiprows=1)
        assert table.shape == (33, 5)
        assert table[0, 0] == 0.0 and table[-1, 0] == state.lambda_max[d]
        np.testing.assert_allclose(table[:, 3], table[:, 4], atol=1e-10)


def test_diagnose_outputs(trained, dataset, tmp_path):
    assert cli.main(["diagnose", "--checkpoint", str(trained / "checkpoint.json"),
                     "--data", str(dataset), "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "diagnose.json").read_text())
    assert len(rows) == 2
    for row in rows:
        assert row["bound_satisfied"] and row["logit_bound_satisfied"]
        assert row["l1_composed"] <= row["l1_low"] * row["l1_high"] + 1e-9


def test_spectral_norm_examples(rng):
    assert cli.spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-12)
    h = rng.standard_normal((5, 5))
    assert cli.spectral_norm(h) == pytest.approx(np.linalg.norm(h, 2), rel=1e-6)


def test_zero_high_branch_has_no_amplification(trained):
    state, _ = model.load_checkpoint(trained / "checkpoint.json")
    state.gammas = [GammaParams(0.0, np.zeros(g.K), d) for d, g in enumerate(state.gammas)]
    for row in cli.diagnose(state):
        assert row["l1_high"] == 0.0 and row["amplification"] == 0.0 and row["bound_satisfied"]
