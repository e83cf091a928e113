import json

import numpy as np
import pytest

from glasscav import persistence as io
from glasscav.cavity_optics import ComplexFieldImage
from glasscav.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from glasscav.glass_analysis import paramagnet_ensemble
from glasscav.replica_dynamics import ReplicaEnsemble


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A J1 matrix and a small simulated ensemble shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    assert run("jmatrix", "--out", root / "j", "--threads", 1) == EXIT_OK
    assert run("replicas", "--J", root / "j" / "J.csv", "--out", root / "r", "--n-reps", 12,
               "--t-ramp", "5ms", "--threads", 2) == EXIT_OK
    return root


def test_jmatrix_outputs(work):
    J = io.read_matrix_csv(work / "j" / "J.csv")
    assert J.shape == (16, 16) and np.array_equal(J, J.T)
    man = io.read_json(work / "j" / "manifest.json")
    assert man["command"] == "jmatrix" and man["threads"] == 1
    assert set(man["outputs"]) == {str(work / "j" / "J.csv"), str(work / "j" / "J.json")}


def test_jmatrix_repeat_and_group(tmp_path):
    assert run("jmatrix", "--group", "B", "--seed", 4, "--out", tmp_path / "a") == EXIT_OK
    assert run("jmatrix", "--group", "B", "--seed", 4, "--out", tmp_path / "b") == EXIT_OK
    assert io.read_matrix_csv(tmp_path / "a" / "J.csv").shape == (12, 12)
    for name in ("J.csv", "J.json"):
        assert io.file_digest(tmp_path / "a" / name) == io.file_digest(tmp_path / "b" / name)


def test_replicas_sidecar_records_schedule(work):
    side = io.read_json(work / "r" / "ensemble.json")
    assert side["meta"]["schedule"]["t_R"] == 5e-3
    assert side["n_reps"] == 12 and side["seeds"] == list(range(12))


def test_replicas_default_counts(tmp_path):
    assert run("jmatrix", "--group", "C", "--out", tmp_path / "j") == EXIT_OK
    assert run("replicas", "--J", tmp_path / "j" / "J.csv", "--engine", "descent",
               "--out", tmp_path / "r") == EXIT_OK
    assert io.read_ensemble(tmp_path / "r" / "ensemble.csv").n_reps == 100


def test_analyze_overlap_identical_replicas(tmp_path):
    s = np.tile(paramagnet_ensemble(8, 1, seed=0), (6, 1))
    io.write_ensemble(tmp_path / "same.csv", ReplicaEnsemble(s, np.arange(6)))
    assert run("analyze", "overlap", "--ensemble", tmp_path / "same.csv", "--n-boot", 20,
               "--out", tmp_path / "o") == EXIT_OK
    h = io.read_histogram(tmp_path / "o" / "overlap.csv")
    assert h.probabilities[0] == h.probabilities[-1] == 0.5
    assert np.count_nonzero(h.probabilities) == 2


def test_analyze_parisi_over_many_files(tmp_path):
    files = []
    for k in range(14):
        p = tmp_path / f"e{k}.csv"
        io.write_ensemble(p, ReplicaEnsemble(paramagnet_ensemble(8, 20, seed=k), np.arange(20)))
        files.append(p)
    assert run("analyze", "parisi", "--ensemble", *files, "--n-boot", 50, "--out", tmp_path / "p") == EXIT_OK
    h = io.read_histogram(tmp_path / "p" / "parisi.csv")
    assert h.bins == 50 and h.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert run("analyze", "qx", "--ensemble", *files, "--out", tmp_path / "q") == EXIT_OK
    fit = io.read_json(tmp_path / "q" / "qx_fit.json")
    assert fit["realizations"] == 14 and 0 <= fit["q_EA"] <= 1


def test_analyze_kcorr_paramagnet(tmp_path):
    assert run("analyze", "kcorr", "--paramagnet", "--out", tmp_path) == EXIT_OK
    k = io.read_json(tmp_path / "kcorr.json")
    assert abs(k["mean"] - 0.66) < 0.15 and k["triples"] == 200 * 199 * 198 // 6


@pytest.mark.parametrize("sub, produced", [
    ("cluster", "dendrogram.json"),
    ("entropy", "entropy.json"),
    ("magnetization", "magnetization.json"),
])
def test_analyze_other_subcommands(work, tmp_path, sub, produced):
    assert run("analyze", sub, "--ensemble", work / "r" / "ensemble.csv", "--n-boot", 20,
               "--out", tmp_path) == EXIT_OK
    data = io.read_json(tmp_path / produced)
    if sub == "entropy":
        row = next(iter(data.values()))
        assert 1.0 <= row["plugin"] <= 16 and row["t_R"] == 5e-3


def test_image_round_trip_and_symavg(work, tmp_path):
    J, E = work / "j" / "J.csv", work / "r" / "ensemble.csv"
    assert run("image", "synth", "--J", J, "--ensemble", E, "--row", 3, "--noise", 20,
               "--out", tmp_path / "s") == EXIT_OK
    assert run("image", "fit", "--J", J, "--field", tmp_path / "s" / "field.gcf",
               "--out", tmp_path / "f") == EXIT_OK
    assert io.read_json(tmp_path / "f" / "fit.json")["sign_agreement"] == 1.0
    assert run("image", "synth", "--J", J, "--ensemble", E, "--out", tmp_path / "c") == EXIT_OK
    assert run("image", "symavg", "--field", tmp_path / "c" / "field.gcf", "--out", tmp_path / "a") == EXIT_OK
    assert io.read_json(tmp_path / "a" / "symavg.json")["relative_change"] < 1e-3


def test_image_fit_zero_field(work, tmp_path, capsys):
    io.write_field_binary(tmp_path / "zero.gcf", ComplexFieldImage(np.zeros((64, 64)), 3.9, (31.5, 31.5), 9.0))
    assert run("image", "fit", "--J", work / "j" / "J.csv", "--field", tmp_path / "zero.gcf",
               "--out", tmp_path / "f") == EXIT_INVALID
    assert "degenerate" in capsys.readouterr().err


def test_randmat_command(tmp_path):
    assert run("randmat", "--n", 8, "--w", 0.0, 1.0, "--draws", 40, "--out", tmp_path / "a") == EXIT_OK
    assert run("randmat", "--n", 8, "--w", 0.0, 1.0, "--draws", 40, "--out", tmp_path / "b") == EXIT_OK
    text = (tmp_path / "a" / "sweep.csv").read_text()
    assert "8,0.0,p_neg,0.0," in text
    assert io.file_digest(tmp_path / "a" / "sweep.csv") == io.file_digest(tmp_path / "b" / "sweep.csv")


# ---------------------------------------------------------------------------
# exit codes and environment


def test_invalid_inputs_exit_one(tmp_path, capsys):
    assert run("randmat", "--w", -1, "--out", tmp_path) == EXIT_INVALID
    assert run("jmatrix", "--out", tmp_path, "--bogus") == EXIT_INVALID
    assert run("replicas", "--J", tmp_path / "missing.csv", "--out", tmp_path) == EXIT_INVALID
    (tmp_path / "bad.json").write_text(json.dumps({"geometry": {"foo": 1}}), encoding="utf-8")
    assert run("jmatrix", "--config", tmp_path / "bad.json", "--out", tmp_path) == EXIT_INVALID
    assert "geometry.foo" in capsys.readouterr().err
    assert run("image", "synth", "--out", tmp_path) == EXIT_INVALID
    assert run("image", "symavg", "--field", tmp_path / "x.gcf", "--noise", "loud", "--out", tmp_path) == EXIT_INVALID


def test_numerical_failure_exits_two(tmp_path):
    (tmp_path / "neg.csv").write_text("-1.0,0.0\n0.0,-1.0\n", encoding="utf-8")
    assert run("replicas", "--J", tmp_path / "neg.csv", "--n-reps", 2, "--out", tmp_path / "r") == EXIT_RUNTIME


def test_thread_env_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("GLASSCAV_THREADS", "3")
    assert run("randmat", "--n", 5, "--w", 1.0, "--draws", 10, "--threads", 1, "--out", tmp_path) == EXIT_OK
    assert io.read_json(tmp_path / "manifest.json")["threads"] == 3
    monkeypatch.setenv("GLASSCAV_THREADS", "many")
    assert run("randmat", "--n", 5, "--w", 1.0, "--draws", 10, "--out", tmp_path) == EXIT_INVALID


# ---------------------------------------------------------------------------
# reproduce


def test_reproduce_matches(work, tmp_path):
    for sub in ("j", "r"):
        assert run("reproduce", work / sub / "manifest.json", "--out", tmp_path / sub) == EXIT_OK


def test_reproduce_detects_changes(tmp_path):
    assert run("randmat", "--n", 5, "--w", 1.0, "--draws", 10, "--out", tmp_path / "a") == EXIT_OK
    man = io.read_json(tmp_path / "a" / "manifest.json")
    for p in man["outputs"]:
        man["outputs"][p] = "0" * 64
    io.write_json(tmp_path / "forged.json", man)
    assert run("reproduce", tmp_path / "forged.json") == EXIT_RUNTIME

    s = paramagnet_ensemble(6, 10, seed=0)
    io.write_ensemble(tmp_path / "e.csv", ReplicaEnsemble(s, np.arange(10)))
    assert run("analyze", "magnetization", "--ensemble", tmp_path / "e.csv", "--out", tmp_path / "m") == EXIT_OK
    io.write_ensemble(tmp_path / "e.csv", ReplicaEnsemble(-s, np.arange(10)))
    assert run("reproduce", tmp_path / "m" / "manifest.json") == EXIT_INVALID
