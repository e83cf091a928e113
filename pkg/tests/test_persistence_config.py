import json

import numpy as np
import pytest
from pydantic import ValidationError

from glasscav import persistence as io
from glasscav.cavity_optics import CavityGeometry, ComplexFieldImage
from glasscav.config import ExperimentConfig, config_hash, format_errors, load_config
from glasscav.coupling import DensityProfile, PhysicalParams, assemble_J, j1_fixture
from glasscav.glass_analysis import Histogram
from glasscav.replica_dynamics import ReplicaEnsemble

# ---------------------------------------------------------------------------
# persistence


@pytest.fixture(scope="module")
def J1():
    return assemble_J(j1_fixture())


def test_coupling_round_trip(tmp_path, J1):
    files = io.write_coupling(tmp_path / "J.csv", J1, seed=3)
    assert [f.name for f in files] == ["J.csv", "J.json"]
    back = io.read_coupling(tmp_path / "J.csv")
    assert np.array_equal(back.J, J1.J)
    assert back.sites == J1.sites and back.geom == J1.geom
    side = io.read_json(tmp_path / "J.json")
    assert side["seed"] == 3 and side["digest"] == J1.digest()
    assert len(side["eigenvalues"]) == 16 and side["quadrature"]["nodes"] == 24


def test_external_coupling_without_sidecar(tmp_path):
    (tmp_path / "ext.csv").write_text("1.0,0.25\n0.25,1.0\n", encoding="utf-8")
    Jm = io.read_coupling(tmp_path / "ext.csv")
    assert Jm.n == 2 and Jm.sites == []
    (tmp_path / "bad.csv").write_text("1.0,0.25,0.1\n0.25,1.0,0.2\n", encoding="utf-8")
    with pytest.raises(io.FormatError):
        io.read_coupling(tmp_path / "bad.csv")
    with pytest.raises(io.FormatError):
        io.read_coupling(tmp_path / "missing.csv")


def test_ensemble_round_trip_and_external_files(tmp_path):
    s = np.random.default_rng(0).normal(size=(5, 4))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    ens = ReplicaEnsemble(s, np.arange(10, 15), "abc", 5e-3, None, {"engine": "descent"})
    io.write_ensemble(tmp_path / "e.csv", ens)
    back = io.read_ensemble(tmp_path / "e.csv")
    assert np.array_equal(back.spins, s)
    assert back.seeds.tolist() == list(range(10, 15)) and back.t_R == 5e-3 and back.J_ref == "abc"
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "s0,s1,s2,s3"
    (tmp_path / "raw.csv").write_text("1,1\n-2,0\n", encoding="utf-8")
    raw = io.read_ensemble(tmp_path / "raw.csv")
    assert np.allclose(raw.spins, [[np.sqrt(0.5), np.sqrt(0.5)], [-1.0, 0.0]])
    (tmp_path / "zero.csv").write_text("0,0\n1,0\n", encoding="utf-8")
    with pytest.raises(io.FormatError):
        io.read_ensemble(tmp_path / "zero.csv")


def test_histogram_round_trip(tmp_path):
    h = Histogram(np.linspace(-1, 1, 11), np.full(10, 0.1), np.linspace(0, 0.01, 10))
    io.write_histogram(tmp_path / "h.csv", h)
    back = io.read_histogram(tmp_path / "h.csv")
    assert np.allclose(back.bin_edges, h.bin_edges, atol=1e-15)
    assert np.array_equal(back.probabilities, h.probabilities)
    assert np.array_equal(back.stderr, h.stderr)


def _field():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    return ComplexFieldImage(g, 3.5, (2.5, 2.25), 10.0)


def test_binary_field_round_trip(tmp_path):
    img = _field()
    p = io.write_field_binary(tmp_path / "f.gcf", img)
    raw = p.read_bytes()
    assert raw[:8] == b"GCFIELD1" and len(raw) == 64 + 36 * 16
    back = io.read_field(p)
    assert np.array_equal(back.grid, img.grid)
    assert (back.pixel_pitch, back.center, back.w0_px) == (3.5, (2.5, 2.25), 10.0)
    (tmp_path / "bad.gcf").write_bytes(b"NOTFIELD" + raw[8:])
    with pytest.raises(io.FormatError):
        io.read_field(tmp_path / "bad.gcf")
    (tmp_path / "short.gcf").write_bytes(raw[:100])
    with pytest.raises(io.FormatError):
        io.read_field(tmp_path / "short.gcf")


def test_csv_field_round_trip(tmp_path):
    img = _field()
    files = io.write_field_csv(tmp_path / "f.csv", img)
    assert sorted(f.name for f in files) == ["f.json", "f_imag.csv", "f_real.csv"]
    for name in ("f.csv", "f_real.csv", "f_imag.csv"):
        back = io.read_field(tmp_path / name)
        assert np.array_equal(back.grid, img.grid)


def test_writes_are_byte_stable(tmp_path, J1):
    io.write_coupling(tmp_path / "a" / "J.csv", J1)
    io.write_coupling(tmp_path / "b" / "J.csv", J1)
    for name in ("J.csv", "J.json"):
        assert io.file_digest(tmp_path / "a" / name) == io.file_digest(tmp_path / "b" / name)


def test_manifest_verification(tmp_path):
    out = io.write_text(tmp_path / "x.txt", "hello\n")
    from datetime import datetime, timezone

    man = io.build_manifest("demo", {"out": str(tmp_path)}, "h", 0, [], [out], 1,
                            datetime.now(timezone.utc))
    assert io.verify_manifest(man) == {str(out): True}
    out.write_text("changed\n")
    assert io.verify_manifest(man) == {str(out): False}


# ---------------------------------------------------------------------------
# config


def test_default_config_builds_reference_objects():
    cfg = ExperimentConfig()
    assert cfg.geometry.build() == CavityGeometry()
    assert cfg.physical.build() == PhysicalParams()
    assert cfg.sites.build() == j1_fixture(DensityProfile(5.2, 5.4))
    assert cfg.schedule.build().t_R == pytest.approx(5e-3)


def test_config_round_trip_identity(tmp_path):
    cfg = ExperimentConfig.model_validate({
        "geometry": {"eta": 2, "w0": {"value": 0.035, "unit": "mm"}},
        "physical": {"g0": {"value": 1.47, "unit": "MHz"}},
        "sites": {"positions_um": [[0, 0], [50, 10]]},
        "dynamics": {"engine": "descent", "n_reps": 20},
    })
    text = cfg.canonical_json()
    again = ExperimentConfig.model_validate_json(text)
    assert again == cfg and again.canonical_json() == text
    assert config_hash(again) == config_hash(cfg)
    (tmp_path / "c.json").write_text(text, encoding="utf-8")
    assert load_config(tmp_path / "c.json") == cfg
    assert cfg.geometry.build().w0 == pytest.approx(35.0)
    assert len(cfg.sites.build()) == 2


def test_frequency_units():
    cyc = ExperimentConfig.model_validate({"physical": {"kappa": {"value": 140, "unit": "kHz"}}})
    ang = ExperimentConfig.model_validate(
        {"physical": {"kappa": {"value": 2 * np.pi * 0.14, "unit": "MHz", "angular": True}}})
    assert cyc.physical.build().kappa == pytest.approx(ang.physical.build().kappa, rel=1e-14)


@pytest.mark.parametrize("bad, path", [
    ({"geometry": {"foo": 1}}, "geometry.foo"),
    ({"geometry": {"w0": {"value": 35, "unit": "furlong"}}}, "geometry.w0.unit"),
    ({"dynamics": {"n_reps": 1}}, "dynamics.n_reps"),
    ({"unknown": {}}, "unknown"),
])
def test_config_errors_name_the_field(bad, path):
    with pytest.raises(ValidationError) as exc:
        ExperimentConfig.model_validate(bad)
    assert any(line.startswith(path + ":") for line in format_errors(exc.value))


def test_sites_need_exactly_one_source():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"sites": {"group": "A", "positions_um": [[0, 0]]}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"sites": {"group": None}})


def test_config_hash_changes_with_content():
    a = ExperimentConfig()
    b = ExperimentConfig.model_validate({"dynamics": {"base_seed": 1}})
    assert config_hash(a) != config_hash(b)
    assert json.loads(a.canonical_json())["geometry"]["M"] == 4
