import csv
import json

import numpy as np
import pytest

from nvquench import cli
from nvquench.spectra import read_manifest, write_manifest


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--pairs", "4", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_pair_seed_is_stable():
    assert cli.pair_seed(0, 0) == cli.pair_seed(0, 0)
    seeds = {cli.pair_seed(1, i) for i in range(100)}
    assert len(seeds) == 100
    assert cli.pair_seed(1, 3) != cli.pair_seed(2, 3)


def test_analyze_batch(synth_dir, tmp_path):
    code = cli.main(["analyze", str(synth_dir / "manifest.json"), "--out", str(tmp_path / "a")])
    assert code == 0
    rows = _rows(tmp_path / "a" / "summary.csv")
    assert len(rows) == 4
    assert list(rows[0]) == list(cli.SUMMARY_COLUMNS)
    eps = np.array([float(r["epsilon_mean"]) for r in rows])
    assert np.all(np.abs(eps - 0.15) < 0.05)
    rep = json.loads((tmp_path / "a" / "reports" / "pair_0002.json").read_text())
    assert rep["index"] == 2 and "posterior" in rep and "linewidth" in rep
    assert "jobs" not in rep["config"]
    assert json.loads((tmp_path / "a" / "failures.json").read_text()) == []


def test_analyze_is_reproducible(synth_dir, tmp_path):
    for name in ("a", "b"):
        cli.main(["analyze", str(synth_dir / "manifest.json"), "--seed", "9",
                  "--out", str(tmp_path / name)])
    assert ((tmp_path / "a" / "summary.csv").read_bytes()
            == (tmp_path / "b" / "summary.csv").read_bytes())


def test_corrupt_pair_is_isolated(synth_dir, tmp_path):
    recs = read_manifest(synth_dir / "manifest.json")
    bad = tmp_path / "bad_off.csv"
    bad.write_text("wavelength_nm,counts\n540.0,1.0\n540.1,nan\n", encoding="utf-8")
    recs[1] = type(recs[1])(bad, recs[1].on, recs[1].field_mT, None, None, None)
    write_manifest(recs, tmp_path / "m.json")
    code = cli.main(["analyze", str(tmp_path / "m.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    failures = json.loads((tmp_path / "o" / "failures.json").read_text())
    assert [f["index"] for f in failures] == [1]
    assert "row 1" in failures[0]["error"]
    assert len(_rows(tmp_path / "o" / "summary.csv")) == 3


def test_missing_manifest_is_an_error(tmp_path, capsys):
    assert cli.main(["analyze", "--out", str(tmp_path)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_models_writes_curves(tmp_path):
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({"wl_lo": 500, "wl_hi": 540, "wl_step": 10,
                                 "B_max": 50, "B_step": 25}))
    assert cli.main(["models", "--sweep", str(sweep), "--out", str(tmp_path)]) == 0
    pl = _rows(tmp_path / "pl_fraction_vs_wavelength.csv")
    assert [float(r["wavelength_nm"]) for r in pl] == [500, 510, 520, 530, 540]
    con = _rows(tmp_path / "contrasts_vs_wavelength.csv")
    assert all(float(r["delta_fixed"]) == 0.0 for r in con)
    pops = _rows(tmp_path / "populations_vs_field.csv")
    assert len(pops) == 3
    total = sum(float(pops[0][k]) for k in ("n_g0", "n_g1", "n_e0", "n_e1", "n_s"))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_unmix_and_linewidth_commands(synth_dir, tmp_path):
    rec = read_manifest(synth_dir / "manifest.json")[0]
    assert cli.main(["unmix", str(rec.off), str(rec.on), "--epsilon", "0.15", "--delta", "-0.03",
                     "-C", "100", "--out", str(tmp_path)]) == 0
    sep = _rows(tmp_path / "separated.csv")
    assert list(sep[0]) == ["wavelength_nm", "i_minus", "i_zero"]
    assert cli.main(["unmix", str(rec.off), str(rec.on), "--epsilon", "0.1", "--delta", "0.1",
                     "--out", str(tmp_path)]) == 2
    assert cli.main(["linewidth", str(rec.off), str(rec.on), "-C", "100",
                     "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "linewidth.json").read_text())
    assert abs(fit["alpha"]) < 0.05


def test_config_file_and_overrides(synth_dir, tmp_path):
    cfg = {"manifest": str(synth_dir / "manifest.json"), "seed": 4, "jobs": 1,
           "prior": {"n_particles": 500}, "out": str(tmp_path / "x")}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["analyze", "--config", str(tmp_path / "c.json"),
                     "--out", str(tmp_path / "y")]) == 0
    assert (tmp_path / "y" / "summary.csv").exists()
    rep = json.loads((tmp_path / "y" / "reports" / "pair_0000.json").read_text())
    assert rep["config"]["prior"]["n_particles"] == 500
    assert rep["config"]["seed"] == 4
    (tmp_path / "bad.json").write_text(json.dumps({"sed": 1}))
    assert cli.main(["analyze", "--config", str(tmp_path / "bad.json")]) == 2


def test_run_config_round_trip():
    c = cli.RunConfig(seed=3, jobs=2, linewidth_window=(573.0, 577.0))
    back = cli.RunConfig.from_dict(c.to_dict())
    assert back.to_dict() == c.to_dict()
    with pytest.raises(ValueError):
        cli.RunConfig(jobs=0)


def test_synth_grid_size():
    combos = len(cli.GRID_TEMPERATURES_K) * len(cli.GRID_WAVELENGTHS_NM) * len(cli.GRID_POWERS_UW)
    assert combos == 405
