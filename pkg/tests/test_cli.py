import csv
import io
import json
import math
from pathlib import Path

import pytest

from spdc_herald.cli import main
from spdc_herald.config import ConfigError, load_config, load_schema
from spdc_herald.dispersion import make_waves, ppktp_type2
from spdc_herald.sweep import SweepContext, normalization_baseline

ROOT = Path(__file__).resolve().parents[1]
EXAMPLES = ROOT / "docs" / "examples"

TABLE_DUAL = {
    "setup": "dual",
    "window": 1e-9,
    "arm_a": {"eta_s": 0.714, "eta_d": 0.679, "dark_rate": 800.0},
    "arm_b": {"eta_s": 0.674, "eta_d": 0.371, "dark_rate": 6000.0},
}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_shipped_schema_matches_docs():
    assert json.loads((ROOT / "docs" / "config.schema.json").read_text()) == load_schema()


@pytest.mark.parametrize("path", sorted(EXAMPLES.glob("*.json")), ids=lambda p: p.name)
def test_example_configs_validate(path):
    load_config(path)


def test_schema_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="focus"):
        load_config(write(tmp_path, "c.json", {"focus": {"xi_q": 1}}))


def test_index_constant_model(tmp_path, capsys):
    flat = {"form": "constant", "coefficients": [1.6], "range_m": [4e-7, 3.5e-6]}
    cfg = {"crystal": {"models": {"pump": {**flat, "axis": "Y"}, "a": {**flat, "axis": "Z"}, "b": {**flat, "axis": "Y"}}}}
    code, out, _ = run(capsys, "index", "-c", write(tmp_path, "c.json", cfg))
    assert code == 0
    for r in rows(out):
        assert float(r["n"]) == 1.6
        assert float(r["n_group"]) == pytest.approx(1.6, rel=1e-12)


def test_index_ktp_bands(capsys):
    code, out, _ = run(capsys, "index")
    assert code == 0
    by_role = {r["role"]: r for r in rows(out)}
    assert 1.745 <= float(by_role["pump"]["n"]) <= 1.765
    assert float(by_role["a"]["n"]) > float(by_role["b"]["n"])


def test_index_missing_model(tmp_path, capsys):
    code, _, err = run(capsys, "index", "-c", write(tmp_path, "c.json", {"crystal": {"models": {"a": "ktp-q"}}}))
    assert code == 2
    assert "ktp-q" in err


def test_missing_config_file_is_io_error(tmp_path, capsys):
    code, _, _ = run(capsys, "index", "-c", tmp_path / "nope.json")
    assert code == 3


def test_rates_zero_deff(tmp_path, capsys):
    cfg = {"crystal": {"d_eff": 0.0}, "focus": {"xi_p": 0.0243, "xi_a": 0.19}}
    code, out, _ = run(capsys, "rates", "-c", write(tmp_path, "c.json", cfg))
    assert code == 0
    r = rows(out)[0]
    assert float(r["R_a"]) == float(r["R_b"]) == float(r["R_c"]) == 0.0


def test_rates_peak_matches_baseline(capsys):
    code, out, _ = run(capsys, "rates", "-c", EXAMPLES / "peak_focus_rates.json")
    assert code == 0
    c = ppktp_type2()
    base = normalization_baseline(SweepContext(c, make_waves(c, 780e-9)))
    r = rows(out)[0]
    assert float(r["R_c"]) == pytest.approx(base, rel=1e-12)
    assert float(r["norm_pair_rate"]) == pytest.approx(1.0, rel=1e-12)


def test_rates_validity_warning(tmp_path, capsys):
    cfg = {"focus": {"xi_p": 50.0, "xi_a": 0.5}}
    code, out, err = run(capsys, "rates", "-c", write(tmp_path, "c.json", cfg))
    assert code == 0
    assert "tight focus" in err
    assert len(rows(out)) == 1


def test_rates_xi_p_override_and_json(capsys):
    code, out, _ = run(capsys, "rates", "-c", EXAMPLES / "dual_operating_point.json", "--xi-p", "0.0161", "--format", "json")
    assert code == 0
    rec = json.loads(out)[0]
    assert rec["xi_p"] == 0.0161


def test_rates_needs_focus(capsys):
    code, _, err = run(capsys, "rates")
    assert code == 2 and "focus" in err


def test_sweep_three_families(tmp_path, capsys):
    out_path = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "sweep", "-c", EXAMPLES / "focus_sweep.json", "--out", out_path)
    assert code == 0
    data = rows(out_path.read_text())
    assert len(data) == 3 * 61
    assert sorted({float(r["xi_p"]) for r in data}) == [0.0161, 0.0255, 0.0486]


def test_sweep_single_point(tmp_path, capsys):
    cfg = {"sweep": {"xi_p": [0.0284], "xi_a_grid": [0.5]}}
    code, out, _ = run(capsys, "sweep", "-c", write(tmp_path, "c.json", cfg))
    assert code == 0 and len(rows(out)) == 1


def test_sweep_loose_pump_eta_column(tmp_path, capsys):
    cfg = {"sweep": {"xi_p": [0.0284], "xi_a_grid": {"min": 0.01, "max": 10, "n": 121}}}
    code, out, _ = run(capsys, "sweep", "-c", write(tmp_path, "c.json", cfg))
    assert max(float(r["eta_c"]) for r in rows(out)) >= 0.96


def test_sweep_unwritable(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "-c", EXAMPLES / "focus_sweep.json", "--out", tmp_path / "no" / "dir" / "x.csv")
    assert code == 3


def test_sweep_round_trip_precision(tmp_path, capsys):
    cfg = {"sweep": {"xi_p": [0.1], "xi_a_grid": [0.1234567890123]}}
    code, out, _ = run(capsys, "sweep", "-c", write(tmp_path, "c.json", cfg))
    assert float(rows(out)[0]["xi_a"]) == 0.1234567890123


def test_sweep_byte_identical(tmp_path, capsys):
    a = run(capsys, "sweep", "-c", EXAMPLES / "focus_sweep.json")[1]
    b = run(capsys, "sweep", "-c", EXAMPLES / "focus_sweep.json")[1]
    assert a == b


def test_tradeoff_unreachable_marker(capsys):
    code, out, err = run(capsys, "tradeoff", "-c", EXAMPLES / "tradeoff.json")
    assert code == 0
    last = rows(out)[-1]
    assert last["reachable"] == "False" and math.isnan(float(last["xi_p"]))
    assert "unreachable" in err


def simulate_dual(tmp_path, capsys, **overrides):
    cfg = json.loads((EXAMPLES / "dual_operating_point.json").read_text())
    cfg["simulation"].update(overrides)
    out = tmp_path / "sim.csv"
    code, _, err = run(capsys, "simulate", "-c", write(tmp_path, "c.json", cfg), "--out", out)
    assert code == 0
    return cfg, out, err


def test_simulate_deterministic(tmp_path, capsys):
    _, out, _ = simulate_dual(tmp_path, capsys, duration=0.5)
    first = out.read_bytes(), Path(str(out) + ".truth.json").read_bytes()
    _, out, _ = simulate_dual(tmp_path, capsys, duration=0.5)
    assert (out.read_bytes(), Path(str(out) + ".truth.json").read_bytes()) == first


def test_simulate_dual_schema_and_accidentals(tmp_path, capsys):
    cfg, out, _ = simulate_dual(tmp_path, capsys, duration=2.0, repeats=2)
    data = rows(out.read_text())
    assert list(data[0])[:8] == ["label", "R_a", "R_b", "R_c", "D_a", "D_b", "D_c", "dt_s"]
    assert len(data) == 2 and data[0]["R_a"] != data[1]["R_a"]
    T = 2.0
    for r in data:
        photons_a = float(r["R_a"]) - 800.0
        photons_b = float(r["R_b"]) - 6000.0
        expected = 2e-9 * (800 * photons_b + 6000 * photons_a + 800 * 6000)
        sigma = math.sqrt(expected * T) / T
        assert abs(float(r["accidental_cps"]) - expected) <= 3 * sigma


def test_simulate_statistics_warning(tmp_path, capsys):
    _, _, err = simulate_dual(tmp_path, capsys, duration=1e-3)
    assert "true coincidences expected" in err


def test_simulate_requires_seed(tmp_path, capsys):
    cfg = json.loads((EXAMPLES / "dual_operating_point.json").read_text())
    del cfg["seed"]
    code, _, err = run(capsys, "simulate", "-c", write(tmp_path, "c.json", cfg))
    assert code == 2 and "seed" in err


def test_simulate_pair_trials(tmp_path, capsys):
    cfg = {"seed": 3, "detection": {"setup": "single", "arm_a": {"eta_s": 1.0, "eta_d": 0.5}},
           "simulation": {"mode": "pair-trials", "trials": 200000, "rates": {"R_a": 1, "R_b": 1, "R_c": 1}}}
    out = tmp_path / "pt.csv"
    code, _, _ = run(capsys, "simulate", "-c", write(tmp_path, "c.json", cfg), "-o", out)
    assert code == 0
    truth = json.loads(Path(str(out) + ".truth.json").read_text())
    est = {r["outcome"]: (float(r["probability"]), float(r["stderr"])) for r in rows(out.read_text())}
    for lab, key in (("2", "p2"), ("1", "p1"), ("0", "p0")):
        p, s = est[lab]
        assert abs(p - truth["analytic"][key]) <= 3 * s


def test_invert_round_trip_from_simulation(tmp_path, capsys):
    cfg, sim, _ = simulate_dual(tmp_path, capsys, duration=5.0)
    code, out, _ = run(capsys, "invert", "-c", write(tmp_path, "c.json", cfg), "-m", sim)
    assert code == 0
    truth = json.loads(Path(str(sim) + ".truth.json").read_text())
    rec = rows(out)[0]
    sigma = truth["records"][0]["eta_c_stderr"]
    assert abs(float(rec["eta_c"]) - truth["eta_c"]) <= 3 * sigma
    R_c = truth["config"]["R_c"] * truth["config"]["pump_power"]
    n_c = truth["records"][0]["counts"]["coincidences"]
    assert abs(float(rec["R_c"]) - R_c) <= 3 * math.sqrt(n_c) / 5.0 / (0.714 * 0.679 * 0.674 * 0.371)


def test_invert_zero_efficiency(tmp_path, capsys):
    det = json.loads(json.dumps(TABLE_DUAL))
    det["arm_b"]["eta_d"] = 0.0
    meas = write(tmp_path, "m.csv", "label,R_a,R_b,R_c,D_a,D_b,D_c,dt_s\nx,1000,1000,10,0,0,0,1e-9\n")
    code, _, _ = run(capsys, "invert", "-c", write(tmp_path, "c.json", {"detection": det}), "-m", meas)
    assert code == 2


def test_invert_row_errors_and_single_schema(tmp_path, capsys):
    cfg = {"detection": {"setup": "single", "arm_a": {"eta_s": 0.915, "eta_d": 0.563, "dark_rate": 2000.0}}}
    meas = write(
        tmp_path,
        "m.csv",
        "label,R_t,R_c,D,D_c,dt_s\n"
        "good,60000,5000,2000,,1e-9\n"
        "bad,abc,5000,2000,,1e-9\n"
        "dark,1000,10,2000,0,1e-9\n",
    )
    code, out, err = run(capsys, "invert", "-c", write(tmp_path, "c.json", cfg), "-m", meas)
    assert code == 0
    data = rows(out)
    assert [r["label"] for r in data] == ["good", "bad", "dark"]
    assert float(data[0]["eta_c"]) > 0 and data[0]["warnings"] == ""
    assert data[1]["warnings"].startswith("error") and data[2]["warnings"].startswith("error")
    assert "record 'bad'" in err


def test_invert_all_rows_fail(tmp_path, capsys):
    meas = write(tmp_path, "m.csv", "label,R_a,R_b,R_c,D_a,D_b,D_c,dt_s\nx,10,10,5,800,6000,0,1e-9\n")
    code, _, _ = run(capsys, "invert", "-c", write(tmp_path, "c.json", {"detection": TABLE_DUAL}), "-m", meas)
    assert code == 2


def test_invert_json_measurements(tmp_path, capsys):
    recs = [{"label": "j", "R_a": 1e5, "R_b": 6e4, "R_c": 2e4, "D_a": 800, "D_b": 6000, "D_c": None, "dt_s": 1e-9}]
    code, out, _ = run(capsys, "invert", "-c", write(tmp_path, "c.json", {"detection": TABLE_DUAL}),
                       "-m", write(tmp_path, "m.json", recs))
    assert code == 0 and rows(out)[0]["label"] == "j"


def fit_file(tmp_path, d_eff, points):
    c = ppktp_type2(d_eff=d_eff)
    ctx = SweepContext(c, make_waves(c, 780e-9))
    lines = ["xi_p,xi_a,rate,kind"]
    for xp, xa in points:
        lines.append(f"{xp!r},{xa!r},{ctx.pair_rate(xp, xa)!r},R_c")
    return write(tmp_path, "fit.csv", "\n".join(lines) + "\n")


def test_fit_deff_synthetic(tmp_path, capsys):
    meas = fit_file(tmp_path, 1.82e-12, [(0.0486, 0.11), (0.0255, 0.2), (0.0161, 0.63)])
    code, out, _ = run(capsys, "fit-deff", "-m", meas)
    assert code == 0
    assert float(rows(out)[0]["d_eff_pm_per_V"]) == pytest.approx(1.82, rel=1e-6)


def test_fit_deff_single_record(tmp_path, capsys):
    meas = fit_file(tmp_path, 2.5e-12, [(0.1, 0.4)])
    code, out, _ = run(capsys, "fit-deff", "-m", meas)
    assert float(rows(out)[0]["d_eff_m_per_V"]) == pytest.approx(2.5e-12, rel=1e-12)


def test_fit_deff_empty_and_degenerate(tmp_path, capsys):
    assert run(capsys, "fit-deff", "-m", write(tmp_path, "e.csv", "xi_p,xi_a,rate\n"))[0] == 2
    assert run(capsys, "fit-deff", "-m", write(tmp_path, "z.csv", "xi_p,xi_a,rate\n0.1,0.2,0\n"))[0] == 4
