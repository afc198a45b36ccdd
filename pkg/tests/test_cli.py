import csv
import json
import math
import subprocess

import numpy as np
import pytest

from linxfer import theory
from linxfer.cli import main
from linxfer.theory import GeneralSettingParams, SimpleSettingParams

SWEEP_TOML = """\
[sweep]
gamma_tgt = 2.0
m_list = [1, 2]
d = 16
gamma_src_grid = [0.5, 2.0]
runs_per_point = 4
val_size = 100
test_size = 100
master_seed = 3
"""

BIASVAR_TOML = """\
[biasvar]
gamma_tgt = 2.0
m_list = [2]
gamma_src_grid = [0.5]
d = 16
main_runs = 8
sub_runs = 4
"""

FACTOR_TOML = """\
[tune_factor]
gamma_tgt = 2.0
m_list = [2]
d = 16
gamma_src_grid = [2.0]
runs_per_point = 3
val_size = 100
test_size = 100
rho_grid = [0.25, 0.5, 1.0]
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_sweep_csv_and_manifest(tmp_path):
    cfg = _write(tmp_path, "cfg.toml", SWEEP_TOML)
    out = str(tmp_path / "sweep.csv")
    assert main(["sweep", "--config", cfg, "--out", out]) == 0
    header, rows = _read_csv(out)
    assert header == ["gamma_src", "m", "method", "mean_error", "stderr",
                      "mean_alpha", "mean_rho", "n_runs"]
    assert len(rows) == 2 * (2 + 4)
    for row in rows:
        assert float(row[3]) > 0
        assert row[7] == "4"
    null_rows = [r for r in rows if r[2] == "null"]
    assert all(r[5] == "" and r[6] == "" for r in null_rows)  # no tuned knobs

    manifest = json.load(open(out + ".manifest.json"))
    assert manifest["command"] == "sweep"
    assert manifest["rows"] == len(rows)
    assert manifest["seed"] == 3
    assert manifest["columns"] == header
    assert manifest["settings"]["gamma_tgt"] == 2.0


def test_sweep_rerun_byte_identical_and_seed_sensitive(tmp_path):
    cfg = _write(tmp_path, "cfg.toml", SWEEP_TOML)
    a, b, c = (str(tmp_path / n) for n in ("a.csv", "b.csv", "c.csv"))
    assert main(["sweep", "--config", cfg, "--out", a]) == 0
    assert main(["sweep", "--config", cfg, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    assert main(["sweep", "--config", cfg, "--out", c, "--seed", "9"]) == 0
    assert open(a, "rb").read() != open(c, "rb").read()
    assert json.load(open(c + ".manifest.json"))["seed"] == 9


def test_sweep_runs_override_and_threads_env(tmp_path, monkeypatch):
    cfg = _write(tmp_path, "cfg.toml", SWEEP_TOML)
    out = str(tmp_path / "r.csv")
    assert main(["sweep", "--config", cfg, "--out", out, "--runs", "6"]) == 0
    _, rows = _read_csv(out)
    assert all(r[7] == "6" for r in rows)

    one = str(tmp_path / "one.csv")
    envd = str(tmp_path / "envd.csv")
    assert main(["sweep", "--config", cfg, "--out", one, "--threads", "1"]) == 0
    monkeypatch.setenv("LINXFER_THREADS", "3")
    assert main(["sweep", "--config", cfg, "--out", envd]) == 0
    assert open(one, "rb").read() == open(envd, "rb").read()
    assert json.load(open(envd + ".manifest.json"))["threads"] == 3


def test_theory_simple_values_and_threshold_flag(tmp_path):
    cfg = _write(tmp_path, "t.toml", """\
[theory]
gamma_tgt = 2.0
m_list = [1, 3]
gamma_src_grid = [0.5, 1.0, 2.0]
sigma_eta_sq = 0.2
sigma_xi_sq = 0.3
sigma_eps_sq = 0.1
""")
    out = str(tmp_path / "t.csv")
    assert main(["theory", "--config", cfg, "--out", out]) == 0
    header, rows = _read_csv(out)
    assert header == ["gamma_src", "m", "mode", "error", "flag"]
    assert len(rows) == 6
    for row in rows:
        g, m = float(row[0]), int(row[1])
        assert row[2] == "simple"
        if g == 1.0:
            assert row[3] == "" and row[4] == "threshold"
        else:
            p = SimpleSettingParams(gamma_tgt=2.0, gamma_src=g, m=m, b=1.0,
                                    sigma_eta_sq=0.2, sigma_xi_sq=0.3,
                                    sigma_eps_sq=0.1)
            assert float(row[3]) == pytest.approx(
                theory.error_simple_asymptotic(p), rel=1e-15)
            assert row[4] == ""


def test_theory_effective_ratio_snapping(tmp_path):
    cfg = _write(tmp_path, "t.toml", """\
[theory]
gamma_tgt = 2.5
m_list = [2]
gamma_src_grid = [2.5]
d = 12
effective = true
""")
    out = str(tmp_path / "t.csv")
    assert main(["theory", "--config", cfg, "--out", out]) == 0
    _, rows = _read_csv(out)
    snapped = 12 / math.floor(12 / 2.5)  # = 3.0, the realizable ratio
    p = SimpleSettingParams(gamma_tgt=snapped, gamma_src=snapped, m=2, b=1.0,
                            sigma_eta_sq=0.5, sigma_xi_sq=0.5, sigma_eps_sq=0.1)
    assert float(rows[0][0]) == 2.5  # the nominal grid value is reported
    assert float(rows[0][3]) == pytest.approx(
        theory.error_simple_asymptotic(p), rel=1e-15)


def test_theory_debias_mode(tmp_path):
    cfg = _write(tmp_path, "t.toml", """\
[theory]
mode = "debias"
gamma_tgt = 4.0
m_list = [10]
gamma_src_grid = [0.5, 4.0]
sigma_eta_sq = 0.05
sigma_xi_sq = 0.05
""")
    out = str(tmp_path / "t.csv")
    assert main(["theory", "--config", cfg, "--out", out]) == 0
    _, rows = _read_csv(out)
    assert rows[0][3] == "" and rows[0][4] == "threshold"  # undefined below 1
    p = SimpleSettingParams(gamma_tgt=4.0, gamma_src=4.0, m=10, b=1.0,
                            sigma_eta_sq=0.05, sigma_xi_sq=0.05,
                            sigma_eps_sq=0.1)
    assert float(rows[1][3]) == pytest.approx(
        theory.debias_error_asymptotic(p), rel=1e-15)


def test_theory_general_mode_fixed_alpha_and_formula_band(tmp_path):
    cfg = _write(tmp_path, "t.toml", """\
[theory]
mode = "general"
gamma_tgt = 2.0
m_list = [2]
gamma_src_grid = [0.5]
d = 8
alpha = 0.5
assumed = "identity"
""")
    out = str(tmp_path / "t.csv")
    assert main(["theory", "--config", cfg, "--out", out]) == 0
    _, rows = _read_csv(out)
    eye = np.eye(8)
    params = GeneralSettingParams(
        d=8, gamma_tgt=2.0, Sigma_x=eye, true_relations=[eye] * 2,
        assumed_relations=[eye] * 2, gamma_srcs=[0.5] * 2, b=1.0,
        sigma_eta_sqs=[0.5] * 2, sigma_xi_sqs=[0.5] * 2, sigma_eps_sq=0.1)
    assert float(rows[0][3]) == pytest.approx(
        theory.expected_error_general(params, 0.5), rel=1e-15)

    # formula weight lands on the interpolation band: flagged, empty cell
    band = _write(tmp_path, "band.toml", """\
[theory]
mode = "general"
gamma_tgt = 2.0
m_list = [2]
gamma_src_grid = [1.1428571428571428]
d = 8
""")
    out2 = str(tmp_path / "band.csv")
    assert main(["theory", "--config", band, "--out", out2]) == 0
    _, rows2 = _read_csv(out2)
    assert rows2[0][3] == "" and rows2[0][4] == "threshold"


def test_biasvar_command(tmp_path):
    cfg = _write(tmp_path, "bv.toml", BIASVAR_TOML)
    out = str(tmp_path / "bv.csv")
    assert main(["biasvar", "--config", cfg, "--out", out]) == 0
    header, rows = _read_csv(out)
    assert header == ["gamma_src", "m", "method", "bias_sq", "variance",
                      "total", "residual"]
    assert len(rows) == 1
    assert float(rows[0][6]) < 1e-12
    assert float(rows[0][3]) + float(rows[0][4]) + 0.1 == pytest.approx(
        float(rows[0][5]), abs=1e-12)


def test_tune_factor_command(tmp_path):
    cfg = _write(tmp_path, "tf.toml", FACTOR_TOML)
    out = str(tmp_path / "tf.csv")
    assert main(["tune-factor", "--config", cfg, "--out", out]) == 0
    header, rows = _read_csv(out)
    assert header == ["gamma_src", "m", "mean_rho", "stderr_rho",
                      "rho_inv_gamma", "n_runs"]
    assert len(rows) == 1
    assert float(rows[0][4]) == pytest.approx(theory.rho(8, 16))
    assert rows[0][5] == "3"


def test_check_command_output(capsys):
    assert main(["check", "--m", "5", "--n-tilde", "16", "--d", "64",
                 "--sigma-eta-sq", "0.1", "--sigma-xi-sq", "0.2",
                 "--b", "1.0"]) == 0
    text = capsys.readouterr().out
    assert "parameters: m=5 n_tilde=16 d=64" in text
    assert "transfer vs optimally tuned ridge:" in text
    assert "scale-debiased transfer vs plain transfer:" in text
    assert text.count("verdict:") == 2
    assert "minimum model count for benefit" in text
    lhs, rhs = theory.negative_transfer_sides(5, 16, 64, 0.1, 0.2, 1.0)
    assert f"{lhs:.17g}" in text and f"{rhs:.17g}" in text


def test_check_command_band_and_underparam(capsys):
    assert main(["check", "--m", "2", "--n-tilde", "64", "--d", "64",
                 "--sigma-eta-sq", "0.1", "--sigma-xi-sq", "0.2",
                 "--b", "1.0"]) == 0
    text = capsys.readouterr().out
    assert "undefined:" in text
    assert "not applicable" in text

    assert main(["check", "--m", "2", "--n-tilde", "64", "--d", "16",
                 "--sigma-eta-sq", "0.1", "--sigma-xi-sq", "0.2",
                 "--b", "1.0"]) == 0
    text = capsys.readouterr().out
    assert "verdict:" in text  # ridge comparison defined for underparam sources
    assert "not applicable" in text


def test_check_rejects_bad_values(capsys):
    assert main(["check", "--m", "0", "--n-tilde", "16", "--d", "64",
                 "--sigma-eta-sq", "0.1", "--sigma-xi-sq", "0.2",
                 "--b", "1.0"]) == 2
    assert "error:" in capsys.readouterr().err


@pytest.mark.parametrize("toml_text,needle", [
    ("[sweep]\nm_list = [1]\n", "gamma_tgt"),                    # missing key
    ("[sweeps]\ngamma_tgt = 2.0\n", "sweeps"),                   # bad section
    (SWEEP_TOML + 'bogus_key = 1\n', "bogus_key"),               # unknown key
    (SWEEP_TOML.replace("2.0", '"two"', 1), "gamma_tgt"),        # bad type
    ("[sweep\n", ""),                                            # broken TOML
])
def test_sweep_config_errors_exit_2(tmp_path, capsys, toml_text, needle):
    cfg = _write(tmp_path, "bad.toml", toml_text)
    out = str(tmp_path / "x.csv")
    assert main(["sweep", "--config", cfg, "--out", out]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert needle in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    out = str(tmp_path / "x.csv")
    assert main(["sweep", "--config", str(tmp_path / "nope.toml"),
                 "--out", out]) == 2
    assert "error:" in capsys.readouterr().err


def test_theory_bad_mode_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "t.toml",
                 '[theory]\nmode = "wat"\ngamma_tgt = 2.0\nm_list = [1]\n')
    assert main(["theory", "--config", cfg, "--out",
                 str(tmp_path / "t.csv")]) == 2
    assert "mode" in capsys.readouterr().err


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_verbose_flag_accepted(capsys):
    assert main(["--verbose", "check", "--m", "2", "--n-tilde", "8",
                 "--d", "32", "--sigma-eta-sq", "0.1", "--sigma-xi-sq", "0.1",
                 "--b", "1.0"]) == 0


def test_console_script_help():
    proc = subprocess.run(["linxfer", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "sweep" in proc.stdout and "check" in proc.stdout
