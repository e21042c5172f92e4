import json

import pytest

from sstr.cli import (
    OPTIMIZE_COLUMNS,
    SWEEP_COLUMNS,
    execute,
    main,
    parse_spec,
    parse_spec_text,
    read_csv,
)
from sstr.errors import OutOfRange, ParseError

EPS_SWEEP = """\
# access probability sweep
N = 2000
M = 128
T = 200
p_a = 0.1
snr_db = 10
W = 4
L = 110
beamformer = MRC
sweep = epsilon
values = 0.05:1.0:0.05
"""

LENGTH_SWEEP = """\
N = 2000
M = 128
T = 200
p_a = 0.1
snr_db = 10
W = 4
epsilon = 0.5
sweep = L
values = 1:199:1
"""


def write(tmp_path, text, name="exp.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestParsing:
    def test_sweep_file(self, tmp_path):
        spec = parse_spec(write(tmp_path, EPS_SWEEP))
        assert spec.command == "sweep" and spec.sweep == "epsilon"
        assert len(spec.values) == 20
        assert spec.values[0] == 0.05 and spec.values[-1] == 1.0
        assert spec.config.gamma == pytest.approx(10.0)

    def test_unknown_sweep_parameter(self):
        with pytest.raises(ParseError) as info:
            parse_spec_text(EPS_SWEEP.replace("sweep = epsilon", "sweep = Q"))
        assert info.value.key == "sweep" and info.value.line == 10

    def test_unknown_key(self):
        with pytest.raises(ParseError) as info:
            parse_spec_text(EPS_SWEEP + "Q = 3\n")
        assert info.value.key == "Q"

    def test_simulate_needs_two_trials(self):
        with pytest.raises(OutOfRange):
            parse_spec_text(EPS_SWEEP + "trials = 1\n", "simulate")
        with pytest.raises(OutOfRange):
            parse_spec_text(EPS_SWEEP, "simulate")

    @pytest.mark.parametrize("bad", ["N = two", "M 128", "N = 5\nN = 6", "values = 3:1:1",
                                     "fixed_pilots = maybe"])
    def test_malformed(self, bad):
        with pytest.raises(ParseError):
            parse_spec_text(EPS_SWEEP.replace("N = 2000", bad))

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            parse_spec_text(EPS_SWEEP.replace("p_a = 0.1", "p_a = 2"))
        with pytest.raises(OutOfRange):
            parse_spec_text(LENGTH_SWEEP.replace("1:199:1", "1:200:1"))


class TestExecute:
    def test_analytic_length_sweep(self, tmp_path):
        header, rows, manifest = execute(parse_spec_text(LENGTH_SWEEP, "analytic"))
        assert header == SWEEP_COLUMNS
        assert len(rows) == 199 and manifest["rows"] == 199
        mc = header.index("sstr_mc")
        assert all(r[mc] == "" for r in rows)
        assert all(r[header.index("runtime_s")] == "" for r in rows)

    def test_optimize_single_row(self):
        text = LENGTH_SWEEP.replace("sweep = L\nvalues = 1:199:1\n", "optimize = epsilon\nL = 110\n")
        header, rows, _ = execute(parse_spec_text(text, "optimize"))
        assert header == OPTIMIZE_COLUMNS and len(rows) == 1
        row = dict(zip(header, rows[0]))
        assert row["method"] == "cgp" and row["restarts"] == "10"
        assert 0.0 < float(row["epsilon_opt"]) < 1.0

    def test_small_simulation(self):
        text = ("N = 40\nM = 16\nT = 40\np_a = 0.2\nsnr_db = 15\nL = 20\nepsilon = 1\n"
                "beamformer = ZF\ntrials = 4\n")
        header, rows, _ = execute(parse_spec_text(text, "simulate"))
        row = dict(zip(header, rows[0]))
        assert float(row["sstr_mc"]) >= 0.0 and row["mc_half_width"] != ""


class TestMain:
    def test_csv_round_trip_and_determinism(self, tmp_path):
        spec = write(tmp_path, EPS_SWEEP)
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["analytic", "--spec", str(spec), "--out", str(out1)]) == 0
        assert main(["analytic", "--spec", str(spec), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert b"\r\n" not in out1.read_bytes()
        rows = read_csv(out1)
        assert len(rows) == 20 and rows[0]["sstr_mc"] is None
        manifest = json.loads((tmp_path / "a.manifest.json").read_text())
        assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 64
        assert manifest["version"]

    def test_seed_override_is_recorded(self, tmp_path):
        spec = write(tmp_path, EPS_SWEEP)
        out = tmp_path / "c.csv"
        assert main(["analytic", "--spec", str(spec), "--out", str(out), "--seed", "99"]) == 0
        assert json.loads((tmp_path / "c.manifest.json").read_text())["seed"] == 99

    def test_validation_error_exit_code(self, tmp_path, capsys):
        spec = write(tmp_path, EPS_SWEEP.replace("sweep = epsilon", "sweep = Q"))
        out = tmp_path / "d.csv"
        assert main(["sweep", "--spec", str(spec), "--out", str(out)]) == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "ParseError" and record["line"] == 10
        assert (tmp_path / "d.error.json").exists() and not out.exists()

    def test_missing_file(self, tmp_path):
        assert main(["analytic", "--spec", str(tmp_path / "nope.txt")]) == 1

    def test_stdout(self, tmp_path, capsys):
        assert main(["analytic", "--spec", str(write(tmp_path, EPS_SWEEP))]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split(",") == SWEEP_COLUMNS and len(lines) == 21


@pytest.mark.slow
def test_conditioned_simulation_half_width(tmp_path):
    text = ("N = 2000\nM = 128\nT = 200\np_a = 0.1\nsnr_db = 10\nW = 4\nL = 110\n"
            "active_users = 100\nbeamformer = MRC\ntrials = 200\n")
    header, rows, _ = execute(parse_spec_text(text, "simulate"))
    row = dict(zip(header, rows[0]))
    assert 0.0 < float(row["mc_half_width"]) < 0.1 * float(row["sstr_mc"])
