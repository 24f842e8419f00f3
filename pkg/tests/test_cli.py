import json
from dataclasses import replace

import numpy as np
import pytest

from oracles import naive_fs
from progfs.cli import main
from progfs.io import load_design, load_scenarios, read_dataset_csv, write_dataset_csv
from progfs.errors import DataFormatError
from progfs.simulation import constant_effect_scenario, generate_trial
from progfs.winstat import TrialDataset


@pytest.fixture
def dataset(tmp_path):
    data = generate_trial(constant_effect_scenario(0.0, 0.3, 0.0, 1000, n_total=300), 0)
    path = tmp_path / "trial.csv"
    write_dataset_csv(data, path)
    return path, data


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(path, text):
    path.write_text(text)
    return path


class TestDatasetCsv:
    def test_round_trip(self, dataset):
        path, data = dataset
        back = read_dataset_csv(path)
        assert np.array_equal(back.times, data.times) and np.array_equal(back.censored, data.censored)
        assert np.array_equal(back.arm, data.arm) and back.strata is None

    def test_strata_and_layers(self, tmp_path):
        p = write(tmp_path / "d.csv", "id,arm,stratum,time_1,censored_1\na,1,x,3.5,0\nb,0,y,2,1\n")
        d = read_dataset_csv(p)
        assert d.layer_count == 1 and d.strata.tolist() == ["x", "y"] and d.ids == ("a", "b")

    @pytest.mark.parametrize(
        "body,where",
        [
            ("a,2,,1,0\n", "column 'arm'"),
            ("a,1,,x,0\n", "column 'time_1'"),
            ("a,1,,1,maybe\n", "column 'censored_1'"),
            ("a,1,,1\n", "row 2"),
            ("a,1,,-1,0\n", "column 'time_1'"),
        ],
    )
    def test_diagnostics(self, tmp_path, body, where):
        p = write(tmp_path / "d.csv", "id,arm,stratum,time_1,censored_1\n" + body)
        with pytest.raises(DataFormatError, match=where):
            read_dataset_csv(p)

    def test_bad_header(self, tmp_path):
        p = write(tmp_path / "d.csv", "id,arm,time_1,censored_1\n1,1,2,0\n")
        with pytest.raises(DataFormatError, match="header"):
            read_dataset_csv(p)


class TestTestCommand:
    def test_quantile_schedule_echoed(self, dataset, tmp_path, capsys):
        path, _ = dataset
        out = tmp_path / "r.json"
        code, stdout, _ = run(["test", path, "--quantile", 4, "--horizon", 1000, "--out", out], capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["schedule"] == [250.0, 500.0, 750.0, 1000.0]
        assert doc["N"] == 300 and doc["M"] == 150 and doc["layer_count"] == 2
        assert {"z_vec", "sigma", "omega", "r_vec", "z_max", "p_value", "seed", "version", "manifest_sha256"} <= set(doc)
        assert "Z_MAX" in stdout and "R_k" in stdout and "p-value" in stdout
        assert (tmp_path / "r.manifest.json").exists()

    def test_single_schedule_equals_fs_mode(self, dataset, tmp_path, capsys):
        path, _ = dataset
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(["test", path, "--horizon", 1000, "--out", a], capsys)
        run(["test", path, "--schedule", "1000", "--horizon", 1000, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_z_matches_oracle(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        arm = np.array([1, 0] * 6)
        times = rng.integers(1, 40, size=(12, 2)).astype(float)
        cens = rng.random((12, 2)) < 0.3
        path = tmp_path / "small.csv"
        write_dataset_csv(TrialDataset(arm, times, cens), path)
        out = tmp_path / "r.json"
        assert run(["test", path, "--horizon", 30, "--out", out], capsys)[0] == 0
        z, var = naive_fs(times, cens, arm, 30)
        doc = json.loads(out.read_text())
        assert doc["z_vec"] == [z]
        assert doc["sigma"][0][0] == pytest.approx(var, rel=1e-12)

    def test_stratified(self, tmp_path, capsys):
        data = generate_trial(constant_effect_scenario(0, 0.3, 0, 800, n_total=200), 1)
        strat = data.with_strata(np.where(np.arange(200) % 4 < 2, "c1", "c2"))
        path = tmp_path / "s.csv"
        write_dataset_csv(strat, path)
        out = tmp_path / "r.json"
        assert run(["test", path, "--quantile", 4, "--stratified", "--out", out], capsys)[0] == 0
        assert json.loads(out.read_text())["stratified"] is True

    def test_repeatable(self, dataset, tmp_path, capsys):
        path, _ = dataset
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(["test", path, "--quantile", 5, "--seed", 3, "--out", a], capsys)
        run(["test", path, "--quantile", 5, "--seed", 3, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_from_environment(self, dataset, tmp_path, capsys, monkeypatch):
        path, _ = dataset
        monkeypatch.setenv("PROFS_SEED", "41")
        out = tmp_path / "r.json"
        run(["test", path, "--quantile", 2, "--out", out], capsys)
        assert json.loads(out.read_text())["seed"] == 41

    def test_malformed_csv_exit_2(self, tmp_path, capsys):
        p = write(tmp_path / "d.csv", "id,arm,stratum,time_1,censored_1\na,1,,oops,0\n")
        code, _, err = run(["test", p, "--out", tmp_path / "r.json"], capsys)
        assert code == 2
        assert err.count("\n") == 1 and err.startswith("progfs: error[format]:") and "row 2" in err

    @pytest.mark.parametrize("flags", [["--schedule", "500,400"], ["--schedule", "a,b"], ["--quantile", 0], ["--schedule", "1200", "--horizon", 1000]])
    def test_invalid_schedule_exit_2(self, dataset, tmp_path, capsys, flags):
        path, _ = dataset
        code, _, err = run(["test", path, *flags, "--out", tmp_path / "r.json"], capsys)
        assert code == 2 and err.startswith("progfs: error[")


class TestSimulateCommand:
    def scenario(self, tmp_path, **extra):
        body = "[scenario]\nname = demo\nalpha_h = 0.3\nfollow_up = 500, 1000\nreplicates = 6\nn_total = 200\n"
        body += "".join(f"{k} = {v}\n" for k, v in extra.items())
        return write(tmp_path / "demo.ini", body)

    def test_outputs_and_determinism(self, tmp_path, capsys):
        cfg = self.scenario(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["simulate", cfg, "--tests", "fs,profs2,profs4", "--out", a], capsys)[0] == 0
        assert run(["simulate", cfg, "--tests", "fs,profs2,profs4", "--out", b, "--workers", 2], capsys)[0] == 0
        for name in ("results.csv", "plot_data.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        lines = (a / "results.csv").read_text().splitlines()
        assert lines[0].startswith("# manifest_sha256=")
        assert lines[1] == "scenario,test,rejections,replicates,rate,ci_lo,ci_hi"
        assert len(lines) == 2 + 2 * 3
        manifest = json.loads((a / "manifest.json").read_text())
        assert lines[0].endswith(manifest["manifest_sha256"])

    def test_json_scenario_with_custom_hazards(self, tmp_path, capsys):
        doc = {
            "scenario": {"name": "custom", "follow_up": 600, "replicates": 4, "n_total": 120, "kendall_w": 0.5},
            "treatment": {"death_rates": "0.0004,0.0008", "death_cuts": "300"},
        }
        p = write(tmp_path / "c.json", json.dumps(doc))
        (cfg,) = load_scenarios(p)
        assert cfg.treatment.death.rates == (0.0004, 0.0008) and cfg.treatment.beta == 2.0
        assert run(["simulate", p, "--tests", "fs", "--out", tmp_path / "o"], capsys)[0] == 0

    def test_table2_preset(self, tmp_path, capsys):
        out = tmp_path / "t2"
        code, _, _ = run(["simulate", "--paper-table2", "--replicates", 2, "--n-total", 60, "--out", out], capsys)
        assert code == 0
        rows = (out / "table2.csv").read_text().splitlines()
        assert rows[1] == "alpha_d,alpha_h,W,S,ProFS-2,ProFS-4,ProFS-5,ProFS-10"
        assert len(rows) == 2 + 30
        assert len((out / "results.csv").read_text().splitlines()) == 2 + 30 * 4

    def test_figures(self, tmp_path, capsys):
        cfg = self.scenario(tmp_path)
        out = tmp_path / "f"
        assert run(["simulate", cfg, "--tests", "fs,profs4", "--out", out, "--figures"], capsys)[0] == 0
        for name in ("power_vs_follow_up.png", "event_free_curves.png"):
            assert (out / "figures" / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_keep_pvalues(self, tmp_path, capsys):
        cfg = self.scenario(tmp_path)
        out = tmp_path / "k"
        assert run(["simulate", cfg, "--tests", "fs", "--out", out, "--keep-pvalues"], capsys)[0] == 0
        assert len((out / "pvalues.csv").read_text().splitlines()) == 2 + 2 * 6

    def test_zero_replicates(self, tmp_path, capsys):
        code, _, err = run(["simulate", self.scenario(tmp_path), "--replicates", 0, "--out", tmp_path / "z"], capsys)
        assert code == 2 and "replicates" in err

    def test_zero_replicates_in_file(self, tmp_path, capsys):
        p = write(tmp_path / "z.ini", "[scenario]\nfollow_up = 500\nreplicates = 0\n")
        assert run(["simulate", p, "--out", tmp_path / "z"], capsys)[0] == 2

    def test_unknown_test(self, tmp_path, capsys):
        code, _, err = run(["simulate", self.scenario(tmp_path), "--tests", "fs,wr", "--out", tmp_path / "u"], capsys)
        assert code == 2 and "'wr'" in err

    def test_short_term_scenario_file(self, tmp_path, capsys):
        p = write(tmp_path / "st.ini", "[scenario]\nshort_term = hosp\nfollow_up = 300\nreplicates = 3\nn_total = 100\n")
        (cfg,) = load_scenarios(p)
        assert cfg.treatment.hosp.cut_points == (150,)


class TestGroupseqCommand:
    def files(self, tmp_path, l=40, draws=200, looks=2, imbalance=False):
        design = write(
            tmp_path / "design.ini",
            f"[design]\nlooks = {looks}\nper_arm_increment = {l}\nstop_probs = 0.01, 0.05\n"
            f"horizon = 1000\nquantile = 2\ndraws = {draws}\nseed = 3\n",
        )
        cfg = constant_effect_scenario(0.0, 0.0, 0.0, 1000)
        paths = []
        for q in range(looks):
            data = generate_trial(replace(cfg, n_total=2 * l), q)
            if imbalance and q == 1:
                data = data.take(np.arange(1, 2 * l))
            p = tmp_path / f"cohort{q + 1}.csv"
            write_dataset_csv(data, p)
            paths.append(p)
        return design, paths

    def test_trace(self, tmp_path, capsys):
        design, cohorts = self.files(tmp_path)
        out = tmp_path / "trace.json"
        code, stdout, _ = run(["groupseq", design, *cohorts, "--out", out], capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["looks"][0]["cohort"] == "cohort1.csv"
        assert {"look", "cumulative_n", "z_vec", "boundary", "observed_max", "decision"} <= set(doc["looks"][0])
        assert doc["decision"] in ("continue", "stop-efficacy", "final-reject", "final-accept")
        assert "look 1" in stdout

    def test_repeatable(self, tmp_path, capsys):
        design, cohorts = self.files(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(["groupseq", design, *cohorts, "--out", a], capsys)
        run(["groupseq", design, *cohorts, "--out", b], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_stop_decision_exit_zero(self, tmp_path, capsys):
        design, _ = self.files(tmp_path, looks=2)
        l = 40
        arm = np.array([1] * l + [0] * l)
        times = np.where(arm[:, None] == 1, 1000.0, 30.0) * np.ones((1, 2))
        p = tmp_path / "strong.csv"
        write_dataset_csv(TrialDataset(arm, times, np.broadcast_to(arm[:, None] == 1, (2 * l, 2))), p)
        out = tmp_path / "t.json"
        assert run(["groupseq", design, p, "--out", out], capsys)[0] == 0
        assert json.loads(out.read_text())["decision"] == "stop-efficacy"

    def test_imbalance_named(self, tmp_path, capsys):
        design, cohorts = self.files(tmp_path, imbalance=True)
        code, _, err = run(["groupseq", design, *cohorts, "--out", tmp_path / "t.json"], capsys)
        assert code == 2 and "cohort2.csv" in err

    def test_draws_below_floor(self, tmp_path, capsys):
        design, cohorts = self.files(tmp_path, draws=50)
        code, _, err = run(["groupseq", design, *cohorts, "--out", tmp_path / "t.json"], capsys)
        assert code == 2 and "V=50" in err

    def test_draw_override(self, tmp_path, capsys):
        design, cohorts = self.files(tmp_path)
        assert load_design(design).draws == 200
        code, _, _ = run(["groupseq", design, *cohorts, "--draws", 99, "--out", tmp_path / "t.json"], capsys)
        assert code == 2


class TestPlotAndErrors:
    def test_plot_command(self, tmp_path, capsys):
        cfg = write(tmp_path / "s.ini", "[scenario]\nfollow_up = 400, 800\nreplicates = 3\nn_total = 80\n")
        out = tmp_path / "sim"
        run(["simulate", cfg, "--tests", "fs,profs2", "--out", out], capsys)
        code, stdout, _ = run(["plot", out / "plot_data.csv", "--out", tmp_path / "p"], capsys)
        assert code == 0 and (tmp_path / "p" / "figures" / "power_vs_follow_up.png").exists()

    def test_usage_error_single_line(self, capsys):
        code, _, err = run(["nonsense"], capsys)
        assert code == 2 and err.startswith("progfs: error[usage]:") and err.count("\n") == 1

    def test_bad_env_seed(self, dataset, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("PROFS_SEED", "abc")
        code, _, err = run(["test", dataset[0], "--out", tmp_path / "r.json"], capsys)
        assert code == 2 and "PROFS_SEED" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["test", tmp_path / "absent.csv", "--out", tmp_path / "r.json"], capsys)
        assert code == 2 and "cannot read" in err
