"""Command line experiments and report formats."""

import json
import subprocess
import sys

import pytest

from gwinvasion.cli import ConfigError, main, parse, run_argv

QUICK = {
    "survival": ["--p-grid", "0.5:0.9:0.1"],
    "invade": ["--steps", "50"],
    "backbone": ["--steps", "3000"],
    "pivot-chain": ["--n", "20", "--replicates", "50", "--joint"],
    "exp-limit": ["--n", "50", "--replicates", "200"],
    "lpe": ["--paths", "2000"],
    "dual-decay": ["--n-grid", "10,20", "--replicates", "200"],
    "kl": ["--trees", "1", "--replicates", "20", "--n-max", "2", "--min-count", "5", "--dist",
           "family=deterministic, b=3"],
    "thm1-check": ["--p1", "0.01", "--mu", "2"],
}


def _run(name, *extra):
    return run_argv([name, *QUICK[name], "--threads", "1", "--seed", "3", *extra])


class TestSubcommands:
    """Each experiment produces a well-formed report."""

    def test_survival_table(self):
        text, rep = _run("survival")
        lines = [l for l in text.splitlines() if not l.startswith("#")]
        assert lines[0] == "p,g,g_prime"
        p, g, gp = lines[2].split(",")
        assert float(p) == pytest.approx(0.6) and float(g) == pytest.approx(5 / 9, abs=1e-11)
        assert "# seed=3" in text and "# version=" in text

    def test_invade_columns(self):
        text, _ = _run("invade")
        body = [l for l in text.splitlines() if not l.startswith("#")]
        assert body[0] == "step,nodeid,depth,u_weight" and len(body) == 51

    def test_backbone_columns(self):
        text, rep = _run("backbone")
        assert "n,h_n,h_star_n,beta_lower,beta_upper" in text
        assert rep.passed

    @pytest.mark.parametrize("name", sorted(QUICK))
    def test_json_mirrors_csv(self, name):
        _, rep = _run(name)
        doc = json.loads(rep.to_json())
        assert doc["experiment"] == name and doc["seed"] == 3
        assert set(doc["tables"]) == {t.name for t in rep.tables}
        for v in doc["verdicts"]:
            assert v["tolerance"]

    @pytest.mark.parametrize("name", sorted(QUICK))
    def test_byte_identical(self, name):
        for emit in ("csv", "json"):
            assert _run(name, "--emit", emit)[0] == _run(name, "--emit", emit)[0]

    def test_thm1(self):
        _, rep = _run("thm1-check")
        assert rep.passed
        assert run_argv(["thm1-check", "--p1", "0.5", "--mu", "1.5"])[1].passed is False


class TestConfig:
    """Argument and config file handling."""

    def test_zero_replicates(self):
        with pytest.raises(ConfigError):
            parse(["kl", "--replicates", "0"])
        assert main(["pivot-chain", "--replicates", "0"]) == 2

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            parse(["percolate"])

    def test_bad_distribution(self):
        with pytest.raises(ConfigError):
            parse(["survival", "--dist", "pmf = [[1, 1.0]]"])

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# invasion log\nsteps = 20\ndist = pmf = [[1,0.4],[2,0.6]]\nseed = 5\n")
        args = parse(["invade", "--config", str(cfg)])
        assert args.steps == 20 and args.seed == 5 and args.dist.support == (1, 2)
        assert run_argv(["invade", "--config", str(cfg), "--threads", "1"])[0] == \
            run_argv(["invade", "--steps", "20", "--seed", "5", "--dist", "pmf = [[1,0.4],[2,0.6]]"])[0]

    def test_out_file(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["survival", "--p-grid", "0.6:0.7:0.1", "--out", str(out)]) == 0
        assert out.read_text().startswith("# experiment=survival")

    def test_threads_do_not_change_results(self):
        args = ["validate-all", "--criteria", "9", "--scale", "0.1", "--seed", "1"]
        assert run_argv(args + ["--threads", "1"])[0] == run_argv(args + ["--threads", "2"])[0]

    def test_module_entry(self):
        out = subprocess.run([sys.executable, "-m", "gwinvasion", "thm1-check", "--p1", "0", "--p", "12", "--mu", "2"],
                             capture_output=True, text=True, check=True)
        assert "-16" in out.stdout
