"""Command-line driver: dispatch, config handling, files, determinism."""

import numpy as np
import pytest

from qhedge import MarketParams, OptionContract, read_dataset_csv
from qhedge.cli import ExperimentConfig, ingest_prices, main
from qhedge.errors import ConfigError, DataFormatError
from tests.test_black_scholes import put_price_by_quadrature


def run(*argv):
    return main(list(argv))


def read_summary(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out


SMALL = ["--market.n_steps", "6", "--mc.n_paths", "400", "--basis.m", "8",
         "--mc.seed", "11"]


class TestConfig:
    def test_file_plus_flag_override(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("market.s0=120\nrisk.lambda=0.01\n# comment\n")
        cfg = ExperimentConfig.load(cfg_file, {"risk.lambda": "0.02"})
        assert cfg["market.s0"] == 120.0
        assert cfg["risk.lambda"] == 0.02

    def test_unknown_key(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("market.spot=120\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(cfg_file)

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(None, {"mc.n_paths": "many"})

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig.load(None, {"mc.seed": "1"})
        b = ExperimentConfig.load(None, {"mc.seed": "1"})
        c = ExperimentConfig.load(None, {"mc.seed": "2"})
        assert a.hash() == b.hash() != c.hash()


class TestSubcommands:
    def test_bs_quote_matches_quadrature(self, tmp_path):
        out = tmp_path / "o"
        code = run("bs-quote", "--market.s0", "100", "--contract.strike", "100",
                   "--market.sigma", "0.2", "--market.r", "0", "--market.mu", "0",
                   "--market.maturity", "1", "--output.dir", str(out))
        assert code == 0
        summary = read_summary(out / "summary.txt")
        oracle = put_price_by_quadrature(100.0, 100.0, 0.2, 0.0, 1.0)
        assert abs(float(summary["price"]) - oracle) < 1e-6

    def test_dp_lambda_zero_is_config_error(self, tmp_path, capsys):
        code = run("dp-solve", "--risk.lambda", "0", "--output.dir",
                   str(tmp_path), *SMALL)
        assert code == 2
        assert "risk.lambda > 0" in capsys.readouterr().err

    def test_simulate_writes_ensemble(self, tmp_path):
        out = tmp_path / "sim"
        assert run("simulate", "--output.dir", str(out), *SMALL) == 0
        text = (out / "ensemble.csv").read_text()
        assert text.startswith("# ")
        assert "path,t,s,x" in text

    def test_rollout_columns(self, tmp_path):
        out = tmp_path / "roll"
        assert run("rollout", "--rollout.policy", "zero",
                   "--output.dir", str(out), *SMALL) == 0
        header = [l for l in (out / "rollout.csv").read_text().splitlines()
                  if l.startswith("path,")][0]
        assert header == "path,t,S,X,a,Pi,B,R"

    def test_dp_solve_outputs(self, tmp_path):
        out = tmp_path / "dp"
        assert run("dp-solve", "--output.dir", str(out), *SMALL) == 0
        summary = read_summary(out / "summary.txt")
        assert "price0" in summary and "hedge0" in summary
        assert (out / "coefficients.csv").exists()
        assert (out / "surfaces.csv").exists()

    def test_dataset_roundtrip_and_fqi(self, tmp_path):
        """dp_optimal dataset reproduces the DP price (mu = r, where the
        penalty's reference portfolio and the optimal one coincide)."""
        rn = ["--market.mu", "0.03", "--mc.n_paths", "2000"]
        data_dir = tmp_path / "data"
        assert run("make-dataset", "--dataset.policy", "dp_optimal",
                   "--output.dir", str(data_dir), *SMALL, *rn) == 0
        ds_file = data_dir / "dataset.csv"
        ds = read_dataset_csv(ds_file)
        assert len(ds) == 2000 * 6
        fqi_dir = tmp_path / "fqi"
        assert run("fqi-solve", "--dataset.path", str(ds_file),
                   "--output.dir", str(fqi_dir), *SMALL, *rn) == 0
        dp_dir = tmp_path / "dp"
        assert run("dp-solve", "--output.dir", str(dp_dir), *SMALL, *rn) == 0
        p_fqi = float(read_summary(fqi_dir / "summary.txt")["price0"])
        p_dp = float(read_summary(dp_dir / "summary.txt")["price0"])
        assert abs(p_fqi - p_dp) / p_dp < 0.05

    def test_make_dataset_zero_policy_zero_rewards(self, tmp_path):
        out = tmp_path / "z"
        assert run("make-dataset", "--dataset.policy", "zero",
                   "--risk.lambda", "0", "--output.dir", str(out), *SMALL) == 0
        ds = read_dataset_csv(out / "dataset.csv")
        np.testing.assert_array_equal(ds.a, 0.0)
        np.testing.assert_array_equal(ds.r, 0.0)

    def test_tabular_q_summary(self, tmp_path):
        out = tmp_path / "tab"
        assert run("tabular-q", "--tabular.n_x", "5", "--tabular.n_a", "3",
                   "--tabular.n_updates", "20000",
                   "--output.dir", str(out), *SMALL) == 0
        summary = read_summary(out / "summary.txt")
        assert "q0_exact" in summary and "sup_rel_error" in summary
        assert (out / "qtable.csv").exists()

    def test_utility_price_runs(self, tmp_path):
        out = tmp_path / "u"
        assert run("utility-price", "--utility.gamma", "0.01",
                   "--basis.kind", "one_hot_grid", "--basis.m", "10",
                   "--market.mu", "0.03", "--output.dir", str(out), *SMALL) == 0
        assert "price0" in read_summary(out / "summary.txt")

    def test_compare_reports_errors(self, tmp_path):
        out = tmp_path / "cmp"
        assert run("compare", "--market.mu", "0.03", "--market.sigma", "0.15",
                   "--mc.n_paths", "4000", "--market.n_steps", "12",
                   "--output.dir", str(out)) == 0
        summary = read_summary(out / "summary.txt")
        assert float(summary["price_rel_error"]) < 0.10


class TestDeterminism:
    @pytest.mark.parametrize("argv", [
        ["simulate"],
        ["dp-solve"],
        ["make-dataset", "--dataset.policy", "random"],
        ["tabular-q", "--tabular.n_x", "5", "--tabular.n_a", "3",
         "--tabular.n_updates", "5000"],
    ])
    def test_byte_identical_reruns(self, tmp_path, argv):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert run(*argv, "--output.dir", str(d), *SMALL) == 0
        files_a = sorted(p.name for p in dirs[0].iterdir())
        files_b = sorted(p.name for p in dirs[1].iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


class TestIngest:
    def test_export_then_ingest_roundtrip(self, tmp_path):
        out = tmp_path / "sim"
        assert run("simulate", "--output.dir", str(out), *SMALL) == 0
        paths = ingest_prices(out / "ensemble.csv")
        from qhedge import simulate_gbm
        params = MarketParams(s0=100.0, mu=0.05, sigma=0.2, r=0.03,
                              maturity=1.0, n_steps=6)
        direct = simulate_gbm(params, 400, seed=11)
        np.testing.assert_allclose(paths.s_paths, direct.s_paths, rtol=1e-15)

    def test_ragged_panel_names_cell(self, tmp_path):
        f = tmp_path / "panel.csv"
        f.write_text("# mu=0\n# sigma=0.2\n# r=0\n# maturity=1\n"
                     "path,t,s\n0,0,100\n0,1,101\n1,0,100\n")
        with pytest.raises(DataFormatError, match=r"path=1, t=1"):
            ingest_prices(f)

    def test_constant_panel_zero_hedge_discounts(self, tmp_path):
        from qhedge import HedgeStrategy, RiskParams, rollout_portfolio
        f = tmp_path / "flat.csv"
        rows = ["# mu=0.0", "# sigma=0.0", "# r=0.05", "# maturity=1",
                "path,t,s"]
        for p in range(3):
            for t in range(5):
                rows.append(f"{p},{t},100.0")
        f.write_text("\n".join(rows) + "\n")
        paths = ingest_prices(f)
        contract = OptionContract("put", 108.0)
        risk = RiskParams.from_market(0.7, paths.params)
        roll = rollout_portfolio(paths, HedgeStrategy.zero(), contract, risk)
        np.testing.assert_allclose(roll.pi[:, 0], np.exp(-0.05) * 8.0,
                                   rtol=1e-12)

    def test_nonpositive_price_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("# mu=0\n# sigma=0.2\n# r=0\n# maturity=1\n"
                     "path,t,s\n0,0,100\n0,1,-5\n")
        with pytest.raises(DataFormatError):
            ingest_prices(f)
