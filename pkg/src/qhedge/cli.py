"""Experiment driver: config parsing, dataset generation, solver dispatch.

Configuration is flat ``section.key=value`` text; every key doubles as a
command-line flag (``--market.s0 100``) that overrides the file.  All
outputs are CSV with ``#``-prefixed key=value headers and 17-significant-
digit floats, plus a ``summary.txt`` of key=value pairs, so a fixed
(config, seed) reproduces every artifact byte for byte.  Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_basis
from .black_scholes import bs_price_delta
from .dp import price_and_hedge_surface, solve_dp
from .errors import ConfigError, DataFormatError, QHedgeError
from .fqi import build_dataset, fqi_backward, read_dataset_csv, write_dataset_csv
from .market import (MarketParams, OptionContract, PathEnsemble,
                     ensemble_from_prices, simulate_gbm)
from .portfolio import (HedgeStrategy, RiskParams, rollout_portfolio,
                        solve_local_risk)
from .tabular import discretize, exact_backward_induction, q_learn
from .utility import indifference_price_recursion

_FMT = "%.17g"

# key -> (type, default); None default means "required when used"
SCHEMA = {
    "market.s0": (float, 100.0),
    "market.mu": (float, 0.05),
    "market.sigma": (float, 0.2),
    "market.r": (float, 0.03),
    "market.maturity": (float, 1.0),
    "market.n_steps": (int, 24),
    "contract.kind": (str, "put"),
    "contract.strike": (float, 100.0),
    "risk.lambda": (float, 0.001),
    "mc.n_paths": (int, 10000),
    "mc.seed": (int, 42),
    "basis.kind": (str, "bspline"),
    "basis.m": (int, 12),
    "basis.degree": (int, 3),
    "basis.bandwidth": (float, 0.0),       # 0 -> automatic
    "rollout.policy": (str, "local_risk"),  # zero | constant | local_risk | dp_optimal
    "rollout.constant": (float, 0.0),
    "dataset.policy": (str, "dp_optimal"),  # dp_optimal | local_risk | random | zero
    "dataset.random_lo": (float, -1.5),
    "dataset.random_hi": (float, 1.5),
    "dataset.path": (str, ""),
    "tabular.n_x": (int, 21),
    "tabular.n_a": (int, 5),
    "tabular.action_lo": (float, -1.5),
    "tabular.action_hi": (float, 1.5),
    "tabular.n_updates": (int, 100000),
    "tabular.alpha0": (float, 0.5),
    "tabular.k0": (float, 100.0),
    "utility.gamma": (float, 0.01),
    "utility.order": (int, 1),
    "utility.method": (str, "expansion"),
    "ingest.path": (str, ""),
    "output.dir": (str, "."),
}


class ExperimentConfig:
    """Typed flat configuration with a content hash for provenance."""

    def __init__(self, values: dict):
        self.values = dict(values)

    @classmethod
    def load(cls, config_path=None, overrides=None) -> "ExperimentConfig":
        values = {k: default for k, (_, default) in SCHEMA.items()}
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            for ln, line in enumerate(path.read_text().splitlines(), 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
                key = _check_key(key.strip())
                values[key] = _parse_value(key, val.strip())
        for key, val in (overrides or {}).items():
            key = _check_key(key)
            values[key] = _parse_value(key, val)
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def hash(self) -> str:
        """Hash of the experiment-defining keys (the output location is
        excluded so relocated reruns stay byte-identical)."""
        text = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values)
                         if k != "output.dir")
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def market(self) -> MarketParams:
        v = self.values
        return MarketParams(s0=v["market.s0"], mu=v["market.mu"],
                            sigma=v["market.sigma"], r=v["market.r"],
                            maturity=v["market.maturity"],
                            n_steps=v["market.n_steps"])

    def contract(self) -> OptionContract:
        return OptionContract(kind=self.values["contract.kind"],
                              strike=self.values["contract.strike"])

    def risk(self) -> RiskParams:
        return RiskParams.from_market(self.values["risk.lambda"], self.market())

    def basis_for(self, paths: PathEnsemble):
        v = self.values
        bw = v["basis.bandwidth"] or None
        return build_basis(v["basis.kind"], v["basis.m"], paths.x_paths.ravel(),
                           degree=v["basis.degree"], bandwidth=bw)


def _check_key(key: str) -> str:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def _parse_value(key: str, raw: str):
    typ = SCHEMA[key][0]
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return _FMT % v
    return str(v)


def write_csv(path, colnames, columns, header=None):
    lines = [f"# {k}={_fmt(v)}" for k, v in (header or {}).items()]
    lines.append(",".join(colnames))
    cols = [np.asarray(c) for c in columns]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary(path, entries: dict):
    lines = [f"{k}={_fmt(entries[k])}" for k in sorted(entries)]
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    sys.stdout.write(text)


def _base_summary(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash(), "version": __version__}


def _outdir(cfg) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ensemble(cfg) -> PathEnsemble:
    if cfg["ingest.path"]:
        return ingest_prices(cfg["ingest.path"], cfg.market())
    return simulate_gbm(cfg.market(), cfg["mc.n_paths"], cfg["mc.seed"])


def ingest_prices(csv_path, params: MarketParams = None) -> PathEnsemble:
    """Read a (path, t, s) panel into an ensemble.

    The panel must be a complete rectangle; the state transform uses the
    header's mu/sigma when ``params`` is not given.
    """
    path = Path(csv_path)
    if not path.exists():
        raise ConfigError(f"price panel not found: {path}")
    meta = {}
    triples = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif line[0].isdigit() or line[0] == "-":
            parts = line.split(",")
            if len(parts) < 3:
                raise DataFormatError(f"expected path,t,s columns, got {line!r}")
            triples.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if not triples:
        raise DataFormatError(f"no data rows in {path}")
    pids = sorted({p for p, _, _ in triples})
    tmax = max(t for _, t, _ in triples)
    panel = np.full((len(pids), tmax + 1), np.nan)
    row = {p: i for i, p in enumerate(pids)}
    for p, t, s in triples:
        panel[row[p], t] = s
    if np.isnan(panel).any():
        i, j = np.argwhere(np.isnan(panel))[0]
        raise DataFormatError(f"ragged panel: missing cell (path={pids[i]}, t={j})")
    if np.any(panel <= 0):
        raise DataFormatError("non-positive prices in panel")
    if params is None:
        try:
            params = MarketParams(
                s0=float(panel[0, 0]), mu=float(meta["mu"]),
                sigma=float(meta["sigma"]), r=float(meta["r"]),
                maturity=float(meta["maturity"]), n_steps=tmax,
            )
        except KeyError as exc:
            raise DataFormatError(f"panel header missing key {exc}") from exc
    return ensemble_from_prices(panel, params)


def _strategy(cfg, paths, basis, policy, constant=0.0):
    contract, risk = cfg.contract(), cfg.risk()
    if policy == "zero":
        return HedgeStrategy.zero(), None
    if policy == "constant":
        return HedgeStrategy.constant(constant), None
    if policy == "local_risk":
        coeffs, pi = solve_local_risk(paths, contract, basis)
        return HedgeStrategy.from_coefficients(basis, coeffs), pi
    if policy == "dp_optimal":
        _require_positive_lambda(cfg, "the dp_optimal policy")
        sol = solve_dp(paths, contract, risk, basis)
        return HedgeStrategy.from_coefficients(basis, sol.hedge_coeffs), None
    raise ConfigError(f"unknown policy {policy!r}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg):
    paths = _ensemble(cfg)
    out = _outdir(cfg)
    p = paths.params
    n, t1 = paths.s_paths.shape
    pid = np.repeat(np.arange(n), t1)
    ts = np.tile(np.arange(t1), n)
    write_csv(out / "ensemble.csv", ["path", "t", "s", "x"],
              [pid, ts, paths.s_paths.ravel(), paths.x_paths.ravel()],
              header={"s0": p.s0, "mu": p.mu, "sigma": p.sigma, "r": p.r,
                      "maturity": p.maturity, "n_steps": p.n_steps,
                      "n_paths": n, "seed": paths.seed})
    summary = _base_summary(cfg)
    summary.update({"n_paths": n, "n_steps": p.n_steps,
                    "mean_s_final": paths.s_paths[:, -1].mean()})
    write_summary(out / "summary.txt", summary)
    return 0


def cmd_rollout(cfg):
    paths = _ensemble(cfg)
    basis = cfg.basis_for(paths)
    strategy, _ = _strategy(cfg, paths, basis, cfg["rollout.policy"],
                            cfg["rollout.constant"])
    roll = rollout_portfolio(paths, strategy, cfg.contract(), cfg.risk())
    out = _outdir(cfg)
    n, t1 = roll.pi.shape
    pid = np.repeat(np.arange(n), t1)
    ts = np.tile(np.arange(t1), n)
    write_csv(out / "rollout.csv", ["path", "t", "S", "X", "a", "Pi", "B", "R"],
              [pid, ts, paths.s_paths.ravel(), paths.x_paths.ravel(),
               roll.actions.ravel(), roll.pi.ravel(), roll.b_account.ravel(),
               roll.rewards.ravel()],
              header={"policy": cfg["rollout.policy"], "lambda": cfg.risk().lam})
    summary = _base_summary(cfg)
    summary.update({"mean_pi0": roll.pi[:, 0].mean(),
                    "policy": cfg["rollout.policy"]})
    write_summary(out / "summary.txt", summary)
    return 0


def _require_positive_lambda(cfg, what):
    if cfg["risk.lambda"] <= 0:
        raise ConfigError(
            f"{what} requires risk.lambda > 0 (the risk-adjusted optimal "
            f"action is undefined at lambda = 0); got {cfg['risk.lambda']}"
        )


def cmd_dp_solve(cfg):
    _require_positive_lambda(cfg, "dp-solve")
    paths = _ensemble(cfg)
    basis = cfg.basis_for(paths)
    sol = solve_dp(paths, cfg.contract(), cfg.risk(), basis)
    out = _outdir(cfg)

    n_steps = paths.n_steps
    ts, ns, phis, omegas = [], [], [], []
    for t in range(n_steps + 1):
        for n in range(basis.m):
            ts.append(t)
            ns.append(n)
            phis.append(sol.hedge_coeffs[t][n] if t < n_steps else 0.0)
            omegas.append(sol.value_coeffs[t][n])
    write_csv(out / "coefficients.csv", ["t", "n", "phi", "omega"],
              [ts, ns, phis, omegas], header={"m": basis.m})

    # per-state price/hedge surfaces over the central state range
    qs = np.quantile(paths.x_paths.ravel(), np.linspace(0.05, 0.95, 41))
    ts, xs, prices, hedges = [], [], [], []
    for t in range(n_steps + 1):
        pr, hd = price_and_hedge_surface(sol, basis, qs, t)
        ts.extend([t] * qs.size)
        xs.extend(qs)
        prices.extend(pr)
        hedges.extend(hd)
    write_csv(out / "surfaces.csv", ["t", "x", "price", "hedge"],
              [ts, xs, prices, hedges], header={"m": basis.m})

    summary = _base_summary(cfg)
    summary.update({"price0": sol.price0, "hedge0": sol.hedge0})
    write_summary(out / "summary.txt", summary)
    return 0


def cmd_make_dataset(cfg):
    paths = _ensemble(cfg)
    basis = cfg.basis_for(paths)
    contract, risk = cfg.contract(), cfg.risk()
    policy = cfg["dataset.policy"]

    if policy == "zero":
        actions = np.zeros((paths.n_paths, paths.n_steps))
    elif policy == "local_risk":
        coeffs, _ = solve_local_risk(paths, contract, basis)
        actions = HedgeStrategy.from_coefficients(basis, coeffs).actions(paths)[:, :-1]
    elif policy == "dp_optimal":
        _require_positive_lambda(cfg, "make-dataset with the dp_optimal policy")
        sol = solve_dp(paths, contract, risk, basis)
        strat = HedgeStrategy.from_coefficients(basis, sol.hedge_coeffs)
        actions = strat.actions(paths)[:, :-1]
    elif policy == "random":
        rng = np.random.default_rng(cfg["mc.seed"] + 1)
        actions = rng.uniform(cfg["dataset.random_lo"], cfg["dataset.random_hi"],
                              size=(paths.n_paths, paths.n_steps))
    else:
        raise ConfigError(f"unknown dataset policy {policy!r}")

    rewards = dataset_rewards(paths, actions, contract, risk, basis)
    dataset = build_dataset(paths, actions, rewards, risk.lam, contract,
                            seed=cfg["mc.seed"])
    dataset.header.extras["policy"] = policy
    out = _outdir(cfg)
    write_dataset_csv(dataset, out / "dataset.csv")
    summary = _base_summary(cfg)
    summary.update({"n_records": len(dataset), "policy": policy})
    write_summary(out / "summary.txt", summary)
    return 0


def dataset_rewards(paths, actions, contract, risk, basis) -> np.ndarray:
    """Per-record rewards: gain term from the recorded actions, risk
    penalty from the policy-independent risk-minimizing rollout."""
    from .portfolio import reward_parabola
    from .regression import conditional_mean

    _, pi_ref = solve_local_risk(paths, contract, basis)
    rewards = np.empty_like(np.asarray(actions, dtype=float))
    for t in range(paths.n_steps):
        design = basis.evaluate(paths.x_paths[:, t])
        c0, c1, c2 = reward_parabola(
            paths.delta_s(t), pi_ref[:, t + 1], risk,
            pi_center=conditional_mean(design, pi_ref[:, t + 1]),
            ds_center=paths.delta_s_mean(t))
        a = actions[:, t]
        rewards[:, t] = c0 + c1 * a + c2 * a**2
    return rewards


def cmd_fqi_solve(cfg):
    _require_positive_lambda(cfg, "fqi-solve")
    if not cfg["dataset.path"]:
        raise ConfigError("fqi-solve requires dataset.path")
    dataset = read_dataset_csv(cfg["dataset.path"])
    paths = dataset.to_ensemble()
    basis = cfg.basis_for(paths)
    sol = fqi_backward(dataset, basis)
    out = _outdir(cfg)
    ts, rows, cols, vals = [], [], [], []
    for t, w in enumerate(sol.weights):
        for i in range(3):
            for j in range(w.shape[1]):
                ts.append(t)
                rows.append(i)
                cols.append(j)
                vals.append(w[i, j])
    write_csv(out / "weights.csv", ["t", "i", "j", "w"], [ts, rows, cols, vals],
              header={"m": basis.m})
    summary = _base_summary(cfg)
    summary.update({"price0": sol.price0, "hedge0": sol.hedge0,
                    "n_warnings": len(sol.warnings)})
    write_summary(out / "summary.txt", summary)
    return 0


def cmd_tabular_q(cfg):
    paths = _ensemble(cfg)
    mdp = discretize(paths, cfg.contract(), cfg.risk(),
                     cfg["tabular.n_x"], cfg["tabular.n_a"],
                     (cfg["tabular.action_lo"], cfg["tabular.action_hi"]))
    exact = exact_backward_induction(mdp)
    learned = q_learn(mdp, cfg["tabular.n_updates"],
                      schedule=(cfg["tabular.alpha0"], cfg["tabular.k0"]),
                      seed=cfg["mc.seed"])
    out = _outdir(cfg)
    t1, n_x, n_a = learned.q.shape
    ts = np.repeat(np.arange(t1), n_x * n_a)
    xs = np.tile(np.repeat(np.arange(n_x), n_a), t1)
    asq = np.tile(np.arange(n_a), t1 * n_x)
    vis = np.concatenate([learned.visits.ravel(),
                          np.zeros(n_x * n_a, dtype=int)])
    write_csv(out / "qtable.csv",
              ["t", "state_index", "action_index", "q", "visits"],
              [ts, xs, asq, learned.q.ravel(), vis],
              header={"n_x": n_x, "n_a": n_a})
    mask = np.zeros_like(learned.q, dtype=bool)
    mask[:-1] = learned.visits > 0
    scale = np.abs(exact.q).max()
    sup = np.abs(learned.q - exact.q)[mask].max() / scale if scale > 0 else 0.0
    summary = _base_summary(cfg)
    summary.update({
        "q0_exact": exact.q[0, mdp.x0_index].max(),
        "q0_learned": learned.q[0, mdp.x0_index].max(),
        "sup_rel_error": sup,
        "n_merged_bins": len(mdp.merged_bins),
    })
    write_summary(out / "summary.txt", summary)
    return 0


def cmd_utility_price(cfg):
    paths = _ensemble(cfg)
    basis = cfg.basis_for(paths)
    res = indifference_price_recursion(
        paths, cfg.contract(), cfg["utility.gamma"], basis,
        order=cfg["utility.order"], method=cfg["utility.method"])
    out = _outdir(cfg)
    ts, ns, us = [], [], []
    for t, hc in enumerate(res.hedge_coeffs):
        ts.extend([t] * hc.size)
        ns.extend(range(hc.size))
        us.extend(hc)
    write_csv(out / "utility_hedges.csv", ["t", "n", "u"], [ts, ns, us],
              header={"gamma": cfg["utility.gamma"], "method": res.method})
    summary = _base_summary(cfg)
    summary.update({"price0": res.price0, "method": res.method,
                    "order": cfg["utility.order"],
                    "utility_gamma": cfg["utility.gamma"]})
    write_summary(out / "summary.txt", summary)
    return 0


def cmd_bs_quote(cfg):
    m = cfg.market()
    c = cfg.contract()
    quote = bs_price_delta(m.s0, c.strike, m.sigma, m.r, m.maturity, c.kind)
    summary = _base_summary(cfg)
    summary.update({"price": quote.price, "delta": quote.delta})
    write_summary(_outdir(cfg) / "summary.txt", summary)
    return 0


def cmd_compare(cfg):
    paths = _ensemble(cfg)
    basis = cfg.basis_for(paths)
    m, c = cfg.market(), cfg.contract()
    sol = solve_dp(paths, c, cfg.risk(), basis)
    quote = bs_price_delta(m.s0, c.strike, m.sigma, m.r, m.maturity, c.kind)
    out = _outdir(cfg)
    write_csv(out / "comparison.csv",
              ["quantity", "dp", "analytic", "abs_diff"],
              [["price", "hedge"],
               [sol.price0, sol.hedge0],
               [quote.price, quote.delta],
               [abs(sol.price0 - quote.price), abs(sol.hedge0 - quote.delta)]])
    summary = _base_summary(cfg)
    summary.update({
        "dp_price0": sol.price0, "bs_price": quote.price,
        "dp_hedge0": sol.hedge0, "bs_delta": quote.delta,
        "price_rel_error": abs(sol.price0 - quote.price) / abs(quote.price),
        "hedge_abs_error": abs(sol.hedge0 - quote.delta),
    })
    write_summary(out / "summary.txt", summary)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "rollout": cmd_rollout,
    "dp-solve": cmd_dp_solve,
    "fqi-solve": cmd_fqi_solve,
    "make-dataset": cmd_make_dataset,
    "tabular-q": cmd_tabular_q,
    "utility-price": cmd_utility_price,
    "bs-quote": cmd_bs_quote,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qhedge",
        description="Discrete-time option pricing and hedging experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        for key in SCHEMA:
            p.add_argument(f"--{key}", dest=key, default=None, metavar="V")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k in SCHEMA and v is not None}
    try:
        cfg = ExperimentConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (QHedgeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
