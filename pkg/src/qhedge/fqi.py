"""Model-free fitted Q-iteration on batches of transition tuples.

The Q-function is quadratic in the action, so it is parametrized per step
by a 3 x M matrix W acting on (1, a, a^2/2) and the state basis:

    Q_t(x, a) = (1, a, a^2/2) @ W_t @ Phi(x).

Each backward step solves one least-squares problem in the 3M stacked
features.  The max over next actions inside the target is evaluated at an
action estimated independently of the W-fit being maximized (either the
closed-form regression action when portfolio values are reconstructible,
or a two-fold cross-fitted vertex otherwise); maximizing the same fitted
parabola on the same sample would bias Q upward through the convexity of
the max.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .dp import action_normal_equations, terminal_q_values
from .errors import DataFormatError, SingularSystemError
from .market import (MarketParams, OptionContract, PathEnsemble,
                     ensemble_from_prices, from_state, terminal_payoff)
from .portfolio import RiskParams
from .regression import conditional_mean, ridge_solve


@dataclass(frozen=True)
class DatasetHeader:
    """Metadata a transition file must carry to be priced model-free."""

    n_paths: int
    n_steps: int
    mu: float
    sigma: float
    r: float
    dt: float
    lam: float
    seed: int
    extras: dict = field(default_factory=dict)

    def market_params(self, s0: float) -> MarketParams:
        return MarketParams(s0=s0, mu=self.mu, sigma=self.sigma, r=self.r,
                            maturity=self.dt * self.n_steps, n_steps=self.n_steps)

    def risk(self) -> RiskParams:
        return RiskParams(lam=self.lam, gamma=float(np.exp(-self.r * self.dt)))

    def contract(self):
        kind = self.extras.get("contract_kind")
        strike = self.extras.get("contract_strike")
        if kind is None or strike is None:
            return None
        return OptionContract(kind=str(kind), strike=float(strike))


class TransitionDataset:
    """Flat (path, t, x, a, r, x_next) records, path-major then time-minor."""

    def __init__(self, path_ids, t, x, a, r, x_next, header: DatasetHeader):
        order = np.lexsort((np.asarray(t), np.asarray(path_ids)))
        self.path_ids = np.asarray(path_ids, dtype=int)[order]
        self.t = np.asarray(t, dtype=int)[order]
        self.x = np.asarray(x, dtype=float)[order]
        self.a = np.asarray(a, dtype=float)[order]
        self.r = np.asarray(r, dtype=float)[order]
        self.x_next = np.asarray(x_next, dtype=float)[order]
        self.header = header
        self._slices = [np.flatnonzero(self.t == ti) for ti in range(header.n_steps)]
        self.validate()

    def __len__(self):
        return self.path_ids.size

    def slice_indices(self, t: int) -> np.ndarray:
        return self._slices[t]

    def validate(self):
        if not np.all(np.isfinite(self.r)):
            raise DataFormatError("non-finite rewards in dataset")
        n_ids = np.unique(self.path_ids).size
        for ti, idx in enumerate(self._slices):
            if idx.size != n_ids:
                raise DataFormatError(
                    f"time slice t={ti} has {idx.size} records for {n_ids} paths"
                )
            if np.unique(self.path_ids[idx]).size != idx.size:
                raise DataFormatError(f"duplicate (path, t={ti}) records")

    def x0(self) -> float:
        """Representative initial state: mean of the t=0 records."""
        return float(self.x[self.slice_indices(0)].mean())

    def path_rows(self) -> np.ndarray:
        """Dense row index per record (path ids need not be contiguous)."""
        uniq = np.unique(self.path_ids)
        return np.searchsorted(uniq, self.path_ids)

    def to_ensemble(self) -> PathEnsemble:
        """Rebuild the price panel underlying the records."""
        h = self.header
        rows = self.path_rows()
        n_ids = rows.max() + 1
        xmat = np.empty((n_ids, h.n_steps + 1))
        xmat[rows, self.t] = self.x
        last = self.t == h.n_steps - 1
        xmat[rows[last], h.n_steps] = self.x_next[last]
        s0 = h.extras.get("s0")
        if s0 is None:
            s0 = float(np.exp(self.x0()))
        params = h.market_params(float(s0))
        s = from_state(xmat, params.times()[None, :], params)
        return ensemble_from_prices(s, params, seed=h.seed)


def build_features(x, a, basis) -> np.ndarray:
    """Stacked features Psi(x, a) of length 3M per record.

    Columns of the outer product of (1, a, a^2/2) with Phi(x), concatenated
    column-major: [Phi_1, a Phi_1, a^2/2 Phi_1, Phi_2, ...].
    """
    design = basis.evaluate(x)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty((design.shape[0], 3 * design.shape[1]))
    out[:, 0::3] = design
    out[:, 1::3] = design * a[:, None]
    out[:, 2::3] = design * (0.5 * a**2)[:, None]
    return out


def _weights_from_vec(wvec: np.ndarray, m: int) -> np.ndarray:
    """Unstack the 3M solution vector into the 3 x M coefficient matrix."""
    return wvec.reshape(m, 3).T


@dataclass
class FQISolution:
    """Per-step quadratic Q-weights with the t=0 price/hedge read-outs."""

    weights: list               # n_steps arrays of shape (3, M)
    terminal_value_coeffs: np.ndarray
    action_coeffs: list | None  # analytic-action coefficients, when available
    price0: float
    hedge0: float
    warnings: list = field(default_factory=list)

    def action_poly(self, basis, x, t: int):
        """(q0, q1, q2) with Q_t(x, a) = q0 + q1 a + q2 a^2 / 2."""
        u = basis.evaluate(x) @ self.weights[t].T
        return u[:, 0], u[:, 1], u[:, 2]


def fqi_backward(dataset: TransitionDataset, basis, contract: OptionContract = None,
                 *, pi_reference=None, action_source: str = "auto",
                 ds_mean: str = "model", risk: RiskParams = None) -> FQISolution:
    """Backward fitted Q-iteration over the dataset's time slices.

    Parameters
    ----------
    contract : OptionContract, optional
        Needed for the terminal condition; defaults to the header's
        contract keys.
    pi_reference : ndarray, optional
        Portfolio value at each record's next state, aligned with the
        dataset's (path-major, time-minor) record order.  When omitted it
        is reconstructed by rolling the recorded actions backward on the
        rebuilt price panel.
    action_source : {"auto", "analytic", "crossfit"}
        How the max-term action at t+1 is estimated: the closed-form
        regression on portfolio values ("analytic", the default whenever
        such values exist) or the two-fold cross-fitted parabola vertex
        ("crossfit", the data-only fallback).
    ds_mean : {"model", "regression"}
        Conditional mean of the price increment inside the action
        regression: implied by the header's mu/r (default), or estimated
        per state on the basis (matches chains whose snapped increments
        carry quantization drift).
    """
    h = dataset.header
    if risk is None:
        risk = h.risk()
    if risk.lam <= 0:
        raise ValueError("fqi_backward requires lam > 0 in the dataset header")
    contract = contract or h.contract()
    if contract is None:
        raise DataFormatError(
            "no contract available (argument or header contract_kind/strike); "
            "the terminal condition is undefined without one"
        )
    if action_source not in ("auto", "analytic", "crossfit"):
        raise ValueError(f"unknown action_source {action_source!r}")
    if ds_mean not in ("model", "regression"):
        raise ValueError(f"unknown ds_mean {ds_mean!r}")

    paths = dataset.to_ensemble()
    params = paths.params
    n_steps = h.n_steps
    m = basis.m
    gamma = risk.gamma

    use_analytic = action_source != "crossfit"
    if use_analytic and pi_reference is None:
        pi_reference = _reconstruct_portfolio(dataset, paths, contract)

    design_term = basis.evaluate(paths.x_paths[:, -1])
    term_coeffs = ridge_solve(design_term.T @ design_term,
                              design_term.T @ terminal_q_values(paths, contract, risk, basis))

    weights = [None] * n_steps
    action_coeffs = [None] * n_steps if use_analytic else None
    warnings = []

    v_cache = None  # max_a Q_{t+1} at the current slice's x_next values
    for t in range(n_steps - 1, -1, -1):
        idx = dataset.slice_indices(t)
        x_t, a_t, r_t = dataset.x[idx], dataset.a[idx], dataset.r[idx]
        if t == n_steps - 1:
            v_cache = basis.evaluate(dataset.x_next[idx]) @ term_coeffs
        targets = r_t + gamma * v_cache

        psi = build_features(x_t, a_t, basis)
        try:
            wvec = ridge_solve(psi.T @ psi, psi.T @ targets)
        except SingularSystemError as exc:
            raise SingularSystemError(f"FQI weights at step {t}: {exc}") from exc
        w = _weights_from_vec(wvec, m)
        weights[t] = w

        u_med = basis.evaluate([float(np.median(x_t))]) @ w.T
        if u_med[0, 2] >= 0:
            warnings.append(
                f"step {t}: fitted Q not concave in the action at the median "
                f"state (quadratic coefficient {u_med[0, 2]:.3e})"
            )

        if use_analytic:
            pi_next = np.asarray(pi_reference)[idx]
            ds = _record_delta_s(dataset, params, idx)
            design_t = basis.evaluate(x_t)
            if ds_mean == "regression":
                # regression centering pairs with mean-centered reward gains,
                # whose conditional expectation (the drift numerator) is zero
                ds_c = conditional_mean(design_t, ds)
                drift = np.zeros_like(ds)
            else:
                ds_c = _record_delta_s_mean(dataset, params, idx)
                drift = ds_c
            eqs = action_normal_equations(
                design_t, ds - ds_c, pi_next - conditional_mean(design_t, pi_next),
                np.broadcast_to(drift, ds.shape), risk)
            try:
                action_coeffs[t] = eqs.solve()
            except SingularSystemError as exc:
                raise SingularSystemError(f"FQI action at step {t}: {exc}") from exc

        if t > 0:
            prev_idx = dataset.slice_indices(t - 1)
            xq = dataset.x_next[prev_idx]
            if use_analytic:
                a_star = basis.evaluate(xq) @ action_coeffs[t]
                u = basis.evaluate(xq) @ w.T
                v_cache = u[:, 0] + a_star * u[:, 1] + 0.5 * a_star**2 * u[:, 2]
            else:
                v_cache = _crossfit_v(dataset, basis, targets, psi, t, prev_idx, m)

    x0 = dataset.x0()
    u0 = basis.evaluate([x0]) @ weights[0].T
    if use_analytic:
        a0 = float((basis.evaluate([x0]) @ action_coeffs[0])[0])
    elif u0[0, 2] < 0:
        a0 = float(-u0[0, 1] / u0[0, 2])
    else:
        raise SingularSystemError("degenerate Q at t=0: no action estimate available")
    price0 = -float(u0[0, 0] + a0 * u0[0, 1] + 0.5 * a0**2 * u0[0, 2])
    return FQISolution(weights=weights, terminal_value_coeffs=term_coeffs,
                       action_coeffs=action_coeffs, price0=price0, hedge0=a0,
                       warnings=warnings)


def _crossfit_v(dataset, basis, targets, psi, t, prev_idx, m):
    """Two-fold vertex estimator of max_a Q_t at the previous slice's
    next-states: fit W on each half of the slice-t records (split by path
    parity) and take both vertex action and value from the fold the
    evaluated path does not belong to.  The vertex is clamped to the
    slice's observed action support (the fitted parabola means nothing
    beyond it), and non-concave points fall back to the value at a = 0."""
    idx = dataset.slice_indices(t)
    a_lo, a_hi = dataset.a[idx].min(), dataset.a[idx].max()
    fold = dataset.path_ids[idx] % 2
    w_fold = []
    for f in (0, 1):
        sel = fold == f
        if not sel.any():
            raise DataFormatError(f"cannot 2-fold split slice t={t}")
        wv = ridge_solve(psi[sel].T @ psi[sel], psi[sel].T @ targets[sel])
        w_fold.append(_weights_from_vec(wv, m))
    xq = dataset.x_next[prev_idx]
    out = np.empty(xq.size)
    prev_fold = dataset.path_ids[prev_idx] % 2
    for f in (0, 1):
        sel = prev_fold == f
        u = basis.evaluate(xq[sel]) @ w_fold[1 - f].T
        concave = u[:, 2] < 0
        a_star = np.where(concave, -u[:, 1] / np.where(concave, u[:, 2], -1.0), 0.0)
        a_star = np.clip(a_star, a_lo, a_hi)
        out[sel] = u[:, 0] + a_star * u[:, 1] + 0.5 * a_star**2 * u[:, 2]
    return out


def _record_delta_s(dataset, params, idx):
    t = dataset.t[idx]
    s_t = from_state(dataset.x[idx], t * params.dt, params)
    s_n = from_state(dataset.x_next[idx], (t + 1) * params.dt, params)
    return s_n - np.exp(params.r * params.dt) * s_t


def _record_delta_s_mean(dataset, params, idx):
    t = dataset.t[idx]
    s_t = from_state(dataset.x[idx], t * params.dt, params)
    return s_t * (np.exp(params.mu * params.dt) - np.exp(params.r * params.dt))


def _reconstruct_portfolio(dataset, paths, contract):
    """Roll the recorded actions backward on the rebuilt panel; returns the
    portfolio value at each record's next state, in record order."""
    h = dataset.header
    rows = dataset.path_rows()
    n_ids = rows.max() + 1
    amat = np.zeros((n_ids, h.n_steps))
    amat[rows, dataset.t] = dataset.a

    growth = np.exp(paths.params.r * paths.params.dt)
    pi = np.empty((n_ids, h.n_steps + 1))
    pi[:, -1] = terminal_payoff(paths.s_paths[:, -1], contract)
    for t in range(h.n_steps - 1, -1, -1):
        ds = paths.s_paths[:, t + 1] - growth * paths.s_paths[:, t]
        pi[:, t] = (pi[:, t + 1] - amat[:, t] * ds) / growth
    return pi[rows, dataset.t + 1]


def extract_price_hedge(solution: FQISolution, basis, x, t: int):
    """Price and hedge read-out from the fitted quadratic at (x, t).

    The hedge is the parabola vertex -q1/q2 when the fit is concave;
    otherwise it falls back to the stored analytic-action coefficients.
    The price is -Q_t(x, hedge).
    """
    q0, q1, q2 = solution.action_poly(basis, [float(x)], t)
    q0, q1, q2 = float(q0[0]), float(q1[0]), float(q2[0])
    if q2 < 0:
        hedge = -q1 / q2
    elif solution.action_coeffs is not None:
        hedge = float((basis.evaluate([float(x)]) @ solution.action_coeffs[t])[0])
    else:
        raise SingularSystemError(
            f"fitted Q degenerate in the action at step {t} and no fallback action"
        )
    price = -(q0 + hedge * q1 + 0.5 * hedge**2 * q2)
    return price, hedge


# ---------------------------------------------------------------------------
# dataset construction and CSV round-trip

def build_dataset(paths: PathEnsemble, actions, rewards, lam: float,
                  contract: OptionContract = None, seed=None) -> TransitionDataset:
    """Flatten an ensemble plus per-step actions/rewards into records."""
    actions = np.asarray(actions, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    n, t1 = paths.s_paths.shape
    n_steps = t1 - 1
    if actions.shape[1] == t1:
        actions = actions[:, :-1]
    if rewards.shape[1] == t1:
        rewards = rewards[:, :-1]
    if actions.shape != (n, n_steps) or rewards.shape != (n, n_steps):
        raise ValueError("actions/rewards must be (n_paths, n_steps)")
    p = paths.params
    extras = {"s0": p.s0}
    if contract is not None:
        extras["contract_kind"] = contract.kind
        extras["contract_strike"] = contract.strike
    header = DatasetHeader(
        n_paths=n, n_steps=n_steps, mu=p.mu, sigma=p.sigma, r=p.r, dt=p.dt,
        lam=lam, seed=seed if seed is not None else (paths.seed or 0),
        extras=extras,
    )
    pid = np.repeat(np.arange(n), n_steps)
    ts = np.tile(np.arange(n_steps), n)
    return TransitionDataset(
        path_ids=pid, t=ts,
        x=paths.x_paths[:, :-1].ravel(),
        a=actions.ravel(), r=rewards.ravel(),
        x_next=paths.x_paths[:, 1:].ravel(),
        header=header,
    )


_FMT = "%.17g"


def write_dataset_csv(dataset: TransitionDataset, path):
    h = dataset.header
    lines = [
        f"# n_paths={h.n_paths}",
        f"# n_steps={h.n_steps}",
        f"# mu={_FMT % h.mu}",
        f"# sigma={_FMT % h.sigma}",
        f"# r={_FMT % h.r}",
        f"# dt={_FMT % h.dt}",
        f"# lambda={_FMT % h.lam}",
        f"# seed={h.seed}",
    ]
    for k in sorted(h.extras):
        v = h.extras[k]
        lines.append(f"# {k}={_FMT % v if isinstance(v, float) else v}")
    lines.append("path,t,x,a,r,x_next")
    for i in range(len(dataset)):
        lines.append(
            f"{dataset.path_ids[i]},{dataset.t[i]},"
            f"{_FMT % dataset.x[i]},{_FMT % dataset.a[i]},"
            f"{_FMT % dataset.r[i]},{_FMT % dataset.x_next[i]}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset_csv(path) -> TransitionDataset:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            elif line.startswith("path,"):
                continue
            else:
                rows.append(line)
    required = ("n_paths", "n_steps", "mu", "sigma", "r", "dt", "lambda", "seed")
    missing = [k for k in required if k not in meta]
    if missing:
        raise DataFormatError(f"dataset header missing keys: {missing}")
    extras = {}
    for k, v in meta.items():
        if k in required:
            continue
        try:
            extras[k] = float(v)
        except ValueError:
            extras[k] = v
    header = DatasetHeader(
        n_paths=int(meta["n_paths"]), n_steps=int(meta["n_steps"]),
        mu=float(meta["mu"]), sigma=float(meta["sigma"]), r=float(meta["r"]),
        dt=float(meta["dt"]), lam=float(meta["lambda"]), seed=int(meta["seed"]),
        extras=extras,
    )
    try:
        data = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",",
                          ndmin=2, dtype=float)
    except ValueError as exc:
        raise DataFormatError(f"malformed dataset rows: {exc}") from exc
    if data.shape[1] != 6:
        raise DataFormatError(f"expected 6 columns, got {data.shape[1]}")
    return TransitionDataset(
        path_ids=data[:, 0].astype(int), t=data[:, 1].astype(int),
        x=data[:, 2], a=data[:, 3], r=data[:, 4], x_next=data[:, 5],
        header=header,
    )
