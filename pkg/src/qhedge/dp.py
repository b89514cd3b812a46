"""Semi-analytic backward solver for the risk-adjusted hedging MDP.

When the dynamics are known, the Bellman recursion alternates two linear
regressions per step: the optimal action (closed form, since the one-step
reward is an exact parabola in the action) and the optimal Q-function fit
to the targets R_t + gamma * Q_{t+1}.  The option's ask price is the
negative of the optimal Q at the initial state, and the optimal hedge is
its action argument — one object carries both.

The Q-target uses Q_{t+1} evaluated at the previously computed optimal
action, never at the vertex of a parabola refit on the same sample; that
substitution is what keeps the recursion free of max-operator
overestimation bias.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularSystemError
from .market import OptionContract, PathEnsemble, terminal_payoff
from .portfolio import RiskParams, reward_parabola
from .regression import (NormalEquations, conditional_mean,
                         conditional_variance, ridge_epsilon, ridge_solve)


@dataclass
class DPSolution:
    """Per-step hedge and value coefficients plus the t=0 read-outs."""

    hedge_coeffs: list          # n_steps arrays of shape (M,)
    value_coeffs: list          # n_steps+1 arrays of shape (M,); last is terminal
    price0: float
    hedge0: float


def action_normal_equations(design, ds_dev, pi_dev, drift, risk: RiskParams) -> NormalEquations:
    """Gram system for the optimal-action coefficients.

        gram = Phi^T diag(ds_dev^2) Phi
        rhs  = Phi^T (pi_dev * ds_dev + drift / (2 gamma lam))
    """
    gram = (design * (ds_dev**2)[:, None]).T @ design
    rhs = design.T @ (pi_dev * ds_dev + drift / (2.0 * risk.gamma * risk.lam))
    return NormalEquations(gram, rhs, ridge_epsilon(gram))


def optimal_action_coeffs(paths: PathEnsemble, pi_next, basis, risk: RiskParams,
                          t: int, *, pi_center=None, ds_center=None,
                          drift=None) -> np.ndarray:
    """Coefficients of the risk-adjusted optimal action at step t.

    The fitted action is the conditional version of
    (E[pi_dev * ds_dev] + E[drift] / (2 gamma lam)) / E[ds_dev^2].

    Defaults: ``pi_center`` is the regression estimate of E[Pi_{t+1}|state],
    ``ds_center`` the model-implied conditional mean of dS_t, and ``drift``
    equals ``ds_center`` (so the risk-return term carries no sampling noise
    and vanishes identically when mu == r).  Pass ``drift=paths.delta_s(t)``
    for the raw per-path sample form.
    """
    if risk.lam <= 0:
        raise ValueError(
            "optimal action needs lam > 0; use portfolio.local_risk_hedge for "
            "the pure risk-minimizing hedge"
        )
    pi_next = np.asarray(pi_next, dtype=float)
    ds = paths.delta_s(t)
    if ds_center is None:
        ds_center = paths.delta_s_mean(t)
    if drift is None:
        drift = ds_center
    design = basis.evaluate(paths.x_paths[:, t])
    if pi_center is None:
        pi_center = conditional_mean(design, pi_next)
    eqs = action_normal_equations(design, ds - ds_center, pi_next - pi_center,
                                  np.broadcast_to(drift, ds.shape), risk)
    try:
        return eqs.solve()
    except SingularSystemError as exc:
        raise SingularSystemError(f"optimal action at step {t}: {exc}") from exc


def optimal_q_coeffs(paths: PathEnsemble, targets, basis, t: int) -> np.ndarray:
    """Least-squares fit of the Bellman targets on the state basis at step t."""
    design = basis.evaluate(paths.x_paths[:, t])
    try:
        return ridge_solve(design.T @ design, design.T @ np.asarray(targets, dtype=float))
    except SingularSystemError as exc:
        raise SingularSystemError(f"Q fit at step {t}: {exc}") from exc


def terminal_q_values(paths: PathEnsemble, contract: OptionContract,
                      risk: RiskParams, basis) -> np.ndarray:
    """Per-path terminal Q: -payoff minus lam times the regression estimate
    of the payoff variance conditional on the terminal state (floored at 0)."""
    payoff = terminal_payoff(paths.s_paths[:, -1], contract)
    design = basis.evaluate(paths.x_paths[:, -1])
    var_pen = conditional_variance(design, payoff)
    return -payoff - risk.lam * var_pen


def solve_dp(paths: PathEnsemble, contract: OptionContract, risk: RiskParams,
             basis, *, centering: str = "conditional", ds_mean: str = "model",
             gain: str = "raw") -> DPSolution:
    """Backward dynamic-programming solve of the hedging MDP.

    Per step (t = T-1 .. 0): fit the optimal action, re-evaluate the
    realized rewards at that action, fit the Q-coefficients to
    R_t + gamma * Q_{t+1}, and roll the portfolio back one step.

    Parameters
    ----------
    centering : {"conditional", "pooled"}
        How Pi_{t+1} is centered inside the variance penalty: regression
        estimate of its conditional mean (default) or the pooled
        cross-sectional sample mean.
    ds_mean : {"model", "regression"}
        Conditional mean of dS_t used for centering and for the
        risk-return drift term: model-implied S_t(e^{mu dt} - e^{r dt})
        (default) or a basis-regression estimate.
    gain : {"raw", "centered"}
        Whether the reward's linear term uses the raw increment dS_t or
        the centered one (the latter matches the discretized-chain MDP,
        whose increments are martingale-enforced per state).
    """
    if risk.lam <= 0:
        raise ValueError("solve_dp requires lam > 0")
    if centering not in ("conditional", "pooled"):
        raise ValueError(f"unknown centering {centering!r}")
    if ds_mean not in ("model", "regression"):
        raise ValueError(f"unknown ds_mean {ds_mean!r}")
    if gain not in ("raw", "centered"):
        raise ValueError(f"unknown gain {gain!r}")

    n_steps = paths.n_steps
    designs = [basis.evaluate(paths.x_paths[:, t]) for t in range(n_steps + 1)]

    value_coeffs = [None] * (n_steps + 1)
    hedge_coeffs = [None] * n_steps

    q_term = terminal_q_values(paths, contract, risk, basis)
    value_coeffs[n_steps] = ridge_solve(designs[-1].T @ designs[-1],
                                        designs[-1].T @ q_term)
    q_next = designs[-1] @ value_coeffs[n_steps]

    pi = terminal_payoff(paths.s_paths[:, -1], contract)
    for t in range(n_steps - 1, -1, -1):
        design = designs[t]
        ds = paths.delta_s(t)
        if ds_mean == "model":
            ds_c = paths.delta_s_mean(t)
        else:
            ds_c = conditional_mean(design, ds)
        if centering == "conditional":
            pi_c = conditional_mean(design, pi)
        else:
            pi_c = pi.mean()
        drift = np.zeros_like(ds) if gain == "centered" else ds_c
        gain_vals = ds - ds_c if gain == "centered" else ds

        eqs = action_normal_equations(design, ds - ds_c, pi - pi_c,
                                      np.broadcast_to(drift, ds.shape), risk)
        try:
            phi = eqs.solve()
        except SingularSystemError as exc:
            raise SingularSystemError(f"optimal action at step {t}: {exc}") from exc
        hedge_coeffs[t] = phi
        a = design @ phi

        c0, c1, c2 = reward_parabola(ds, pi, risk, pi_center=pi_c,
                                     ds_center=ds_c, gain=gain_vals)
        target = c0 + c1 * a + c2 * a**2 + risk.gamma * q_next
        try:
            value_coeffs[t] = ridge_solve(design.T @ design, design.T @ target)
        except SingularSystemError as exc:
            raise SingularSystemError(f"Q fit at step {t}: {exc}") from exc
        q_next = design @ value_coeffs[t]
        pi = risk.gamma * (pi - a * ds)

    phi0 = basis.evaluate([paths.x_paths[0, 0]])
    price0 = -float((phi0 @ value_coeffs[0])[0])
    hedge0 = float((phi0 @ hedge_coeffs[0])[0])
    return DPSolution(hedge_coeffs=hedge_coeffs, value_coeffs=value_coeffs,
                      price0=price0, hedge0=hedge0)


def price_and_hedge_surface(solution: DPSolution, basis, states, t: int):
    """Evaluate the fitted price and hedge over arbitrary states at step t.

    prices = -Phi(states) @ value_coeffs[t]; hedges likewise from the
    action coefficients (zero at expiry, where the position is closed).
    """
    n_steps = len(solution.hedge_coeffs)
    if not 0 <= t <= n_steps:
        raise ValueError(f"t={t} outside [0, {n_steps}]")
    design = basis.evaluate(states)
    prices = -(design @ solution.value_coeffs[t])
    if t < n_steps:
        hedges = design @ solution.hedge_coeffs[t]
    else:
        hedges = np.zeros(design.shape[0])
    return prices, hedges
