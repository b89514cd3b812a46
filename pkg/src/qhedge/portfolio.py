"""Replicating-portfolio evaluation, one-step rewards, and pricing forms.

The hedge portfolio Pi_t = u_t S_t + B_t is evaluated backward from the
terminal condition Pi_T = B_T = payoff with u_T = 0.  Self-financing makes

    Pi_t = e^{-r dt} (Pi_{t+1} - u_t dS_t),   dS_t = S_{t+1} - e^{r dt} S_t,
    B_t  = e^{-r dt} (B_{t+1} + (u_{t+1} - u_t) S_{t+1}),

so uncertainty about the future propagates to today path by path.  On top
of the rollout the module provides the risk-adjusted one-step reward (a
quadratic in the action), the pure risk-minimizing hedge, signed-measure
reweighting and the variance-loaded ask price.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .market import MarketParams, OptionContract, PathEnsemble, terminal_payoff
from .regression import conditional_mean, conditional_variance, ridge_solve


@dataclass(frozen=True)
class RiskParams:
    """Risk aversion lam >= 0 and the per-period discount gamma = e^{-r dt}."""

    lam: float
    gamma: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    @classmethod
    def from_market(cls, lam: float, params: MarketParams) -> "RiskParams":
        return cls(lam=lam, gamma=params.gamma)


class HedgeStrategy:
    """A stock-position rule per time step; the position at expiry is 0.

    Built either from a recorded (n_paths, n_steps) action matrix, from a
    constant, or from per-step basis coefficients.
    """

    def __init__(self, *, matrix=None, constant=None, basis=None, coeffs=None):
        self._matrix = matrix
        self._constant = constant
        self._basis = basis
        self._coeffs = coeffs

    @classmethod
    def zero(cls):
        return cls(constant=0.0)

    @classmethod
    def constant(cls, value: float):
        return cls(constant=float(value))

    @classmethod
    def from_matrix(cls, actions):
        return cls(matrix=np.asarray(actions, dtype=float))

    @classmethod
    def from_coefficients(cls, basis, coeffs):
        """coeffs: sequence of length n_steps of per-basis coefficient vectors."""
        return cls(basis=basis, coeffs=[np.asarray(c, dtype=float) for c in coeffs])

    def actions(self, paths: PathEnsemble) -> np.ndarray:
        """(n_paths, n_steps+1) action matrix with the expiry column zeroed."""
        n, t1 = paths.n_paths, paths.n_steps + 1
        out = np.zeros((n, t1))
        if self._constant is not None:
            out[:, :-1] = self._constant
        elif self._matrix is not None:
            mat = self._matrix
            if mat.shape == (n, t1):
                out[:, :-1] = mat[:, :-1]
            elif mat.shape == (n, t1 - 1):
                out[:, :-1] = mat
            else:
                raise ValueError(
                    f"action matrix shape {mat.shape} does not match the "
                    f"({n}, {t1 - 1}) ensemble"
                )
        else:
            if len(self._coeffs) != t1 - 1:
                raise ValueError(
                    f"{len(self._coeffs)} coefficient vectors for {t1 - 1} steps"
                )
            for t, c in enumerate(self._coeffs):
                out[:, t] = self._basis.evaluate(paths.x_paths[:, t]) @ c
        return out


@dataclass
class PortfolioRollout:
    """Backward-evaluated portfolio values, bank account and realized rewards."""

    pi: np.ndarray         # (n_paths, n_steps+1)
    b_account: np.ndarray  # (n_paths, n_steps+1)
    rewards: np.ndarray    # (n_paths, n_steps+1); column T holds the terminal penalty
    actions: np.ndarray    # (n_paths, n_steps+1), expiry column 0


def rollout_portfolio(paths: PathEnsemble, strategy: HedgeStrategy,
                      contract: OptionContract, risk: RiskParams) -> PortfolioRollout:
    """Evaluate the self-financing portfolio backward along every path."""
    u = strategy.actions(paths)
    n, t1 = u.shape
    s = paths.s_paths
    growth = np.exp(paths.params.r * paths.params.dt)
    payoff = terminal_payoff(s[:, -1], contract)

    pi = np.empty((n, t1))
    b = np.empty((n, t1))
    pi[:, -1] = payoff
    b[:, -1] = payoff
    for t in range(t1 - 2, -1, -1):
        ds = s[:, t + 1] - growth * s[:, t]
        pi[:, t] = (pi[:, t + 1] - u[:, t] * ds) / growth
        b[:, t] = (b[:, t + 1] + (u[:, t + 1] - u[:, t]) * s[:, t + 1]) / growth

    rewards = np.empty((n, t1))
    for t in range(t1 - 1):
        c0, c1, c2 = reward_parabola(
            paths.delta_s(t), pi[:, t + 1], risk,
            pi_center=pi[:, t + 1].mean(), ds_center=paths.delta_s(t).mean(),
        )
        a = u[:, t]
        rewards[:, t] = c0 + c1 * a + c2 * a**2
    # terminal penalty: per-path squared deviation, averaging to -lam Var[Pi_T]
    rewards[:, -1] = -risk.lam * (payoff - payoff.mean()) ** 2
    return PortfolioRollout(pi=pi, b_account=b, rewards=rewards, actions=u)


def reward_parabola(delta_s, pi_next, risk: RiskParams, *,
                    pi_center, ds_center, gain=None):
    """Coefficients (c0, c1, c2) of the one-step reward as a function of a.

        R(a) = gamma * a * gain - lam * gamma^2 * (pi_dev - a * ds_dev)^2

    with pi_dev = pi_next - pi_center and ds_dev = delta_s - ds_center.
    ``gain`` defaults to the raw increment delta_s; centers may be scalars
    (pooled sample means) or per-path conditional means.
    """
    delta_s = np.asarray(delta_s, dtype=float)
    pi_dev = np.asarray(pi_next, dtype=float) - pi_center
    ds_dev = delta_s - ds_center
    if gain is None:
        gain = delta_s
    g, lam = risk.gamma, risk.lam
    c2 = -lam * g**2 * ds_dev**2
    c1 = g * np.asarray(gain, dtype=float) + 2.0 * lam * g**2 * pi_dev * ds_dev
    c0 = -lam * g**2 * pi_dev**2
    return c0, c1, c2


def reward(paths: PathEnsemble, rollout: PortfolioRollout, strategy: HedgeStrategy,
           risk: RiskParams, t: int) -> np.ndarray:
    """Realized per-path reward at step t, with pooled sample-mean centering.

    For t == n_steps this is the terminal variance penalty realization
    -lam (Pi_T - mean)^2, whose cross-sectional mean is -lam Var[Pi_T].
    """
    t1 = paths.n_steps
    if not 0 <= t <= t1:
        raise ValueError(f"t={t} outside [0, {t1}]")
    if t == t1:
        pi_T = rollout.pi[:, -1]
        return -risk.lam * (pi_T - pi_T.mean()) ** 2
    ds = paths.delta_s(t)
    pi_next = rollout.pi[:, t + 1]
    c0, c1, c2 = reward_parabola(ds, pi_next, risk,
                                 pi_center=pi_next.mean(), ds_center=ds.mean())
    a = strategy.actions(paths)[:, t]
    return c0 + c1 * a + c2 * a**2


def local_risk_hedge(paths: PathEnsemble, rollout_or_pi_next, basis, t: int,
                     *, ds_center=None) -> np.ndarray:
    """Basis coefficients of the pure risk-minimizing hedge at step t.

    The hedge is the cross-sectional regression estimate of
    Cov(Pi_{t+1}, dS_t | state) / Var(dS_t | state), i.e. the optimal-action
    system with the risk-return drift term removed.

    ``rollout_or_pi_next`` is either a PortfolioRollout or the Pi_{t+1}
    value vector directly; ``ds_center`` defaults to the model-implied
    conditional mean of dS_t.
    """
    if isinstance(rollout_or_pi_next, PortfolioRollout):
        pi_next = rollout_or_pi_next.pi[:, t + 1]
    else:
        pi_next = np.asarray(rollout_or_pi_next, dtype=float)
    ds = paths.delta_s(t)
    if ds_center is None:
        ds_center = paths.delta_s_mean(t)
    ds_dev = ds - ds_center
    if np.max(np.abs(ds_dev)) == 0.0:
        raise DegenerateInputError(
            f"all price increments identical at step {t}; hedge undefined"
        )
    design = basis.evaluate(paths.x_paths[:, t])
    pi_dev = pi_next - conditional_mean(design, pi_next)
    gram = (design * (ds_dev**2)[:, None]).T @ design
    rhs = design.T @ (pi_dev * ds_dev)
    return ridge_solve(gram, rhs)


def solve_local_risk(paths: PathEnsemble, contract: OptionContract, basis,
                     *, gamma: float = None):
    """Backward risk-minimizing hedge solve, independent of risk aversion.

    Returns (coeffs, pi): per-step hedge coefficient vectors and the
    (n_paths, n_steps+1) portfolio values rolled under that hedge.  This
    is the reference replicating rollout used when rewards must not
    depend on an exploration policy.
    """
    params = paths.params
    if gamma is None:
        gamma = params.gamma
    n_steps = paths.n_steps
    pi = np.empty((paths.n_paths, n_steps + 1))
    pi[:, -1] = terminal_payoff(paths.s_paths[:, -1], contract)
    coeffs = [None] * n_steps
    for t in range(n_steps - 1, -1, -1):
        coeffs[t] = local_risk_hedge(paths, pi[:, t + 1], basis, t)
        a = basis.evaluate(paths.x_paths[:, t]) @ coeffs[t]
        pi[:, t] = gamma * (pi[:, t + 1] - a * paths.delta_s(t))
    return coeffs, pi


def signed_measure_weights(paths: PathEnsemble, t: int) -> np.ndarray:
    """Per-path weights of the signed measure that prices the fair value.

    Weights are p_k [1 - (dS_k - m) m / v] with p_k = 1/N and m, v the
    cross-sectional sample mean and (biased) variance of dS_t; they sum to
    one exactly by construction and may be negative for large moves.
    """
    if paths.n_paths < 2:
        raise ValueError("need at least 2 paths")
    ds = paths.delta_s(t)
    m = ds.mean()
    v = np.mean((ds - m) ** 2)
    if v == 0.0:
        raise DegenerateInputError(f"zero sample variance of dS at step {t}")
    return (1.0 - (ds - m) * m / v) / paths.n_paths


def ask_price(paths: PathEnsemble, rollout: PortfolioRollout, risk: RiskParams,
              basis) -> float:
    """Fair price plus the cumulative discounted variance risk premium.

        ask = E[Pi_0] + lam * sum_t e^{-r t} E[ Var[Pi_t | state_t] ]

    Conditional variances are regression estimates on the configured basis
    (floored at zero), so a deterministic world prices at the discounted
    payoff for any lam.  Monotone non-decreasing in lam on a fixed rollout.
    """
    params = paths.params
    total = float(rollout.pi[:, 0].mean())
    for t in range(paths.n_steps + 1):
        design = basis.evaluate(paths.x_paths[:, t])
        var_t = conditional_variance(design, rollout.pi[:, t])
        total += risk.lam * np.exp(-params.r * t * params.dt) * float(var_t.mean())
    return total
