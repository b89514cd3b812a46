"""Exponential-utility indifference pricing under the pricing measure.

For a writer with utility -exp(-g W), the indifference value satisfies the
backward recursion

    h_t = e^{-r dt} (1/g) log E_t[ exp(g (h_{t+1} - u dS_t)) ],

with h_T the payoff and u the hedge minimizing the inner expectation.  For
small risk aversion g the recursion expands in central moments of the
hedged slippage

    h~ = h_{t+1} - u0 dS_t,      u0 = Cov_t(h_{t+1}, dS_t) / Var_t(dS_t),

as  h_t = e^{-r dt} ( E_t[h~] + (g/2) Var_t[h~] + (g^2/6) m3_t[h~] + ... ),
and the optimal hedge expands as u0 + g u1 with
u1 = E_t[h~^2 dS_t] / (2 Var_t(dS_t)).

Conditional moments are taken per basis cell with weights Phi_n(x).  The
increments dS are mean-centered within each cell: the recursion assumes a
measure under which dS is a martingale, and any sample drift left in a
cell would be exploited by the exact optimizer as spurious arbitrage of
size O(1/g).  Discounting applies e^{-r dt} to each step's certainty
equivalent, so the g -> 0, order-0 limit is the discounted risk-neutral
expectation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, SingularSystemError
from .market import OptionContract, PathEnsemble, terminal_payoff

_BISECT_CAP = 200


@dataclass(frozen=True)
class UtilityParams:
    gamma_risk: float
    expansion_order: int = 1

    def __post_init__(self):
        if self.gamma_risk < 0:
            raise ValueError("gamma_risk must be non-negative")
        if self.expansion_order not in (0, 1, 2):
            raise ValueError("expansion_order must be 0, 1 or 2")


@dataclass
class IndifferenceResult:
    """Per-step indifference values and hedges from the backward recursion."""

    h: np.ndarray           # (n_paths, n_steps+1)
    hedge_coeffs: list      # n_steps arrays of shape (M,), hedge chosen at t
    method: str             # "expansion" or "numeric"

    @property
    def price0(self) -> float:
        return float(self.h[0, 0])


class _Cell:
    """Weighted sample of one basis cell with centered increments.

    Only the samples with nonzero weight are kept, so localized bases cost
    O(cell size) per moment rather than O(n_paths).  A singleton cell
    carries a value estimate but no hedge (its centered increment is
    identically zero); a multi-sample cell with no increment dispersion is
    a genuine degeneracy and raises.
    """

    def __init__(self, w, ds, t, n):
        self.idx = np.flatnonzero(w > 0)
        tot = w[self.idx].sum() if self.idx.size else 0.0
        self.empty = tot <= 0
        if self.empty:
            return
        self.w = w[self.idx] / tot
        self.ds_c = ds[self.idx] - float(np.dot(self.w, ds[self.idx]))
        self.var = float(np.dot(self.w, self.ds_c**2))
        self.hedgeable = self.var > 0
        if not self.hedgeable and self.idx.size >= 2:
            raise DegenerateInputError(
                f"zero conditional variance of dS in cell {n} at step {t}"
            )

    def take(self, v):
        return np.asarray(v)[self.idx]

    def mean(self, v_sub):
        return float(np.dot(self.w, v_sub))

    def u0(self, h_sub):
        if not self.hedgeable:
            return 0.0
        return self.mean(h_sub * self.ds_c) / self.var

    def u1(self, h_sub, u0):
        if not self.hedgeable:
            return 0.0
        resid = h_sub - u0 * self.ds_c
        return 0.5 * self.mean(resid**2 * self.ds_c) / self.var


def _cells(paths, t, basis):
    design = basis.evaluate(paths.x_paths[:, t])
    ds = paths.delta_s(t)
    return design, [_Cell(design[:, n], ds, t, n) for n in range(design.shape[1])]


def hedge_expansion(paths: PathEnsemble, h_next, t: int, basis, *,
                    gamma_risk: float = 0.0, order: int = 1) -> np.ndarray:
    """Small-aversion hedge coefficients per basis cell.

    Returns u0 at order 0 and u0 + gamma_risk * u1 at order >= 1, where u0
    is the conditional covariance/variance ratio and u1 the first slippage
    correction.  Empty cells get coefficient 0.
    """
    h_next = np.asarray(h_next, dtype=float)
    _, cells = _cells(paths, t, basis)
    out = np.zeros(len(cells))
    for n, cell in enumerate(cells):
        if cell.empty:
            continue
        h_sub = cell.take(h_next)
        u0 = cell.u0(h_sub)
        out[n] = u0
        if order >= 1 and gamma_risk != 0.0:
            out[n] = u0 + gamma_risk * cell.u1(h_sub, u0)
    return out


def numeric_hedge(paths: PathEnsemble, h_next, t: int, gamma_risk: float,
                  basis) -> np.ndarray:
    """Exact per-cell hedge: minimizes E_t[exp(g (h - u dS))] by bisection
    on its monotone derivative, to 1e-10 in the hedge."""
    if gamma_risk <= 0:
        raise ValueError("numeric hedge requires gamma_risk > 0")
    h_next = np.asarray(h_next, dtype=float)
    _, cells = _cells(paths, t, basis)
    out = np.zeros(len(cells))
    for n, cell in enumerate(cells):
        if cell.empty:
            continue
        if not cell.hedgeable:
            continue  # singleton cell: no hedge estimate, leave 0
        h_sub = cell.take(h_next)
        u0 = cell.u0(h_sub)

        def dobj(u):
            z = gamma_risk * (h_sub - u * cell.ds_c)
            return -float(np.dot(cell.w, cell.ds_c * np.exp(z - z.max())))

        lo, hi = u0 - 1.0, u0 + 1.0
        it = 0
        while dobj(lo) > 0:
            lo -= max(1.0, hi - lo)
            it += 1
            if it > _BISECT_CAP:
                raise SingularSystemError(f"hedge bracketing failed in cell {n}")
        while dobj(hi) < 0:
            hi += max(1.0, hi - lo)
            it += 1
            if it > _BISECT_CAP:
                raise SingularSystemError(f"hedge bracketing failed in cell {n}")
        for _ in range(_BISECT_CAP):
            mid = 0.5 * (lo + hi)
            if dobj(mid) > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-10:
                break
        else:
            raise SingularSystemError(
                f"hedge bisection did not reach 1e-10 in cell {n} at step {t}"
            )
        out[n] = 0.5 * (lo + hi)
    return out


def indifference_price_recursion(paths: PathEnsemble, contract: OptionContract,
                                 gamma_risk: float, basis, *, order: int = 1,
                                 method: str = "expansion",
                                 terminal_values=None) -> IndifferenceResult:
    """Backward indifference valuation of a European payoff.

    ``method="expansion"`` truncates the slippage-moment expansion at
    ``order`` (0, 1 or 2; the variance term is floored at zero);
    ``method="numeric"`` evaluates the exact per-cell log-expectation at
    the bisection hedge, rescaled by the cell maximum before
    exponentiation so large g * payoff cannot overflow.  Both use the same
    per-cell moments, so their difference is the truncation remainder.
    ``terminal_values`` overrides the contract payoff for custom claims.
    """
    if method not in ("expansion", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if method == "numeric" and gamma_risk <= 0:
        raise ValueError("numeric method requires gamma_risk > 0")
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    params = paths.params
    n_steps = paths.n_steps
    disc = np.exp(-params.r * params.dt)

    h = np.empty((paths.n_paths, n_steps + 1))
    if terminal_values is not None:
        h[:, -1] = np.broadcast_to(np.asarray(terminal_values, dtype=float),
                                   (paths.n_paths,))
    else:
        h[:, -1] = terminal_payoff(paths.s_paths[:, -1], contract)
    hedge_coeffs = [None] * n_steps

    for t in range(n_steps - 1, -1, -1):
        h_next = h[:, t + 1]
        design, cells = _cells(paths, t, basis)
        m = len(cells)
        vals = np.zeros(m)
        hedges = np.zeros(m)
        occupied = np.array([not c.empty for c in cells])
        if method == "numeric":
            hedges = numeric_hedge(paths, h_next, t, gamma_risk, basis)
        for n, cell in enumerate(cells):
            if cell.empty:
                continue
            h_sub = cell.take(h_next)
            if method == "numeric":
                z = gamma_risk * (h_sub - hedges[n] * cell.ds_c)
                zmax = float(z.max())
                mean_exp = cell.mean(np.exp(z - zmax))
                if not np.isfinite(mean_exp) or mean_exp <= 0:
                    raise SingularSystemError(
                        f"exponential expectation overflowed in cell {n} at step {t}"
                    )
                vals[n] = (zmax + np.log(mean_exp)) / gamma_risk
            else:
                u0 = cell.u0(h_sub)
                hedges[n] = u0
                resid = h_sub - u0 * cell.ds_c
                mean_r = cell.mean(resid)
                vals[n] = mean_r
                if order >= 1:
                    var_r = max(cell.mean(resid**2) - mean_r**2, 0.0)
                    vals[n] += 0.5 * gamma_risk * var_r
                    hedges[n] = u0 + gamma_risk * cell.u1(h_sub, u0)
                if order >= 2:
                    vals[n] += gamma_risk**2 / 6.0 * cell.mean((resid - mean_r) ** 3)
        hedge_coeffs[t] = hedges
        weights = np.where(occupied[None, :], design, 0.0)
        norm = weights.sum(axis=1)
        if np.any(norm <= 0):
            raise DegenerateInputError(f"state outside every occupied cell at step {t}")
        h[:, t] = disc * (weights @ vals) / norm
    return IndifferenceResult(h=h, hedge_coeffs=hedge_coeffs, method=method)
