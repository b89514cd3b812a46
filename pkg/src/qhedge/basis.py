"""Scalar basis families over the state space and their design matrices.

Three families cover the regression solvers' needs: indicator buckets
(``one_hot_grid``), which turn every regression into a per-bucket average
and bridge to the finite-state chain; cubic B-splines (the default smooth
choice); and Gaussian kernels (``rbf``).  One basis is built once from the
pooled states of all time steps and shared across steps — the state
variable is driftless, so its support is stable over the horizon.
"""

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateInputError

KINDS = ("one_hot_grid", "bspline", "rbf")


class BasisSet:
    """A family of m scalar functions evaluable into an (N, m) design matrix.

    States outside the construction range evaluate by clamping to the
    nearest edge, so late-horizon outliers never extrapolate.
    """

    def __init__(self, kind, m, *, edges=None, knots=None, degree=None,
                 centers=None, bandwidth=None):
        self.kind = kind
        self.m = m
        self.edges = edges          # one_hot_grid bucket edges, len m+1
        self.knots = knots          # bspline full knot vector
        self.degree = degree
        self.centers = centers      # rbf centers
        self.bandwidth = bandwidth
        if kind == "bspline":
            self._lo = knots[degree]
            self._hi = knots[-degree - 1]

    def evaluate(self, states) -> np.ndarray:
        """Design matrix Phi with Phi[i, n] = basis_n(states[i])."""
        x = np.atleast_1d(np.asarray(states, dtype=float))
        if x.size == 0:
            return np.zeros((0, self.m))
        if self.kind == "one_hot_grid":
            out = np.zeros((x.size, self.m))
            out[np.arange(x.size), self.bucket_of(x)] = 1.0
            return out
        if self.kind == "bspline":
            hi = np.nextafter(self._hi, self._lo)
            xc = np.clip(x, self._lo, hi)
            return BSpline.design_matrix(xc, self.knots, self.degree).toarray()
        # rbf
        z = (x[:, None] - self.centers[None, :]) / self.bandwidth
        return np.exp(-0.5 * z**2)

    def bucket_of(self, states) -> np.ndarray:
        """Bucket index per state (one_hot_grid only); out-of-range clamps."""
        if self.kind != "one_hot_grid":
            raise ValueError("bucket_of only applies to one_hot_grid bases")
        x = np.asarray(states, dtype=float)
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.m - 1)

    @property
    def grid_centers(self) -> np.ndarray:
        """Bucket midpoints (one_hot_grid) or kernel/knot centers."""
        if self.kind == "one_hot_grid":
            return 0.5 * (self.edges[:-1] + self.edges[1:])
        if self.kind == "rbf":
            return self.centers
        return np.asarray(self.knots[self.degree:-self.degree - 1])


def build_basis(kind, m, state_samples, *, degree=3, bandwidth=None) -> BasisSet:
    """Build a basis sized to the sample distribution.

    B-spline breakpoints and RBF centers sit on equally spaced quantiles of
    the samples, padded by one spacing beyond the observed min/max; one-hot
    buckets are uniform over [min, max].

    Parameters
    ----------
    kind : {"one_hot_grid", "bspline", "rbf"}
    m : int
        Number of basis functions.
    state_samples : array_like
        Pooled state observations (typically all steps of an ensemble).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown basis kind {kind!r}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    samples = np.asarray(state_samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("state_samples must be non-empty")
    lo, hi = float(samples.min()), float(samples.max())

    if kind == "one_hot_grid":
        if m > np.unique(samples).size:
            raise ValueError(
                f"one_hot_grid with m={m} exceeds the {np.unique(samples).size} "
                "distinct sample values"
            )
        if hi == lo:
            hi = lo + 1e-8  # constant samples: one occupied bucket
        return BasisSet(kind, m, edges=np.linspace(lo, hi, m + 1))

    if hi == lo:
        raise DegenerateInputError("smooth bases need dispersed samples")

    if kind == "bspline":
        if m < degree + 2:
            raise ValueError(f"bspline needs m >= degree + 2, got m={m}")
        inner = np.quantile(samples, np.linspace(0.0, 1.0, m - degree - 1))
        inner = np.unique(inner)
        if inner.size < 2:
            raise DegenerateInputError("sample quantiles collapse; reduce m")
        pad_lo = inner[0] - (inner[1] - inner[0])
        pad_hi = inner[-1] + (inner[-1] - inner[-2])
        breaks = np.concatenate([[pad_lo], inner, [pad_hi]])
        m_eff = breaks.size + degree - 1
        knots = np.concatenate([[breaks[0]] * degree, breaks, [breaks[-1]] * degree])
        return BasisSet(kind, m_eff, knots=knots, degree=degree)

    # rbf
    if m >= 3:
        inner = np.quantile(samples, np.linspace(0.0, 1.0, m - 2))
        inner = np.unique(inner)
        spacing = inner[1] - inner[0] if inner.size > 1 else (hi - lo)
        centers = np.concatenate([[inner[0] - spacing], inner, [inner[-1] + spacing]])
    else:
        centers = np.quantile(samples, np.linspace(0.0, 1.0, m))
    if bandwidth is None:
        bandwidth = float(np.diff(centers).mean()) if centers.size > 1 else (hi - lo)
    return BasisSet(kind, centers.size, centers=centers, bandwidth=bandwidth)


def evaluate(basis: BasisSet, states) -> np.ndarray:
    """Module-level alias for :meth:`BasisSet.evaluate`."""
    return basis.evaluate(states)
