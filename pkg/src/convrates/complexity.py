"""Covering numbers of layered function classes via a Lipschitz recursion.

A feed-forward parameterization is summarized by per-layer constants
(gamma_l, lambda_l): gamma_l bounds how much layer l can grow or separate
inputs (sup norm), lambda_l bounds the layer's sensitivity to its own
parameters.  The recursion

    C_0 = lambda_0,   C_{l+1} = gamma_{l+1} C_l + lambda_{l+1} prod_{i<=l} gamma_i

produces the total parameter-to-function Lipschitz constant C: two parameter
vectors within eps of each other (sup norm, entries bounded by B) realize
functions within C * eps in sup norm on [0,1]^d.  Hence an eps/C grid on the
parameter box is an eps-cover of the function class and the metric entropy is
at most N * log(C * B / eps).

For the constrained CNN class (rescaled so hidden layer norms are <= 1 and
the output 1-norm is <= M, with M >= 1) the constants are gamma_l = 1 and
lambda_l = s*J + 1 for the conv layers and gamma_L = M, lambda_L = d*J for
the output contraction.

`empirical_cover_check` validates the recursion constructively on tiny
architectures: random parameter vectors are snapped to the grid and the
realized functions compared on sampled points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cnn import forward, params_from_vector
from .errors import PreconditionError
from .sampling import spawn_rng, unit_cube_points


@dataclass
class LayeredComplexitySpec:
    """Per-layer constants feeding the covering recursion."""

    gammas: np.ndarray
    lambdas: np.ndarray
    param_bound: float
    n_params: int

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=np.float64)
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        if self.gammas.shape != self.lambdas.shape or self.gammas.ndim != 1:
            raise PreconditionError("gammas and lambdas must be equal-length vectors")
        if self.gammas.shape[0] < 1:
            raise PreconditionError("need at least one layer")
        if np.any(self.gammas < 1.0):
            raise PreconditionError("every gamma must be at least 1")
        if np.any(self.lambdas < 0.0):
            raise PreconditionError("every lambda must be nonnegative")
        if self.param_bound < 0:
            raise PreconditionError("parameter bound must be nonnegative")


@dataclass
class EntropyResult:
    """Output of the covering recursion.

    param_lipschitz is the recursion value C; product_bound is the closed
    form (sum of lambdas) * (product of gammas), always an upper bound for C.
    """

    param_lipschitz: float
    product_bound: float
    n_params: int
    param_bound: float

    def entropy_bound(self, eps):
        """N * log(C * B / eps), the metric entropy guarantee at scale eps."""
        if eps <= 0:
            raise PreconditionError("eps must be positive")
        return self.n_params * math.log(self.param_lipschitz * self.param_bound / eps)


def covering_recursion(spec):
    """Run the Lipschitz recursion over the layer constants."""
    g, lam = spec.gammas, spec.lambdas
    c = lam[0]
    prod = g[0]
    for level in range(1, g.shape[0]):
        c = g[level] * c + lam[level] * prod
        prod *= g[level]
    return EntropyResult(
        param_lipschitz=float(c),
        product_bound=float(lam.sum() * prod),
        n_params=spec.n_params,
        param_bound=spec.param_bound,
    )


def param_count(d, s, J, L):
    """Number of stored parameters: (sJ+1)JL + (d+s-sJ)J.

    Equivalently sJ+J for the first layer, (sJ^2+J)(L-1) for the other conv
    layers, and dJ output weights.
    """
    if not 1 <= s <= d:
        raise PreconditionError(f"filter size s={s} outside [1, d={d}]")
    if J < 1 or L < 1:
        raise PreconditionError("channel count and depth must be at least 1")
    return (s * J + 1) * J * L + (d + s - s * J) * J


def cnn_complexity_spec(d, s, J, L, M):
    """Layer constants of the constrained CNN class with norm budget M >= 1."""
    if not 2 <= s <= d:
        raise PreconditionError(f"filter size s={s} outside [2, d={d}]")
    if J < 1 or L < 1:
        raise PreconditionError("channel count and depth must be at least 1")
    if M < 1:
        raise PreconditionError(f"norm budget M={M} must be at least 1")
    gammas = np.ones(L + 1)
    gammas[L] = M
    lambdas = np.full(L + 1, float(s * J + 1))
    lambdas[L] = d * J
    return LayeredComplexitySpec(gammas, lambdas, max(float(M), 1.0), param_count(d, s, J, L))


def cnn_param_lipschitz(d, s, J, L, M):
    """Closed form of the recursion for the CNN constants: L*M*(sJ+1) + dJ."""
    return L * M * (s * J + 1) + d * J


def cnn_lipschitz_bound(d, s, J, L, M):
    """Closed-form product bound (dJ + sJL + L) * M; at most 3*d*J*L*M."""
    return (d * J + s * J * L + L) * M


def entropy_bound_cnn(d, s, J, L, M, eps):
    """Metric entropy guarantee N * log(3*d*J*L*M^2 / eps) for the CNN class."""
    if M < 1:
        raise PreconditionError(f"norm budget M={M} must be at least 1")
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    return param_count(d, s, J, L) * math.log(3 * d * J * L * M * M / eps)


# -- constructive validation on tiny architectures -------------------------

_COVER_PARAM_GUARD = 8
_EXHAUSTIVE_GUARD = 300_000


@dataclass
class CoverCheckReport:
    """Outcome of a brute-force cover validation run."""

    d: int
    s: int
    J: int
    L: int
    eps: float
    n_params: int
    resolution: int
    candidate_count: int
    covering_radius: float
    target_radius: float
    param_lipschitz: float
    n_points: int
    trials: int
    worst_distance: float
    passed: bool
    distances: np.ndarray = field(repr=False)
    note: str = (
        "sup distance approximated by max over sampled points "
        "(mixed uniform and Sobol); the true sup over the cube is intractable"
    )


def _grid_values(B, resolution):
    if resolution < 2:
        raise PreconditionError("grid needs at least 2 points per dimension")
    return np.linspace(-B, B, resolution)


def _snap_to_grid(theta, grid):
    idx = np.clip(np.round((theta - grid[0]) / (grid[1] - grid[0])), 0, len(grid) - 1)
    return grid[idx.astype(int)]


def empirical_cover_check(
    d,
    s,
    J,
    L,
    M,
    eps,
    grid_resolution=None,
    trials=100,
    seed=0,
    n_points=1000,
    exhaustive=False,
):
    """Verify the eps-cover property of the parameter grid on a tiny class.

    Draws `trials` random parameter vectors from [-B, B]^N, snaps each to the
    nearest grid point (the cover candidate the recursion guarantees), and
    measures the sampled sup distance between the two realized functions.
    With `exhaustive=True` the distance is minimized over every grid network
    instead.  Every distance must come out at most eps; a failure falsifies
    the recursion constants.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    if n_points < 1000:
        raise PreconditionError("need at least 1000 sample points")
    n = param_count(d, s, J, L)
    if n > _COVER_PARAM_GUARD:
        raise PreconditionError(
            f"{n} parameters: grid enumeration is limited to {_COVER_PARAM_GUARD}"
        )
    result = covering_recursion(cnn_complexity_spec(d, s, J, L, M))
    B = result.param_bound
    c = result.param_lipschitz
    target_radius = eps / c
    if grid_resolution is None:
        grid_resolution = math.ceil(B / target_radius) + 1
    grid = _grid_values(B, grid_resolution)
    covering_radius = B / (grid_resolution - 1)
    candidate_count = grid_resolution**n

    X = unit_cube_points(d, n_points, seed=seed)
    arch = (d, s, J, L)

    grid_values_all = None
    if exhaustive:
        if candidate_count > _EXHAUSTIVE_GUARD:
            raise PreconditionError(
                f"{candidate_count} grid networks exceed the exhaustive-search guard"
            )
        thetas = np.stack(
            np.meshgrid(*([grid] * n), indexing="ij"), axis=-1
        ).reshape(-1, n)
        grid_values_all = np.stack(
            [forward(params_from_vector(t, *arch), X) for t in thetas]
        )

    distances = np.empty(trials)
    for t in range(trials):
        rng = spawn_rng(seed, t)
        theta = rng.uniform(-B, B, size=n)
        f_trial = forward(params_from_vector(theta, *arch), X)
        if exhaustive:
            dist = np.abs(grid_values_all - f_trial).max(axis=1).min()
        else:
            cand = _snap_to_grid(theta, grid)
            f_cand = forward(params_from_vector(cand, *arch), X)
            dist = np.abs(f_cand - f_trial).max()
        distances[t] = dist

    worst = float(distances.max())
    return CoverCheckReport(
        d=d,
        s=s,
        J=J,
        L=L,
        eps=eps,
        n_params=n,
        resolution=grid_resolution,
        candidate_count=candidate_count,
        covering_radius=covering_radius,
        target_radius=target_radius,
        param_lipschitz=c,
        n_points=n_points,
        trials=trials,
        worst_distance=worst,
        passed=bool(worst <= eps),
        distances=distances,
    )
