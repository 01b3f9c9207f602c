"""Point sets on the unit cube used by exactness checks and Monte Carlo.

Sup-norm distances between functions are approximated by maxima over sampled
points.  To reduce the chance that a sampled max badly underestimates the true
sup, the default point set mixes i.i.d. uniform draws with a low-discrepancy
Sobol sequence.
"""

import numpy as np
from scipy.stats import qmc


def _sobol(d, n, seed):
    # draw a power-of-two batch (where Sobol balance holds) and slice
    m = max(1, (n - 1).bit_length())
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    return pts[:n]


def unit_cube_points(d, n, seed, method="mixed"):
    """Return an (n, d) array of points in [0,1]^d.

    method: "uniform" (i.i.d.), "sobol" (scrambled Sobol), or "mixed"
    (half uniform, half Sobol; default).
    """
    if n < 1:
        raise ValueError("need at least one point")
    if method == "uniform":
        rng = np.random.default_rng(seed)
        return rng.random((n, d))
    if method == "sobol":
        return _sobol(d, n, seed)
    if method == "mixed":
        n_sob = n // 2
        n_uni = n - n_sob
        rng = np.random.default_rng(seed)
        pts = [rng.random((n_uni, d))]
        if n_sob > 0:
            pts.append(_sobol(d, n_sob, seed))
        return np.concatenate(pts, axis=0)
    raise ValueError(f"unknown sampling method: {method!r}")


def spawn_rng(seed, *path):
    """Independent generator for a (seed, index...) cell.

    Deterministic in the cell coordinates and independent of the order in
    which cells are evaluated, so concurrent schedules reproduce the same
    stream per cell.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))
