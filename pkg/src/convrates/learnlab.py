"""Synthetic learning problems, constrained ERM training, and rate fits.

Targets are closed-form functions whose regularity constants are certified
analytically, not estimated: regression families carry an explicit Lipschitz
constant and sup bound, class-probability families carry margin-noise
(exponent q: P(|2 eta - 1| <= t) <= c_q t^q) and small-value (exponent beta:
P(eta <= t) and P(1 - eta <= t) <= C_beta t^beta) certificates together with
the closed-form marginal laws the certificates are derived from.

Training minimizes the empirical risk over the constrained CNN class by
multi-restart Adam with best-iterate selection; after every step the output
layer is scaled down whenever the path norm exceeds the budget M, which is an
exact projection back into the class because the path norm is absolutely
homogeneous in the output layer.  The returned parameters therefore always
satisfy the constraint, and their full-sample risk never exceeds the risk at
initialization.

Exact empirical minimization over CNNs is intractable, so measured errors are
an upper proxy for the ERM excess risk: rate experiments report trends and
fitted log-log slopes next to the theoretical exponent, not verdicts on it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import links
from .cnn import (
    CnnParams,
    ConvLayer,
    backward,
    forward,
    param_vector,
    params_from_vector,
    path_norm,
    truncate,
)
from .errors import PreconditionError, TrainingFailure
from .sampling import spawn_rng

LOSSES = ("squared", "hinge", "logistic")


# -- targets ----------------------------------------------------------------


@dataclass
class TargetSpec:
    """A closed-form target with analytically certified constants."""

    kind: str  # "regression" or "class-probability"
    fn: callable = field(repr=False)
    d: int
    name: str
    smoothness: float | None = None
    holder_radius: float | None = None
    sup_bound: float | None = None
    lipschitz: float | None = None
    noise_exponent: float | None = None  # q
    noise_constant: float | None = None  # c_q
    svb_exponent: float | None = None  # beta
    svb_constant: float | None = None  # C_beta
    margin_cdf: callable | None = field(default=None, repr=False)
    small_value_cdf: callable | None = field(default=None, repr=False)
    detail: str = ""

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def make_regression_target(family, params=None, seed=0):
    """Closed-form regression function with certified (smoothness, radius).

    Families:
      trig-mixture          sum_j a_j sin(2 pi f_j x_{c_j} + p_j) / (2 pi f_j)
      gaussian-bump-mixture sum_j a_j exp(-||x - mu_j||^2 / (2 w_j^2))
      coordinate-clamp      offset + clamp(slope (x_c - center), -level, level)

    All families are certified Lipschitz (smoothness 1); the radius is the
    sup bound plus the Lipschitz constant.
    """
    params = dict(params or {})
    d = int(params.pop("d", 2))
    rng = spawn_rng(seed, 0)

    if family == "trig-mixture":
        k = int(params.pop("n_terms", 3))
        amps = np.asarray(params.pop("amps", rng.uniform(0.4, 1.0, k)), dtype=float)
        freqs = np.asarray(params.pop("freqs", rng.integers(1, 4, k)), dtype=float)
        coords = np.asarray(params.pop("coords", rng.integers(0, d, k)), dtype=int)
        phases = np.asarray(params.pop("phases", rng.uniform(0, 2 * np.pi, k)), dtype=float)
        _reject_unknown(params, family)

        def fn(X):
            out = np.zeros(len(X))
            for a, f, c, p in zip(amps, freqs, coords, phases):
                out += a * np.sin(2 * np.pi * f * X[:, c] + p) / (2 * np.pi * f)
            return out

        sup = float(np.sum(np.abs(amps) / (2 * np.pi * freqs)))
        lip = float(np.sum(np.abs(amps)))
        return TargetSpec(
            kind="regression",
            fn=fn,
            d=d,
            name="trig-mixture",
            smoothness=1.0,
            holder_radius=sup + lip,
            sup_bound=sup,
            lipschitz=lip,
            detail=f"{k} sine terms; |h| <= {sup:.4g}, Lipschitz <= {lip:.4g}",
        )

    if family == "gaussian-bump-mixture":
        k = int(params.pop("n_terms", 3))
        amps = np.asarray(params.pop("amps", rng.uniform(-1.0, 1.0, k)), dtype=float)
        centers = np.asarray(params.pop("centers", rng.random((k, d))), dtype=float)
        widths = np.asarray(params.pop("widths", rng.uniform(0.2, 0.5, k)), dtype=float)
        _reject_unknown(params, family)

        def fn(X):
            out = np.zeros(len(X))
            for a, mu, w in zip(amps, centers, widths):
                out += a * np.exp(-np.sum((X - mu) ** 2, axis=1) / (2 * w * w))
            return out

        sup = float(np.sum(np.abs(amps)))
        # sup of |grad| of a bump with width w is |a| e^(-1/2) / w
        lip = float(np.sum(np.abs(amps) * math.exp(-0.5) / widths))
        return TargetSpec(
            kind="regression",
            fn=fn,
            d=d,
            name="gaussian-bump-mixture",
            smoothness=1.0,
            holder_radius=sup + lip,
            sup_bound=sup,
            lipschitz=lip,
            detail=f"{k} bumps; |h| <= {sup:.4g}, Lipschitz <= {lip:.4g}",
        )

    if family == "coordinate-clamp":
        slope = float(params.pop("slope", 4.0))
        coord = int(params.pop("coord", 0))
        center = float(params.pop("center", 0.5))
        level = float(params.pop("level", 1.0))
        offset = float(params.pop("offset", 0.0))
        _reject_unknown(params, family)

        def fn(X):
            return offset + np.clip(slope * (X[:, coord] - center), -level, level)

        sup = abs(offset) + level
        return TargetSpec(
            kind="regression",
            fn=fn,
            d=d,
            name="coordinate-clamp",
            smoothness=1.0,
            holder_radius=sup + abs(slope),
            sup_bound=sup,
            lipschitz=abs(slope),
            detail=f"clamp slope {slope} on coordinate {coord}",
        )

    raise PreconditionError(f"unknown regression family: {family!r}")


def _reject_unknown(params, family):
    if params:
        raise PreconditionError(f"unknown {family} parameters: {sorted(params)}")


def make_eta_tsybakov(c, d=2):
    """Ramp class probability (1 + clamp(c (x1 - 1/2), -1, 1)) / 2, uniform X.

    The margin law is P(|2 eta - 1| <= t) = min(2t/c, 1) for t < 1 and 1 for
    t >= 1, so the noise exponent is q = 1 with constant c_q = max(1, 2/c)
    (the max makes the bound valid for every t > 0, including t >= 1 where
    the clamped mass concentrates).  c = inf gives the step eta with margin
    identically 1 (the q = inf regime).
    """
    if not c > 0:
        raise PreconditionError("ramp steepness must be positive")
    if math.isinf(c):

        def fn(X):
            return (1.0 + links.sign_plus(X[:, 0] - 0.5)) / 2.0

        def margin_cdf(t):
            t = np.asarray(t, dtype=np.float64)
            return np.where(t >= 1.0, 1.0, 0.0)

        return TargetSpec(
            kind="class-probability",
            fn=fn,
            d=d,
            name="eta-step",
            noise_exponent=math.inf,
            noise_constant=1.0,
            margin_cdf=margin_cdf,
            detail="step eta; |2 eta - 1| = 1 almost surely",
        )

    def fn(X):
        return (1.0 + np.clip(c * (X[:, 0] - 0.5), -1.0, 1.0)) / 2.0

    def margin_cdf(t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t >= 1.0, 1.0, np.minimum(2 * t / c, 1.0))

    return TargetSpec(
        kind="class-probability",
        fn=fn,
        d=d,
        name="eta-ramp",
        smoothness=1.0,
        holder_radius=max(1.0, c / 2),
        sup_bound=1.0,
        lipschitz=c / 2,
        noise_exponent=1.0,
        noise_constant=max(1.0, 2.0 / c),
        margin_cdf=margin_cdf,
        detail=f"ramp steepness {c}; P(|2 eta - 1| <= t) = min(2t/{c}, 1) below 1",
    )


def make_eta_svb(beta, d=2, floor=0.25):
    """Class probability with certified small-value exponent beta in [0, 1].

    beta = 0 returns an eta bounded away from 0 and 1 (trivially certified
    with C_beta = 1); beta > 0 returns eta = x1^(1/beta), whose marginal is
    P(eta <= t) = t^beta exactly and P(1 - eta <= t) = 1 - (1-t)^beta
    <= t^beta by concavity, so C_beta = 1 on both sides.
    """
    if not 0 <= beta <= 1:
        raise PreconditionError("small-value exponent must lie in [0, 1]")
    if beta == 0:
        if not 0 < floor < 0.5:
            raise PreconditionError("floor must lie in (0, 1/2)")
        span = 1.0 - 2 * floor

        def fn(X):
            return floor + span * X[:, 0]

        def small_value_cdf(t):
            t = np.asarray(t, dtype=np.float64)
            low = np.clip((t - floor) / span, 0.0, 1.0)
            return low, low

        return TargetSpec(
            kind="class-probability",
            fn=fn,
            d=d,
            name="eta-svb0",
            smoothness=1.0,
            holder_radius=1.0,
            sup_bound=1.0 - floor,
            lipschitz=span,
            svb_exponent=0.0,
            svb_constant=1.0,
            small_value_cdf=small_value_cdf,
            detail=f"eta in [{floor}, {1 - floor}]; small-value condition trivial",
        )

    power = 1.0 / beta

    def fn(X):
        return X[:, 0] ** power

    def small_value_cdf(t):
        t = np.asarray(t, dtype=np.float64)
        t = np.clip(t, 0.0, 1.0)
        return t**beta, 1.0 - (1.0 - t) ** beta

    return TargetSpec(
        kind="class-probability",
        fn=fn,
        d=d,
        name="eta-svb",
        smoothness=1.0,
        holder_radius=max(1.0, power),
        sup_bound=1.0,
        lipschitz=power,
        svb_exponent=beta,
        svb_constant=1.0,
        small_value_cdf=small_value_cdf,
        detail=f"eta = x1^{power:.4g}; P(eta <= t) = t^{beta} exactly",
    )


# -- datasets ---------------------------------------------------------------


@dataclass
class NoiseSpec:
    """Regression label noise; both families have all exponential moments of
    Y^2 controlled (gaussian: E exp(c Y^2) < inf for c < 1/(4 sigma^2) once
    the bounded mean is peeled off; bounded uniform: for every c)."""

    kind: str = "gaussian"
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise PreconditionError(f"unknown noise family: {self.kind!r}")
        if self.scale < 0:
            raise PreconditionError("noise scale must be nonnegative")

    def admissible_moment_exponent(self, mean_bound):
        """A c > 0 with E exp(c Y^2) < inf, from the analytic argument."""
        if self.kind == "uniform" or self.scale == 0:
            return math.inf
        return 1.0 / (4 * self.scale**2) * 0.999


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    spec: TargetSpec
    noise: NoiseSpec | None
    seed: int

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def kind(self):
        return self.spec.kind


def sample_dataset(spec, n, noise=None, seed=0):
    """Draw n i.i.d. pairs: X uniform on the cube, labels from the target.

    Regression labels are h(X) plus the configured noise; classification
    labels are +-1 with P(Y = 1 | X) = eta(X).  Reproducible from
    (spec, n, noise, seed).
    """
    if n < 1:
        raise PreconditionError("need at least one sample")
    rng = spawn_rng(seed, 0)
    X = rng.random((n, spec.d))
    if spec.kind == "regression":
        noise = noise or NoiseSpec("gaussian", 0.0)
        y = spec(X)
        if noise.scale > 0:
            if noise.kind == "gaussian":
                y = y + noise.scale * rng.standard_normal(n)
            else:
                y = y + rng.uniform(-noise.scale, noise.scale, n)
        return Dataset(X, y, spec, noise, seed)
    if spec.kind == "class-probability":
        y = np.where(rng.random(n) < spec(X), 1.0, -1.0)
        return Dataset(X, y, spec, None, seed)
    raise PreconditionError(f"unknown target kind: {spec.kind!r}")


# -- training ---------------------------------------------------------------


@dataclass
class TrainConfig:
    s: int = 2
    J: int = 6
    L: int = 2
    M: float = 10.0
    loss: str = "squared"
    trunc_level: float = 1.0
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.02
    final_learning_rate: float | None = None  # geometric decay target
    restarts: int = 2
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise PreconditionError(f"unknown loss: {self.loss!r}")
        if self.M < 1:
            raise PreconditionError("norm budget M must be at least 1")
        if self.trunc_level <= 0:
            raise PreconditionError("truncation level must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.restarts < 1:
            raise PreconditionError("epochs, batch size, restarts must be positive")


@dataclass
class TrainTrace:
    """Per-epoch full-sample risks for each restart, and the selection made."""

    risks: list  # one array per restart; entry 0 is the risk at init
    best_restart: int
    best_epoch: int
    best_risk: float
    wall_time: float


def _pointwise_loss(loss, f_vals, y, level):
    t = np.clip(f_vals, -level, level)
    if loss == "squared":
        return (t - y) ** 2
    if loss == "hinge":
        return np.maximum(1.0 - y * t, 0.0)
    return np.logaddexp(0.0, -y * t)  # logistic


def _loss_grad(loss, f_vals, y, level):
    """d loss / d f per sample; the clip gate uses subgradient 0 at the edge."""
    t = np.clip(f_vals, -level, level)
    gate = (np.abs(f_vals) < level).astype(np.float64)
    if loss == "squared":
        return 2.0 * (t - y) * gate
    if loss == "hinge":
        return -y * (1.0 - y * t > 0) * gate
    return -y * links.logistic(-y * t) * gate


def empirical_risk(params, X, y, loss, level):
    """Full-sample mean loss of the truncated network."""
    return float(np.mean(_pointwise_loss(loss, forward(params, X), y, level)))


def _init_cnn(d, s, J, L, M, rng, scale):
    # He-style fan-in scaling keeps activation magnitudes stable in depth
    layers = []
    for i in range(L):
        in_c = 1 if i == 0 else J
        w = rng.normal(0.0, scale * math.sqrt(2.0 / (s * in_c)), (s, J, in_c))
        b = rng.normal(0.0, 0.01, J)
        layers.append(ConvLayer(w, b))
    W = rng.normal(0.0, scale / math.sqrt(d * J), (d, J))
    return _project(CnnParams(d, s, layers, W), M)


def _project(params, M):
    """Scale the output layer down so the path norm is at most M (exact)."""
    k = path_norm(params)
    if k <= M or k == 0.0:
        return params
    return CnnParams(params.d, params.s, params.layers, params.output_weights * (M / k))


def _copy(params):
    return CnnParams(
        params.d,
        params.s,
        [ConvLayer(l.weights.copy(), l.bias.copy()) for l in params.layers],
        params.output_weights.copy(),
    )


def train_erm(data, cfg):
    """Approximate ERM over the constrained CNN class.

    Multi-restart Adam on minibatches; after every step the parameters are
    projected back into the class (output-layer scaling).  The best iterate
    by full-sample risk, across all epochs and restarts and including the
    initializations, is returned, so the result never does worse than any
    initialization.  Raises TrainingFailure if the loss turns non-finite.
    """
    t0 = time.perf_counter()
    X, y = data.X, data.y
    d = X.shape[1]
    level = cfg.trunc_level
    n = len(y)
    batch = min(cfg.batch_size, n)

    best = None  # (risk, params, restart, epoch)
    all_risks = []
    # non-finite intermediates on a diverging run are detected explicitly
    # below and raised as TrainingFailure; suppress the IEEE warnings they
    # emit on the way there
    with np.errstate(over="ignore", invalid="ignore"):
        for restart in range(cfg.restarts):
            rng = spawn_rng(cfg.seed, restart)
            params = _init_cnn(d, cfg.s, cfg.J, cfg.L, cfg.M, rng, cfg.init_scale)
            step = 0
            risks = [empirical_risk(params, X, y, cfg.loss, level)]
            if best is None or risks[0] < best[0]:
                best = (risks[0], _copy(params), restart, 0)

            vec = param_vector(params)
            m1 = np.zeros_like(vec)
            m2 = np.zeros_like(vec)
            beta1, beta2, eps = 0.9, 0.999, 1e-8
            arch = (d, cfg.s, cfg.J, cfg.L)

            def fail(reason):
                return TrainingFailure(
                    reason,
                    TrainTrace(all_risks + [np.array(risks)], -1, -1, math.nan, 0.0),
                )

            for epoch in range(1, cfg.epochs + 1):
                if cfg.final_learning_rate and cfg.epochs > 1:
                    frac = (epoch - 1) / (cfg.epochs - 1)
                    lr = cfg.learning_rate * (
                        cfg.final_learning_rate / cfg.learning_rate
                    ) ** frac
                else:
                    lr = cfg.learning_rate
                order = rng.permutation(n)
                for lo in range(0, n, batch):
                    idx = order[lo : lo + batch]
                    params = params_from_vector(vec, *arch)
                    f_vals = forward(params, X[idx])
                    dout = _loss_grad(cfg.loss, f_vals, y[idx], level) / len(idx)
                    if not np.all(np.isfinite(dout)):
                        raise fail("non-finite loss gradient")
                    grad = backward(params, X[idx], dout).as_vector()
                    step += 1
                    m1 = beta1 * m1 + (1 - beta1) * grad
                    m2 = beta2 * m2 + (1 - beta2) * grad * grad
                    hat1 = m1 / (1 - beta1**step)
                    hat2 = m2 / (1 - beta2**step)
                    vec = vec - lr * hat1 / (np.sqrt(hat2) + eps)
                    if not np.all(np.isfinite(vec)):
                        raise fail("parameters diverged")
                    projected = _project(params_from_vector(vec, *arch), cfg.M)
                    vec = param_vector(projected)
                params = params_from_vector(vec, *arch)
                risk = empirical_risk(params, X, y, cfg.loss, level)
                if not math.isfinite(risk):
                    raise fail("non-finite empirical risk")
                risks.append(risk)
                if risk < best[0]:
                    best = (risk, _copy(params), restart, epoch)
            all_risks.append(np.array(risks))

    risk, params, restart, epoch = best
    assert path_norm(params) <= cfg.M * (1 + 1e-9), "constraint violated after projection"
    trace = TrainTrace(all_risks, restart, epoch, risk, time.perf_counter() - t0)
    return params, trace


# -- evaluation -------------------------------------------------------------


def truncated_net(params, level):
    """Callable evaluating the truncated network on (n, d) batches."""

    def f(X):
        return truncate(level, forward(params, X))

    return f


def measure_excess(params, spec, loss, m, seed, trunc_level):
    """Monte Carlo excess risk of the truncated network against the target.

    squared -> L2(mu) distance to the regression function; hinge/logistic ->
    the corresponding surrogate excess risks of the truncated network;
    classification -> the 0-1 excess risk of its sign.
    """
    sampler = links.uniform_sampler(spec.d)
    f = truncated_net(params, trunc_level)
    if loss == "squared":
        if spec.kind != "regression":
            raise PreconditionError("squared loss expects a regression target")
        rng = spawn_rng(seed, 0)
        X = sampler(m, rng)
        vals = (f(X) - spec(X)) ** 2
        se = float(vals.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        return links.RiskEstimate(float(vals.mean()), se, m, seed)
    if spec.kind != "class-probability":
        raise PreconditionError(f"{loss} loss expects a class-probability target")
    if loss == "hinge":
        return links.hinge_excess_risk(f, spec, sampler, m, seed)
    if loss == "logistic":
        return links.logistic_excess_risk(f, spec, sampler, m, seed)
    if loss == "classification":
        return links.classification_excess_risk(f, spec, sampler, m, seed)
    raise PreconditionError(f"unknown loss: {loss!r}")


# -- schedules and rate fits ------------------------------------------------


@dataclass
class ScheduleConstants:
    """Proportionality constants in front of the schedule growth orders."""

    l_const: float = 1.0
    m_const: float = 5.0
    b_const: float = 2.0


def default_constants(loss):
    """Per-loss defaults, tuned so first-order training stays reliable.

    Depth constants are kept small: the growth orders already force depth to
    rise with n, and deeper stacks at these sample sizes are dominated by
    optimization error rather than the statistical terms the schedules are
    meant to expose.
    """
    if loss == "squared":
        return ScheduleConstants(1.0, 5.0, 2.0)
    if loss == "hinge":
        return ScheduleConstants(0.5, 3.0, 2.0)
    if loss == "logistic":
        return ScheduleConstants(0.15, 2.0, 2.0)
    raise PreconditionError(f"unknown loss: {loss!r}")


def architecture_schedule(loss, n, d, alpha, q=1.0, beta=1.0, consts=None):
    """(L_n, M_n, B_n) for sample size n under the loss's growth orders.

    squared : L ~ (n/log^3 n)^(d/(2a+d)),        M ~ (n/log^3 n)^((3d+3-2a)/(4a+2d)),  B ~ log n
    hinge   : L ~ (n/log^2 n)^(d/((q+2)a+d)),    M ~ (n/log^2 n)^((3d+3)/(2(q+2)a+2d)), B = 1
    logistic: L ~ (n/log n)^(d/((1+b)a+d)),      M ~ (n/log n)^((3d+3+2a)/(2(1+b)a+2d)), B ~ log n
    """
    consts = consts or default_constants(loss)
    if n < 3:
        raise PreconditionError("sample size too small for a schedule")
    ln = math.log(n)
    if loss == "squared":
        base = n / ln**3
        l_exp = d / (2 * alpha + d)
        m_exp = (3 * d + 3 - 2 * alpha) / (4 * alpha + 2 * d)
        B = consts.b_const * ln
    elif loss == "hinge":
        base = n / ln**2
        l_exp = d / ((q + 2) * alpha + d)
        m_exp = (3 * d + 3) / (2 * (q + 2) * alpha + 2 * d)
        B = 1.0
    elif loss == "logistic":
        base = n / ln
        l_exp = d / ((1 + beta) * alpha + d)
        m_exp = (3 * d + 3 + 2 * alpha) / (2 * (1 + beta) * alpha + 2 * d)
        B = consts.b_const * ln
    else:
        raise PreconditionError(f"unknown loss: {loss!r}")
    base = max(base, 1.0)
    L = max(1, round(consts.l_const * base**l_exp))
    M = max(1.0, consts.m_const * base**m_exp)
    return L, M, B


def theory_slope(loss, alpha, d, q=1.0, beta=1.0):
    """The predicted excess-risk exponent in n (negative)."""
    if loss == "squared":
        return -2 * alpha / (2 * alpha + d)
    if loss == "hinge":
        if math.isinf(q):
            return -1.0
        return -(q + 1) * alpha / ((q + 2) * alpha + d)
    if loss == "logistic":
        return -(1 + beta) * alpha / ((1 + beta) * alpha + d)
    raise PreconditionError(f"unknown loss: {loss!r}")


def fit_loglog(ns, errors):
    """Least-squares slope/intercept of log error against log n."""
    ns = np.asarray(ns, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if ns.shape != errors.shape or ns.ndim != 1:
        raise PreconditionError("ns and errors must be equal-length vectors")
    if ns.shape[0] < 4:
        raise PreconditionError("a rate fit needs at least 4 points")
    if np.any(errors <= 0):
        raise PreconditionError("errors must be positive for a log-log fit")
    logn, loge = np.log(ns), np.log(errors)
    slope, intercept = np.polyfit(logn, loge, 1)
    residuals = loge - (slope * logn + intercept)
    return float(slope), float(intercept), residuals


@dataclass
class RateFit:
    ns: np.ndarray
    mean_errors: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    theory_slope: float

    def inversions(self):
        """Number of upward steps in the mean-error sequence."""
        return int(np.sum(np.diff(self.mean_errors) > 0))


@dataclass
class ExperimentRow:
    loss: str
    n: int
    L: int
    M: float
    B: float
    seed: int
    excess_risk: float
    stderr: float
    wall_time: float


def run_rate_experiment(
    spec,
    loss,
    n_schedule,
    repeats=5,
    base_seed=0,
    noise=None,
    consts=None,
    train_options=None,
    mc_samples=20_000,
):
    """Train across the sample-size schedule and fit the log-log error slope.

    For each n the architecture follows `architecture_schedule`; each of the
    `repeats` cells gets its own derived seeds for data, training and
    measurement, so cells are independent and order-insensitive.  Returns
    (RateFit, rows) where rows carry one record per (n, repeat).
    """
    n_schedule = [int(n) for n in n_schedule]
    if len(n_schedule) < 4 or any(b <= a for a, b in zip(n_schedule, n_schedule[1:])):
        raise PreconditionError("n_schedule must be increasing with at least 4 values")
    if repeats < 1:
        raise PreconditionError("repeats must be positive")
    train_options = dict(train_options or {})
    s = int(train_options.pop("s", 2))
    J = int(train_options.pop("J", 6))
    alpha = spec.smoothness if spec.smoothness else 1.0
    q = spec.noise_exponent if spec.noise_exponent is not None else 1.0
    beta = spec.svb_exponent if spec.svb_exponent is not None else 1.0

    rows = []
    means = []
    for i, n in enumerate(n_schedule):
        L, M, B = architecture_schedule(loss, n, spec.d, alpha, q=q, beta=beta, consts=consts)
        cell_values = []
        for r in range(repeats):
            t0 = time.perf_counter()
            data = sample_dataset(spec, n, noise=noise, seed=_cell_seed(base_seed, i, r, 0))
            cfg = TrainConfig(
                s=s,
                J=J,
                L=L,
                M=M,
                loss=loss,
                trunc_level=B,
                seed=_cell_seed(base_seed, i, r, 1),
                **train_options,
            )
            try:
                params, _ = train_erm(data, cfg)
            except TrainingFailure as exc:
                exc.partial_rows = rows  # completed cells travel with the error
                raise
            est = measure_excess(
                params, spec, loss, mc_samples, _cell_seed(base_seed, i, r, 2), B
            )
            rows.append(
                ExperimentRow(
                    loss=loss,
                    n=n,
                    L=L,
                    M=M,
                    B=B,
                    seed=_cell_seed(base_seed, i, r, 1),
                    excess_risk=est.value,
                    stderr=est.standard_error,
                    wall_time=time.perf_counter() - t0,
                )
            )
            cell_values.append(est.value)
        means.append(float(np.mean(cell_values)))

    slope, intercept, residuals = fit_loglog(n_schedule, means)
    fit = RateFit(
        ns=np.asarray(n_schedule, dtype=float),
        mean_errors=np.asarray(means),
        slope=slope,
        intercept=intercept,
        residuals=residuals,
        theory_slope=theory_slope(loss, alpha, spec.d, q=q, beta=beta),
    )
    return fit, rows


def _cell_seed(base, *path):
    # stable scalar seed per cell, independent of evaluation order
    h = np.random.SeedSequence([int(base), *map(int, path)]).generate_state(1)[0]
    return int(h)
