"""Two-stage portfolio tail-risk pipeline.

Stage 1 fits a volatility model per asset and devolatilises the returns
into i.i.d. residuals. Stage 2 rank-transforms the residuals to the unit
cube, couples them with a Student-t copula (correlation from Kendall's
tau, degrees of freedom by bounded maximum likelihood), and estimates
Value-at-Risk by Monte Carlo: copula draws are pushed back through each
margin's empirical quantile function and rescaled by the filtered
volatility of the evaluation period.
"""

import math

import numpy as np
from dataclasses import dataclass
from scipy import stats as sstats
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .errors import ConfigurationError, DomainError, NumericalError
from .models import ThetaVector
from .rng import RngStream

_DEFAULT_NU_BOUNDS = (2.1, 100.0)


def filtered_residuals(y, xhat) -> np.ndarray:
    """Devolatilised returns e_t = exp(-x_t/2) y_t."""
    y = np.asarray(y, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if y.shape != xhat.shape:
        raise ConfigurationError(
            f"returns ({y.shape}) and volatilities ({xhat.shape}) differ in length")
    return np.exp(-0.5 * xhat) * y


def probability_transform(e) -> np.ndarray:
    """Ranks scaled by 1/(T+1), average ranks on ties; output stays inside
    (0, 1) so t quantiles remain finite."""
    e = np.asarray(e, dtype=float)
    if e.shape[0] < 2:
        raise ConfigurationError("need at least two residuals to rank")
    return sstats.rankdata(e, method="average") / (e.shape[0] + 1.0)


def _repair_correlation(R):
    """Clamp eigenvalues to positive and restore the unit diagonal."""
    eigval, eigvec = np.linalg.eigh(R)
    if eigval.min() > 1e-10:
        return R, False
    clamped = np.maximum(eigval, 1e-8)
    fixed = eigvec @ np.diag(clamped) @ eigvec.T
    scale = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(scale, scale)
    np.fill_diagonal(fixed, 1.0)
    return 0.5 * (fixed + fixed.T), True


def tau_to_rho(tau: float) -> float:
    """Kendall tau to linear correlation, rho = sin(pi tau / 2); exact for
    any elliptical copula."""
    if not -1.0 <= tau <= 1.0:
        raise DomainError(f"Kendall tau must lie in [-1, 1], got {tau}")
    return math.sin(0.5 * math.pi * tau)


def kendall_tau_to_correlation(U, asset_ids=None) -> np.ndarray:
    """Pairwise Kendall tau mapped through rho = sin(pi tau / 2)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    T, d = U.shape
    if d < 2 or T < 2:
        raise ConfigurationError(f"need at least 2 columns and 2 rows, got {U.shape}")
    ids = asset_ids if asset_ids is not None else [str(j) for j in range(d)]
    for j in range(d):
        if np.all(U[:, j] == U[0, j]):
            raise DomainError(f"residual column for asset {ids[j]!r} is constant")
    R = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            tau = sstats.kendalltau(U[:, i], U[:, j]).statistic
            R[i, j] = R[j, i] = tau_to_rho(tau)
    R, _ = _repair_correlation(R)
    return R


def _t_copula_log_density(U, R, nu):
    """Sum over rows of the t-copula log density at uniform points U."""
    z = sstats.t.ppf(U, nu)
    d = R.shape[0]
    L = np.linalg.cholesky(R)
    w = np.linalg.solve(L, z.T)
    quad = np.einsum("ij,ij->j", w, w)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    joint = (gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu)
             - 0.5 * d * math.log(nu * math.pi) - 0.5 * logdet
             - 0.5 * (nu + d) * np.log1p(quad / nu))
    marg = sstats.t.logpdf(z, nu).sum(axis=1)
    return float(np.sum(joint - marg))


@dataclass(frozen=True)
class TCopulaDofFit:
    nu: float
    log_likelihood: float
    boundary: bool


def fit_t_copula_dof(U, R, bounds=_DEFAULT_NU_BOUNDS) -> TCopulaDofFit:
    """Degrees of freedom by bounded 1-D likelihood maximisation (the
    uniform prior makes the posterior mode the likelihood maximiser)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi or lo <= 2.0:
        raise ConfigurationError(f"degree-of-freedom bounds must satisfy 2 < lo < hi, got {bounds}")
    res = minimize_scalar(lambda nu: -_t_copula_log_density(U, R, nu),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-5})
    nu = float(res.x)
    tol = 1e-3 * (hi - lo)
    return TCopulaDofFit(nu=nu, log_likelihood=float(-res.fun),
                         boundary=bool(nu - lo < tol or hi - nu < tol))


def simulate_t_copula(nu, R, M: int, rng: np.random.Generator) -> np.ndarray:
    """M rows of uniform d-vectors with t-copula dependence, via the
    Gaussian over chi-square mixture."""
    if nu <= 2.0:
        raise DomainError(f"degrees of freedom must exceed 2, got {nu}")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    L = np.linalg.cholesky(R)
    Z = rng.standard_normal((M, R.shape[0])) @ L.T
    g = rng.chisquare(nu, size=M)
    X = Z / np.sqrt(g / nu)[:, None]
    return sstats.t.cdf(X, nu)


@dataclass
class MarginModel:
    """Per-asset stage-1 fit: parameters, filtered log-volatility over the
    full series, estimation-window residuals and their order statistics."""

    asset: str
    theta: ThetaVector
    xhat: np.ndarray
    residuals: np.ndarray
    sorted_residuals: np.ndarray = None

    def __post_init__(self):
        if self.sorted_residuals is None:
            self.sorted_residuals = np.sort(np.asarray(self.residuals, dtype=float))

    def transform(self) -> np.ndarray:
        return probability_transform(self.residuals)

    def quantile(self, u) -> np.ndarray:
        """Empirical quantile: linear between order statistics, tails
        clamped to the extreme observed residuals."""
        T = self.sorted_residuals.shape[0]
        grid = np.arange(1, T + 1) / (T + 1.0)
        return np.interp(u, grid, self.sorted_residuals)


@dataclass
class CopulaModel:
    correlation: np.ndarray
    nu: float
    margins: list

    @property
    def dim(self) -> int:
        return len(self.margins)


def var_estimate(copula: CopulaModel, log_volatilities, weights, alpha_bar: float,
                 M: int, rng: np.random.Generator) -> float:
    """One-period portfolio Value-at-Risk at confidence alpha_bar.

    Simulates M dependent residual vectors, rescales each asset by
    exp(x_t/2), and returns the empirical alpha_bar quantile of the
    portfolio loss.
    """
    if M < 1000:
        raise ConfigurationError(f"need at least 1000 draws for the tail, got {M}")
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"weights sum to {weights.sum()}, expected 1")
    if not 0.0 < alpha_bar < 1.0:
        raise ConfigurationError(f"confidence level must lie in (0, 1), got {alpha_bar}")
    vols = np.exp(0.5 * np.asarray(log_volatilities, dtype=float))
    U = simulate_t_copula(copula.nu, copula.correlation, M, rng)
    returns = np.empty_like(U)
    for j, margin in enumerate(copula.margins):
        returns[:, j] = vols[j] * margin.quantile(U[:, j])
    loss = -(returns @ weights)
    return float(np.quantile(loss, alpha_bar))


@dataclass
class BacktestResult:
    violations: int
    expected: float
    flags: np.ndarray
    n: int


def backtest(var_series, realised_returns, alpha_bar: float) -> BacktestResult:
    """Count validation periods whose loss exceeded the VaR forecast and
    report the count expected under the model, (1 - alpha_bar) n."""
    var_series = np.asarray(var_series, dtype=float)
    realised = np.asarray(realised_returns, dtype=float)
    if var_series.shape != realised.shape:
        raise ConfigurationError(
            f"VaR series ({var_series.shape}) and returns ({realised.shape}) misaligned")
    flags = (-realised) > var_series
    n = var_series.shape[0]
    return BacktestResult(violations=int(flags.sum()), expected=(1.0 - alpha_bar) * n,
                          flags=flags, n=n)


@dataclass
class VaRSeries:
    var: np.ndarray
    portfolio_returns: np.ndarray
    weights: np.ndarray
    alpha_bar: float
    backtest: BacktestResult


def fit_margin(asset: str, y, evaluator_factory, box, L: int, K: int, cfg,
               refit_interval: int, stream: RngStream, n_estimation: int = None):
    """Stage 1 for one asset: surrogate optimisation of the posterior, a
    Laplace summary, and residuals at the fitted parameters.

    ``evaluator_factory(stream, y)`` must build a fresh posterior
    evaluator for the given observation series. When ``n_estimation`` is
    set, inference sees only ``y[:n_estimation]`` while the volatility
    path is filtered over all of ``y`` at the fitted parameters (the
    filter is causal, so held-out returns never inform earlier states).
    """
    from .driver import extract_laplace, gpo_run

    y = np.asarray(y, dtype=float)
    n_est = y.shape[0] if n_estimation is None else int(n_estimation)
    if not 0 < n_est <= y.shape[0]:
        raise ConfigurationError(
            f"estimation window {n_est} outside the {y.shape[0]}-point series for {asset!r}")
    evaluator = evaluator_factory(stream.child(0), y[:n_est])
    state, model = gpo_run(evaluator, box, L, K, cfg=cfg,
                           refit_interval=refit_interval, stream=stream.child(1))
    laplace = extract_laplace(model, box)
    theta = evaluator.theta(laplace.theta_map)
    if n_est < y.shape[0]:
        evaluator = evaluator_factory(stream.child(3), y)
    xhat = evaluator.filtered_states(laplace.theta_map, stream=stream.child(2))
    if np.any(~np.isfinite(xhat)):
        raise NumericalError(f"degenerate filter pass at the fitted parameters for {asset!r}")
    residuals = filtered_residuals(y, xhat)
    margin = MarginModel(asset=asset, theta=theta, xhat=xhat, residuals=residuals)
    return margin, laplace, state


def fit_copula(margins, n_estimation: int, nu_bounds=_DEFAULT_NU_BOUNDS):
    """Stage 2: rank-transform estimation-window residuals, correlation
    from Kendall's tau, degrees of freedom by bounded likelihood."""
    U = np.column_stack([
        probability_transform(m.residuals[:n_estimation]) for m in margins])
    R = kendall_tau_to_correlation(U, asset_ids=[m.asset for m in margins])
    fit = fit_t_copula_dof(U, R, bounds=nu_bounds)
    est_margins = [
        MarginModel(asset=m.asset, theta=m.theta, xhat=m.xhat,
                    residuals=m.residuals[:n_estimation])
        for m in margins
    ]
    return CopulaModel(correlation=R, nu=fit.nu, margins=est_margins), fit


def var_backtest_series(copula: CopulaModel, asset_returns, n_estimation: int,
                        weights, alpha_bar: float, M: int,
                        stream: RngStream) -> VaRSeries:
    """Per-period VaR over the validation window plus the violation count.

    Each validation period draws its own substream, so the series is
    reproducible and independent of evaluation order.
    """
    returns = np.atleast_2d(np.asarray(asset_returns, dtype=float))
    T, d = returns.shape
    if d != copula.dim:
        raise ConfigurationError(f"{d} return columns for a {copula.dim}-margin copula")
    if not 0 < n_estimation < T:
        raise ConfigurationError(
            f"estimation window {n_estimation} must split the {T}-point series")
    weights = (np.full(d, 1.0 / d) if weights is None
               else np.asarray(weights, dtype=float))
    periods = range(n_estimation, T)
    var = np.empty(T - n_estimation)
    port = returns[n_estimation:] @ weights
    for idx, t in enumerate(periods):
        vols = [m.xhat[t] for m in copula.margins]
        var[idx] = var_estimate(copula, vols, weights, alpha_bar, M,
                                stream.child(idx).generator())
    bt = backtest(var, port, alpha_bar)
    return VaRSeries(var=var, portfolio_returns=port, weights=weights,
                     alpha_bar=alpha_bar, backtest=bt)
