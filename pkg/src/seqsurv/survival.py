"""Cox proportional-hazards fitting and nonparametric survival statistics.

The solver maximizes the partial likelihood by Newton-Raphson with
step-halving, supports (start, stop] counting-process risk sets, strata,
Efron or Breslow tie handling, an optional ridge penalty, and a
cluster-robust sandwich covariance.  Desk-scale data is assumed: risk sets
are recomputed per event time rather than maintained incrementally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

__all__ = [
    "CoxFit",
    "SurvCurve",
    "fit_cox",
    "CoxPHModel",
    "concordance_index",
    "kaplan_meier",
    "logrank_test",
    "risk_groups",
    "breslow_baseline",
]

SEPARATION_BOUND = 50.0


@dataclass
class CoxFit:
    """Result of a partial-likelihood fit."""

    beta: np.ndarray
    covariance: np.ndarray
    log_partial_likelihood: float
    c_index: float
    aic: float
    n: int
    n_events: int
    ties_method: str
    converged: bool
    iterations: int
    separation: bool = False
    n_strata: int = 1
    n_clusters: int | None = None
    model_kind: str | None = None
    ll_path: list = field(default_factory=list, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, self.beta / self.se, np.inf * np.sign(self.beta))

    @property
    def p(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.z))

    def to_dict(self) -> dict:
        out = {
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "z": self.z.tolist(),
            "p": self.p.tolist(),
            "c_index": self.c_index,
            "aic": self.aic,
            "log_partial_likelihood": self.log_partial_likelihood,
            "n": self.n,
            "n_events": self.n_events,
            "ties_method": self.ties_method,
            "converged": self.converged,
            "iterations": self.iterations,
            "separation": self.separation,
        }
        if self.model_kind is not None:
            out["model_kind"] = self.model_kind
            out["n_strata"] = self.n_strata
            out["n_clusters"] = self.n_clusters
        return out


class _CoxProblem:
    """Validated arrays plus per-stratum unique event times."""

    def __init__(self, X, time, event, start=None, strata=None, tie_efron=True):
        self.tie_efron = tie_efron
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.stop = np.asarray(time, dtype=np.float64)
        self.event = np.asarray(event, dtype=np.int64)
        n = len(self.stop)
        self.start = np.zeros(n) if start is None else np.asarray(start, dtype=np.float64)
        raw_strata = np.zeros(n, dtype=np.int64) if strata is None else np.asarray(strata)
        _, self.strata = np.unique(raw_strata, return_inverse=True)

        if not (len(self.event) == n == len(self.X) == len(self.start) == len(self.strata)):
            raise ValueError("fit_cox: feature matrix and outcome arrays must share length")
        if n < 2:
            raise ValueError(f"fit_cox: needs at least 2 rows, got {n}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("fit_cox: features must be finite")
        if np.any(self.stop <= self.start):
            raise ValueError("fit_cox: every interval must satisfy start < stop")
        if self.event.sum() == 0:
            raise ValueError("fit_cox: no events in the data")

        self.n, self.d = self.X.shape
        self.groups = []
        for s in np.unique(self.strata):
            mask = self.strata == s
            times = np.unique(self.stop[mask & (self.event == 1)])
            self.groups.append((mask, times))

    def loglik(self, beta: np.ndarray) -> float:
        eta = self.X @ beta
        ll = 0.0
        for mask, times in self.groups:
            for t in times:
                risk = mask & (self.start < t) & (self.stop >= t)
                dead = mask & (self.stop == t) & (self.event == 1)
                c = eta[risk].max()
                ez = np.exp(eta[risk] - c)
                s0 = ez.sum()
                m = int(dead.sum())
                ll += eta[dead].sum()
                if self.tie_efron:
                    s0d = np.exp(eta[dead] - c).sum()
                    j = np.arange(m) / m
                    ll -= np.sum(np.log(s0 - j * s0d) + c)
                else:
                    ll -= m * (np.log(s0) + c)
        return float(ll)

    def score_info(self, beta: np.ndarray):
        """Score vector and observed information at ``beta``."""
        eta = self.X @ beta
        U = np.zeros(self.d)
        info = np.zeros((self.d, self.d))
        for mask, times in self.groups:
            for t in times:
                risk = mask & (self.start < t) & (self.stop >= t)
                dead = mask & (self.stop == t) & (self.event == 1)
                xr = self.X[risk]
                c = eta[risk].max()
                w = np.exp(eta[risk] - c)
                s0 = w.sum()
                s1 = w @ xr
                s2 = (w[:, None] * xr).T @ xr
                m = int(dead.sum())
                U += self.X[dead].sum(axis=0)
                if self.tie_efron:
                    xd = self.X[dead]
                    wd = np.exp(eta[dead] - c)
                    s0d = wd.sum()
                    s1d = wd @ xd
                    s2d = (wd[:, None] * xd).T @ xd
                    for j in range(m):
                        f = j / m
                        s0j = s0 - f * s0d
                        s1j = s1 - f * s1d
                        s2j = s2 - f * s2d
                        xbar = s1j / s0j
                        U -= xbar
                        info += s2j / s0j - np.outer(xbar, xbar)
                else:
                    xbar = s1 / s0
                    U -= m * xbar
                    info += m * (s2 / s0 - np.outer(xbar, xbar))
        return U, info

    def score_residuals(self, beta: np.ndarray) -> np.ndarray:
        """Per-row score residuals; they sum to the score vector."""
        eta = self.X @ beta
        resid = np.zeros((self.n, self.d))
        for mask, times in self.groups:
            for t in times:
                risk = mask & (self.start < t) & (self.stop >= t)
                dead = mask & (self.stop == t) & (self.event == 1)
                xr = self.X[risk]
                c = eta[risk].max()
                w = np.exp(eta[risk] - c)
                s0 = w.sum()
                s1 = w @ xr
                m = int(dead.sum())
                dead_in_risk = dead[risk]
                if self.tie_efron:
                    xd = self.X[dead]
                    wd = np.exp(eta[dead] - c)
                    s0d = wd.sum()
                    s1d = wd @ xd
                    for j in range(m):
                        f = j / m
                        s0j = s0 - f * s0d
                        xbarj = (s1 - f * s1d) / s0j
                        resid[dead] += (xd - xbarj) / m
                        haz_w = np.where(dead_in_risk, 1.0 - f, 1.0)
                        resid[risk] -= (w * haz_w / s0j)[:, None] * (xr - xbarj)
                else:
                    xbar = s1 / s0
                    resid[dead] += self.X[dead] - xbar
                    resid[risk] -= (w * m / s0)[:, None] * (xr - xbar)
        return resid


def _solve_psd(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(matrix) @ rhs


def _invert_info(info: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(info)


def fit_cox(
    X,
    time,
    event,
    *,
    start=None,
    strata=None,
    cluster=None,
    ties_method: str = "efron",
    tol: float = 1e-9,
    max_iter: int = 100,
    max_halvings: int = 10,
    ridge: float = 0.0,
    model_kind: str | None = None,
) -> CoxFit:
    """Maximize the (stratified) partial likelihood by damped Newton-Raphson.

    ``time``/``event`` describe (start, stop] intervals when ``start`` is
    given, otherwise simple right-censored times.  ``cluster`` switches the
    covariance to the sandwich estimator over cluster-summed score
    residuals.  A non-convergent fit is returned with ``converged=False``
    rather than raised.
    """
    if ties_method not in ("efron", "breslow"):
        raise ValueError(f"fit_cox: ties_method must be 'efron' or 'breslow', got {ties_method!r}")
    prob = _CoxProblem(X, time, event, start=start, strata=strata, tie_efron=ties_method == "efron")

    col_scale = prob.X.std(axis=0)
    col_scale[col_scale == 0] = 1.0

    def penalized_ll(b):
        return prob.loglik(b) - 0.5 * ridge * float(b @ b)

    beta = np.zeros(prob.d)
    ll = penalized_ll(beta)
    ll_path = [ll]
    converged = False
    separation = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        U, info = prob.score_info(beta)
        if ridge > 0:
            U = U - ridge * beta
            info = info + ridge * np.eye(prob.d)
        if np.max(np.abs(U)) < tol:
            converged = True
            iterations -= 1
            break
        delta = _solve_psd(info, U)
        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = beta + step * delta
            with np.errstate(over="ignore"):
                ll_cand = penalized_ll(cand)
            if np.isfinite(ll_cand) and ll_cand >= ll - 1e-12:
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        beta, ll = cand, ll_cand
        ll_path.append(ll)
        if np.any(np.abs(beta) * col_scale > SEPARATION_BOUND):
            separation = True
            warnings.warn(
                "fit_cox: coefficients diverging, likely monotone likelihood (separation)",
                stacklevel=2,
            )
            break

    _, info = prob.score_info(beta)
    if ridge > 0:
        info = info + ridge * np.eye(prob.d)
    model_cov = _invert_info(info)

    # A monotone likelihood can satisfy the score tolerance while beta is
    # still marching off to infinity; the information then collapses and
    # the scaled standard error explodes.
    scaled_se = np.sqrt(np.maximum(np.diag(model_cov), 0.0)) * col_scale
    if not separation and np.any((scaled_se > SEPARATION_BOUND) & (np.abs(beta) * col_scale > 1.0)):
        separation = True
        warnings.warn(
            "fit_cox: flat likelihood at a large coefficient, likely monotone likelihood (separation)",
            stacklevel=2,
        )

    n_clusters = None
    cov = model_cov
    if cluster is not None:
        ids = np.asarray(cluster)
        _, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
        n_clusters = len(counts)
        if counts.max() > 1:
            resid = prob.score_residuals(beta)
            grouped = np.zeros((n_clusters, prob.d))
            np.add.at(grouped, inverse, resid)
            cov = model_cov @ (grouped.T @ grouped) @ model_cov
        # all-singleton clustering carries no correlation information:
        # fall back to the model-based covariance

    loglik = prob.loglik(beta)
    try:
        cidx = concordance_index(prob.X @ beta, prob.stop, prob.event)
    except ValueError:
        cidx = float("nan")
    fit = CoxFit(
        beta=beta,
        covariance=cov,
        log_partial_likelihood=loglik,
        c_index=cidx,
        aic=2.0 * prob.d - 2.0 * loglik,
        n=prob.n,
        n_events=int(prob.event.sum()),
        ties_method=ties_method,
        converged=converged,
        iterations=iterations,
        separation=separation,
        n_strata=len(prob.groups),
        n_clusters=n_clusters,
        model_kind=model_kind,
        ll_path=ll_path,
    )
    return fit


class CoxPHModel(BaseEstimator):
    """Sklearn-style front end over :func:`fit_cox`.

    ``fit`` accepts ``y`` as a 2-column array/DataFrame of (time, event);
    ``predict`` returns the linear-predictor risk score, where larger means
    shorter expected survival.
    """

    def __init__(self, ties_method="efron", tol=1e-9, max_iter=100, ridge=0.0):
        self.ties_method = ties_method
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge

    def fit(self, X, y, *, start=None, strata=None, cluster=None):
        time, event = _split_outcome(y)
        self.result_ = fit_cox(
            X,
            time,
            event,
            start=start,
            strata=strata,
            cluster=cluster,
            ties_method=self.ties_method,
            tol=self.tol,
            max_iter=self.max_iter,
            ridge=self.ridge,
        )
        self.coef_ = self.result_.beta
        self.covariance_ = self.result_.covariance
        self.n_features_in_ = len(self.coef_)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("CoxPHModel is not fitted yet")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"predict: expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_

    def score(self, X, y) -> float:
        time, event = _split_outcome(y)
        return concordance_index(self.predict(X), time, event)


def _split_outcome(y):
    if hasattr(y, "columns"):
        return np.asarray(y["time"], float), np.asarray(y["event"], int)
    arr = np.asarray(y)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0].astype(float), arr[:, 1].astype(int)
    raise ValueError("y must be a (time, event) DataFrame or an (n, 2) array")


def concordance_index(risk_scores, time, event) -> float:
    """Fraction of comparable pairs ordered correctly by risk.

    A pair is comparable when the times differ and the earlier time is an
    event; ties in time (including event/censor ties) are incomparable.
    Higher risk predicting the earlier event counts as concordant; a risk
    tie counts 0.5.
    """
    risk = np.asarray(risk_scores, dtype=np.float64)
    t = np.asarray(time, dtype=np.float64)
    e = np.asarray(event, dtype=np.int64)
    if not (len(risk) == len(t) == len(e)):
        raise ValueError("concordance_index: inputs must share length")
    earlier = (t[:, None] < t[None, :]) & (e[:, None] == 1)
    n_comp = int(earlier.sum())
    if n_comp == 0:
        raise ValueError("concordance_index: no comparable pairs")
    conc = int((earlier & (risk[:, None] > risk[None, :])).sum())
    tied = int((earlier & (risk[:, None] == risk[None, :])).sum())
    return (conc + 0.5 * tied) / n_comp


@dataclass
class SurvCurve:
    """Right-continuous product-limit step function at observed event times."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __len__(self):
        return len(self.times)


def kaplan_meier(time, event) -> SurvCurve:
    """Product-limit survival estimate; ties are processed events-first."""
    t = np.asarray(time, dtype=np.float64)
    e = np.asarray(event, dtype=np.int64)
    if len(t) == 0:
        raise ValueError("kaplan_meier: empty input")
    event_times = np.unique(t[e == 1])
    at_risk = np.array([(t >= u).sum() for u in event_times], dtype=np.int64)
    deaths = np.array([((t == u) & (e == 1)).sum() for u in event_times], dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        surv = np.cumprod(1.0 - deaths / at_risk)
    return SurvCurve(event_times, surv, at_risk, deaths)


def logrank_test(time_a, event_a, time_b, event_b) -> dict:
    """Two-group log-rank test; returns {"chi2", "p"} with 1 df."""
    ta, ea = np.asarray(time_a, float), np.asarray(event_a, int)
    tb, eb = np.asarray(time_b, float), np.asarray(event_b, int)
    if len(ta) == 0 or len(tb) == 0:
        raise ValueError("logrank_test: both groups must be nonempty")
    if ea.sum() + eb.sum() == 0:
        raise ValueError("logrank_test: no events in either group")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    grp = np.concatenate([np.zeros(len(ta), int), np.ones(len(tb), int)])
    observed = 0.0
    expected = 0.0
    variance = 0.0
    for u in np.unique(t[e == 1]):
        at_risk = t >= u
        n = int(at_risk.sum())
        n1 = int((at_risk & (grp == 0)).sum())
        d = int(((t == u) & (e == 1)).sum())
        d1 = int(((t == u) & (e == 1) & (grp == 0)).sum())
        observed += d1
        expected += d * n1 / n
        if n > 1:
            variance += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1)
    chi2 = 0.0 if variance == 0 else (observed - expected) ** 2 / variance
    return {"chi2": float(chi2), "p": float(stats.chi2.sf(chi2, df=1))}


def risk_groups(risk_scores) -> np.ndarray:
    """Median split into 0 = low risk, 1 = high risk; median ties go low."""
    risk = np.asarray(risk_scores, dtype=np.float64)
    if len(risk) == 0:
        raise ValueError("risk_groups: empty input")
    median = np.median(risk)
    labels = (risk > median).astype(np.int64)
    if labels.sum() == 0 and len(np.unique(risk)) == 1:
        warnings.warn("risk_groups: all risk scores equal; everyone assigned low risk", stacklevel=2)
    return labels


def breslow_baseline(fit: CoxFit, X, time, event, start=None):
    """Cumulative baseline-hazard increments at event times (Breslow)."""
    prob = _CoxProblem(X, time, event, start=start)
    eta = prob.X @ fit.beta
    times = np.unique(prob.stop[prob.event == 1])
    increments = np.empty(len(times))
    for i, t in enumerate(times):
        risk = (prob.start < t) & (prob.stop >= t)
        d = int(((prob.stop == t) & (prob.event == 1)).sum())
        increments[i] = d / np.exp(eta[risk]).sum()
    return times, increments
