"""Design-weighted pseudo-likelihood estimation from full-birth-history
microdata.

A survey contributes one parameter block per birth-cohort calendar year
over a 20-year retrospective window.  Point estimates maximize the
weighted log pseudo-likelihood; the variance is the stratified
cluster-robust sandwich (Binder) estimator.  Reported deaths at the
heaped age (12 months by default) are interval censored to (6, 18)
months before fitting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .families import (
    Family,
    log_density_terms,
    log_survival_terms,
    survival_terms,
)

RETROSPECTIVE_YEARS = 20
FLAGGED_VARIANCE = 1.0e6
_NEWTON_TOL = 1e-8
_NEWTON_MAXIT = 100
_THETA_BOUND = 20.0  # |theta| beyond this means a boundary (non-identified) fit


class FitError(RuntimeError):
    """Pseudo-likelihood optimization failed."""


@dataclass(frozen=True)
class Died:
    age: float


@dataclass(frozen=True)
class IntervalDied:
    low: float
    high: float


@dataclass(frozen=True)
class Alive:
    age: float  # right-censored at this age


@dataclass(frozen=True)
class BirthRecord:
    survey_id: str
    stratum_id: str
    cluster_id: str
    weight: float
    birth_year: int
    status: Died | IntervalDied | Alive

    def __post_init__(self):
        if not (self.weight > 0):
            raise ValueError(f"design weight must be positive, got {self.weight}")
        st = self.status
        if isinstance(st, (Died, Alive)):
            if not (0.0 <= st.age <= 60.0):
                raise ValueError(f"age {st.age} outside [0, 60] months")
        elif isinstance(st, IntervalDied):
            if not (0.0 <= st.low < st.high <= 60.0):
                raise ValueError(f"bad censoring interval ({st.low}, {st.high})")


@dataclass(frozen=True)
class CensoringSpec:
    heaped_age: float = 12.0
    low: float = 6.0
    high: float = 18.0

    def __post_init__(self):
        if not (self.low < self.heaped_age < self.high):
            raise ValueError("censoring interval must straddle the heaped age")


def censor_heaped(records: list[BirthRecord], spec: CensoringSpec) -> list[BirthRecord]:
    """Interval-censor deaths reported exactly at the heaped age."""
    out = []
    for r in records:
        if isinstance(r.status, Died) and r.status.age == spec.heaped_age:
            out.append(replace(r, status=IntervalDied(spec.low, spec.high)))
        else:
            out.append(r)
    return out


@dataclass
class SurveyEstimate:
    """Stacked per-year estimates and sandwich covariance for one survey."""

    survey_id: str
    family: Family
    years: list[int]          # contiguous, ending at the survey year
    theta_hat: np.ndarray     # (len(years) * K,), year-major
    v_hat: np.ndarray         # square, symmetric PSD
    flagged_years: list[int] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return self.family.n_params

    def theta_block(self, year: int) -> np.ndarray:
        i = self.years.index(year)
        k = self.n_params
        return self.theta_hat[i * k:(i + 1) * k]


# ---------------------------------------------------------------------------
# Internal representation: one arrays bundle per year.
# ---------------------------------------------------------------------------


@dataclass
class _YearData:
    year: int
    kind: np.ndarray       # 0 exact death, 1 interval death, 2 right-censored
    age: np.ndarray        # exact / censoring age (unused for intervals)
    low: np.ndarray
    high: np.ndarray
    weight: np.ndarray
    cluster_index: np.ndarray  # index into survey-level cluster list

    @property
    def n_deaths(self) -> float:
        return float(np.sum(self.kind != 2))


def _pack_years(records, years, cluster_ids):
    cluster_pos = {c: i for i, c in enumerate(cluster_ids)}
    by_year = {y: [] for y in years}
    for r in records:
        by_year[r.birth_year].append(r)
    packed = {}
    for y in years:
        rs = by_year[y]
        kind = np.empty(len(rs), dtype=int)
        age = np.zeros(len(rs))
        low = np.zeros(len(rs))
        high = np.zeros(len(rs))
        weight = np.empty(len(rs))
        cidx = np.empty(len(rs), dtype=int)
        for i, r in enumerate(rs):
            weight[i] = r.weight
            cidx[i] = cluster_pos[(r.stratum_id, r.cluster_id)]
            st = r.status
            if isinstance(st, Died):
                kind[i], age[i] = 0, st.age
            elif isinstance(st, IntervalDied):
                kind[i], low[i], high[i] = 1, st.low, st.high
            else:
                kind[i], age[i] = 2, st.age
        packed[y] = _YearData(y, kind, age, low, high, weight, cidx)
    return packed


def _year_loglik(family: Family, theta: np.ndarray, yd: _YearData, order: int = 0,
                 scores: bool = False):
    """Weighted log pseudo-likelihood for one year block.

    Returns (ll, grad, hess) and optionally the per-record unweighted score
    matrix for the sandwich estimator.
    """
    K = family.n_params
    n = yd.kind.size
    ll_i = np.zeros(n)
    g_i = np.zeros((n, K))
    h_i = np.zeros((n, K, K)) if order >= 2 else None
    ord_req = max(order, 1 if scores else 0)

    exact = yd.kind == 0
    interval = yd.kind == 1
    cens = yd.kind == 2

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if np.any(exact):
            out = log_density_terms(family, theta, yd.age[exact], ord_req)
            ll_i[exact] = out[0]
            if ord_req >= 1:
                g_i[exact] = out[1]
            if order >= 2:
                h_i[exact] = out[2]
        if np.any(cens):
            out = log_survival_terms(family, theta, yd.age[cens], ord_req)
            ll_i[cens] = out[0]
            if ord_req >= 1:
                g_i[cens] = out[1]
            if order >= 2:
                h_i[cens] = out[2]
        if np.any(interval):
            lo = survival_terms(family, theta, yd.low[interval], ord_req)
            hi = survival_terms(family, theta, yd.high[interval], ord_req)
            D = lo[0] - hi[0]
            ll_i[interval] = np.log(D)
            if ord_req >= 1:
                dD = lo[1] - hi[1]
                g_i[interval] = dD / D[:, None]
            if order >= 2:
                d2D = lo[2] - hi[2]
                h_i[interval] = (d2D / D[:, None, None]
                                 - np.einsum("mj,mk->mjk", dD, dD) / D[:, None, None] ** 2)

    ll = float(yd.weight @ ll_i)
    out = [ll]
    if order >= 1:
        out.append(yd.weight @ g_i)
    if order >= 2:
        out.append(np.einsum("m,mjk->jk", yd.weight, h_i))
    if scores:
        out.append(g_i)
    return tuple(out)


def _newton_year(family: Family, yd: _YearData, theta0: np.ndarray):
    """Maximize one year block; returns (theta, hess) or raises FitError."""
    theta = theta0.copy()
    K = len(theta)
    ll, g, H = _year_loglik(family, theta, yd, order=2)
    if not np.isfinite(ll):
        raise FitError(f"non-finite start for year {yd.year}")
    for _ in range(_NEWTON_MAXIT):
        if np.max(np.abs(g)) < _NEWTON_TOL:
            break
        # Levenberg-damped Newton: require -H + damp*I positive definite
        # (Cholesky), escalate damping whenever the line search stalls.
        damp = 0.0
        moved = False
        for _ in range(20):
            M = -H + damp * np.eye(K)
            try:
                L = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                damp = max(damp * 10.0, 1e-6 * max(1.0, float(np.max(np.abs(np.diag(H))))))
                continue
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
            t = 1.0
            for _ in range(40):
                cand = theta + t * step
                (ll_new,) = _year_loglik(family, cand, yd)
                if np.isfinite(ll_new) and ll_new > ll - 1e-14 * max(1.0, abs(ll)):
                    theta, ll = cand, ll_new
                    moved = True
                    break
                t *= 0.5
            if moved:
                break
            damp = max(damp * 10.0, 1e-6 * max(1.0, float(np.max(np.abs(np.diag(H))))))
        if not moved:
            raise FitError(f"line search failed for year {yd.year}")
        ll, g, H = _year_loglik(family, theta, yd, order=2)
    else:
        raise FitError(f"Newton did not converge for year {yd.year}")
    if np.max(np.abs(theta)) > _THETA_BOUND:
        raise FitError(f"boundary estimate for year {yd.year}")
    return theta, H


def _fit_year_with_restarts(family: Family, yd: _YearData,
                            starts: list[np.ndarray]):
    last_err: FitError | None = None
    for s in starts:
        try:
            return _newton_year(family, yd, s)
        except FitError as err:
            last_err = err
    raise last_err if last_err is not None else FitError("no start point")


def _default_start(family: Family) -> np.ndarray:
    if family is Family.LOG_LOGISTIC:
        return np.array([np.log(300.0), 0.0])
    return np.array([-8.0, -6.0, -4.0])


def fit_survey(records: list[BirthRecord], family: Family,
               spec: CensoringSpec = CensoringSpec(),
               survey_year: int | None = None) -> SurveyEstimate:
    """Fit per-year survival parameters with cluster-robust covariance.

    Records outside the 20-year retrospective window are dropped.  Years
    with no deaths, no records, or a boundary/non-converged fit are
    flagged: they keep the pooled all-years estimate and a diagonal
    variance of 1e6 so they carry essentially no information downstream.
    """
    if not records:
        raise ValueError("no records supplied")
    survey_ids = {r.survey_id for r in records}
    if len(survey_ids) > 1:
        raise ValueError(f"records mix several surveys: {sorted(survey_ids)}")
    survey_id = records[0].survey_id
    if survey_year is None:
        survey_year = max(r.birth_year for r in records)
    years = list(range(survey_year - RETROSPECTIVE_YEARS + 1, survey_year + 1))

    records = censor_heaped(records, spec)
    kept = [r for r in records if r.birth_year in set(years)]
    n_dropped = len(records) - len(kept)
    if not kept:
        raise ValueError("no records inside the retrospective window")
    n_deaths = sum(1 for r in kept if not isinstance(r.status, Alive))
    n_alive = len(kept) - n_deaths
    if n_deaths == 0 or n_alive == 0:
        raise FitError("survey needs at least one death and one survivor")

    # normalize weights to mean 1 so convergence tolerances and the
    # sandwich pieces are scale-free
    mean_w = float(np.mean([r.weight for r in kept]))
    kept = [replace(r, weight=r.weight / mean_w) for r in kept]

    cluster_ids = sorted({(r.stratum_id, r.cluster_id) for r in kept})
    packed = _pack_years(kept, years, cluster_ids)

    K = family.n_params
    pooled = _YearData(
        year=-1,
        kind=np.concatenate([packed[y].kind for y in years]),
        age=np.concatenate([packed[y].age for y in years]),
        low=np.concatenate([packed[y].low for y in years]),
        high=np.concatenate([packed[y].high for y in years]),
        weight=np.concatenate([packed[y].weight for y in years]),
        cluster_index=np.concatenate([packed[y].cluster_index for y in years]),
    )
    try:
        theta_pooled, _ = _fit_year_with_restarts(family, pooled,
                                                  [_default_start(family)])
    except FitError:
        theta_pooled = _default_start(family)

    theta_hat = np.tile(theta_pooled, len(years))
    flagged: list[int] = []
    hessians: dict[int, np.ndarray] = {}
    for i, y in enumerate(years):
        yd = packed[y]
        if yd.kind.size == 0 or yd.n_deaths == 0:
            flagged.append(y)
            continue
        try:
            th, H = _fit_year_with_restarts(
                family, yd, [theta_pooled, _default_start(family)])
        except FitError:
            flagged.append(y)
            continue
        theta_hat[i * K:(i + 1) * K] = th
        hessians[y] = H

    dim = len(years) * K
    flagged_set = set(flagged)

    # A = observed pseudo-information (block diagonal over years)
    a_inv = np.zeros((dim, dim))
    for i, y in enumerate(years):
        sl = slice(i * K, (i + 1) * K)
        if y in flagged_set:
            a_inv[sl, sl] = np.eye(K)  # placeholder; variance overridden below
        else:
            a_inv[sl, sl] = np.linalg.inv(-hessians[y])

    # B = stratified between-cluster covariance of weighted score sums
    n_clusters = len(cluster_ids)
    score_sum = np.zeros((n_clusters, dim))
    for i, y in enumerate(years):
        if y in flagged_set:
            continue
        yd = packed[y]
        th = theta_hat[i * K:(i + 1) * K]
        _, _, s_i = _year_loglik(family, th, yd, order=1, scores=True)
        ws = yd.weight[:, None] * s_i
        np.add.at(score_sum, (yd.cluster_index, slice(i * K, (i + 1) * K)), ws)

    strata = sorted({s for s, _ in cluster_ids})
    B = np.zeros((dim, dim))
    lonely = []
    for s in strata:
        rows = [i for i, (ss, _) in enumerate(cluster_ids) if ss == s]
        nh = len(rows)
        if nh < 2:
            lonely.append(s)
            continue
        dev = score_sum[rows] - score_sum[rows].mean(axis=0)
        B += (nh / (nh - 1)) * dev.T @ dev

    v_hat = a_inv @ B @ a_inv
    v_hat = 0.5 * (v_hat + v_hat.T)
    for i, y in enumerate(years):
        if y in flagged_set:
            sl = slice(i * K, (i + 1) * K)
            v_hat[sl, :] = 0.0
            v_hat[:, sl] = 0.0
            v_hat[sl, sl] = FLAGGED_VARIANCE * np.eye(K)

    return SurveyEstimate(
        survey_id=survey_id,
        family=family,
        years=years,
        theta_hat=theta_hat,
        v_hat=v_hat,
        flagged_years=flagged,
        diagnostics={
            "n_records": len(kept),
            "n_dropped_outside_window": n_dropped,
            "n_deaths": n_deaths,
            "n_clusters": n_clusters,
            "lonely_strata": lonely,
        },
    )


# ---------------------------------------------------------------------------
# CSV cache for fitted survey estimates.
# ---------------------------------------------------------------------------


def save_survey_estimate(est: SurveyEstimate, prefix: str) -> tuple[str, str]:
    """Write <prefix>.theta.csv and <prefix>.cov.csv; returns the paths."""
    k = est.n_params
    theta_path = f"{prefix}.theta.csv"
    cov_path = f"{prefix}.cov.csv"
    with open(theta_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["survey_id", "family", "year", "param", "theta", "flagged"])
        for i, y in enumerate(est.years):
            for j in range(k):
                w.writerow([est.survey_id, est.family.value, y, j,
                            repr(float(est.theta_hat[i * k + j])),
                            int(y in est.flagged_years)])
    labels = [f"y{y}_p{j}" for y in est.years for j in range(k)]
    with open(cov_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + labels)
        for lab, row in zip(labels, est.v_hat):
            w.writerow([lab] + [repr(float(v)) for v in row])
    return theta_path, cov_path


def load_survey_estimate(prefix: str) -> SurveyEstimate:
    with open(f"{prefix}.theta.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty theta table")
    survey_id = rows[0]["survey_id"]
    family = Family.from_name(rows[0]["family"])
    years = sorted({int(r["year"]) for r in rows})
    k = family.n_params
    theta = np.zeros(len(years) * k)
    flagged = set()
    for r in rows:
        i = years.index(int(r["year"]))
        theta[i * k + int(r["param"])] = float(r["theta"])
        if int(r["flagged"]):
            flagged.add(int(r["year"]))
    with open(f"{prefix}.cov.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        v = np.array([[float(x) for x in row[1:]] for row in reader])
    return SurveyEstimate(survey_id=survey_id, family=family, years=years,
                          theta_hat=theta, v_hat=v,
                          flagged_years=sorted(flagged))
