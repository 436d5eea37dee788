"""Synthetic data generators for simulation studies and tests."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .families import Family, SurvivalParams, survival
from .fbh import Alive, BirthRecord, Died


def sample_death_ages(rng: np.random.Generator, params: SurvivalParams,
                      n: int) -> np.ndarray:
    """Draw ages at death (months); values above 60 mean survival past 60."""
    u = rng.uniform(size=n)
    if params.family is Family.LOG_LOGISTIC:
        # logit of the death-time CDF is linear in log age
        return np.exp(params.theta[0] + params.sigma * np.log(u / (1.0 - u)))
    a1, a2, a3 = params.alphas
    lam = np.array([a1 + a2 + a3, a1 + a2, a1])
    H_break = np.array([0.0, lam[0] * 1.0, lam[0] + lam[1] * 11.0])
    start = np.array([0.0, 1.0, 12.0])
    e = -np.log1p(-u)  # total cumulative hazard at death
    seg = np.searchsorted(H_break, e, side="right") - 1
    ages = start[seg] + (e - H_break[seg]) / lam[seg]
    return ages


def simulate_survey(rng: np.random.Generator, survey_id: str, survey_year: int,
                    truth: dict[int, SurvivalParams], births_per_year: int,
                    n_clusters: int = 50, cluster_sd: float = 0.0,
                    stratum_count: int = 1,
                    weight_cv: float = 0.0) -> list[BirthRecord]:
    """Simulate full-birth-history records over a 20-year window.

    ``cluster_sd`` shifts the first survival parameter per cluster, giving
    a real design effect; interview timing is uniform within the survey
    year.
    """
    years = [y for y in range(survey_year - 19, survey_year + 1) if y in truth]
    cluster_shift = rng.normal(0.0, cluster_sd, size=n_clusters)
    records = []
    for y in years:
        base = truth[y]
        interview_age = 12.0 * (survey_year - y) + rng.uniform(0, 12, size=births_per_year)
        cluster = rng.integers(0, n_clusters, size=births_per_year)
        weights = np.exp(rng.normal(0.0, weight_cv, size=births_per_year))
        for c in range(n_clusters):
            sel = cluster == c
            m = int(np.sum(sel))
            if m == 0:
                continue
            theta = base.theta.copy()
            theta[0] = theta[0] + cluster_shift[c]
            p = SurvivalParams(base.family, theta)
            death_age = sample_death_ages(rng, p, m)
            cutoff = np.minimum(interview_age[sel], 60.0)
            for age_d, cut, w in zip(death_age, cutoff, weights[sel]):
                stratum = f"s{c % stratum_count}"
                if age_d <= cut:
                    status = Died(float(min(age_d, 60.0)))
                else:
                    status = Alive(float(cut))
                records.append(BirthRecord(
                    survey_id=survey_id, stratum_id=stratum,
                    cluster_id=f"c{c}", weight=float(w), birth_year=y,
                    status=status))
    return records


def stationary_person_years(params: SurvivalParams, a: float, n: float,
                            births: float) -> float:
    """Mid-year population aged (a, a+n) under a stationary regime."""
    from .families import band_integral_terms

    (integral,) = band_integral_terms(params.family, params.theta, a, n)
    return births * integral / 12.0


def smooth_theta_trajectory(family: Family, years: list[int],
                            u5mr_start: float = 0.15, u5mr_end: float = 0.05,
                            sigma_start: float = 2.2, sigma_end: float = 1.8,
                            wiggle: float = 0.0) -> dict[int, SurvivalParams]:
    """Smooth declining-mortality parameter path used in simulations."""
    T = len(years)
    s = np.linspace(0.0, 1.0, T)
    u5mr = u5mr_start + (u5mr_end - u5mr_start) * (3 * s**2 - 2 * s**3)
    if wiggle:
        u5mr = u5mr * (1.0 + wiggle * np.sin(2.5 * np.pi * s))
    truth = {}
    if family is Family.LOG_LOGISTIC:
        sigma = sigma_start + (sigma_end - sigma_start) * s
        beta = 1.0 / sigma
        # theta1 solves expit(theta2) * (log 60 - theta1) = logit(q5)
        theta2 = np.log(beta / (1 - beta))
        logit_q5 = np.log(u5mr / (1 - u5mr))
        theta1 = np.log(60.0) - logit_q5 / beta
        for i, y in enumerate(years):
            truth[y] = SurvivalParams(family, np.array([theta1[i], theta2[i]]))
    else:
        # split the cumulative hazard so NMR and IMR shares stay realistic
        for i, y in enumerate(years):
            H60 = -np.log1p(-u5mr[i])
            h_neo = 0.35 * H60          # alpha1+alpha2+alpha3 over one month
            h_pn = 0.40 * H60 / 11.0    # alpha1+alpha2 per month, months 1-12
            h_child = 0.25 * H60 / 48.0
            a1 = h_child
            a2 = max(h_pn - a1, 1e-8)
            a3 = max(h_neo - a1 - a2, 1e-8)
            truth[y] = SurvivalParams.piecewise_exp(a1, a2, a3)
    return truth


def simulate_vr_counts(rng: np.random.Generator, params: SurvivalParams,
                       births: float, kappa_sd: float = 0.0,
                       sampling_fraction: float = 1.0):
    """Poisson neonatal / post-neonatal / child(1-4) counts plus exposures.

    Populations follow the stationary approximation P = B * int S / 12, so
    the generic-band likelihood mean reduces to B * [S(a) - S(a+n)].
    """
    f = sampling_fraction
    S1 = survival(params, 1.0)
    S12 = survival(params, 12.0)
    S60 = survival(params, 60.0)
    p_inf = stationary_person_years(params, 0.0, 12.0, births)
    p_child = stationary_person_years(params, 12.0, 48.0, births)
    means = np.array([
        births * (1 - S1),
        births * (S1 - S12),
        births * (S12 - S60),
    ]) * f * np.exp(rng.normal(0.0, kappa_sd, size=3) if kappa_sd else 0.0)
    counts = rng.poisson(means)
    return {
        "neonatal": int(counts[0]),
        "postneonatal": int(counts[1]),
        "child1_4": int(counts[2]),
        "births": births,
        "pop_infant": p_inf,
        "pop_child1_4": p_child,
    }
