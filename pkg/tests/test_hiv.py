"""Missing-mothers adjustment: multipliers, ratio identities, application."""

import numpy as np
import pytest

from u5surv.families import Family, SurvivalParams, hazard, survival
from u5surv.fbh import SurveyEstimate
from u5surv.hiv import (
    AdjustmentError,
    AdjustmentFactor,
    apply_adjustment,
    bias_multiplier_ll,
    bias_multiplier_pe,
)

LL = Family.LOG_LOGISTIC
PE = Family.PIECEWISE_EXP


class TestBiasMultiplierPE:
    def test_identity_at_r_one(self):
        assert bias_multiplier_pe(0.9, 1.0) == pytest.approx(1.0, abs=1e-14)

    def test_frozen_value(self):
        # direct formula evaluation: log(1 - 1.137*0.077) / log(0.923)
        b = bias_multiplier_pe(0.923, 1.137)
        expected = np.log(1 - 1.137 * (1 - 0.923)) / np.log(0.923)
        assert b == expected
        assert b == pytest.approx(1.143464, abs=1e-5)

    def test_domain_error(self):
        with pytest.raises(AdjustmentError):
            bias_multiplier_pe(0.5, 2.5)  # r*(1-S) >= 1
        with pytest.raises(AdjustmentError):
            bias_multiplier_pe(1.0, 1.1)

    def test_constant_hazard_ratio(self):
        p = SurvivalParams.piecewise_exp(0.001, 0.01, 0.05)
        r = 1.2
        b = bias_multiplier_pe(survival(p, 60.0), r)
        adj = SurvivalParams(PE, p.theta + np.log(b))
        for a in (0.5, 3.0, 20.0, 59.0):
            assert hazard(adj, a) / hazard(p, a) == pytest.approx(b, rel=1e-12)


class TestBiasMultiplierLL:
    def test_identity_at_r_one(self):
        assert bias_multiplier_ll(500.0, 2.0, 1.0) == pytest.approx(1.0, rel=1e-12)

    def test_round_trip_u5mr_ratio(self):
        # direct evaluation oracle: 1 - S_adj(60) == r * (1 - S*(60))
        rng = np.random.default_rng(8)
        for _ in range(50):
            mu = float(np.exp(rng.uniform(5, 16)))
            sigma = float(rng.uniform(1.05, 8.0))
            r = float(rng.uniform(1.0, 1.3))
            p = SurvivalParams.loglogistic(mu, sigma)
            if r * (1 - survival(p, 60.0)) >= 1:
                continue
            b = bias_multiplier_ll(mu, sigma, r)
            adj = SurvivalParams(LL, p.theta + np.array([np.log(b), 0.0]))
            lhs = 1 - survival(adj, 60.0)
            rhs = r * (1 - survival(p, 60.0))
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_domain_error(self):
        p = SurvivalParams.loglogistic(60.0, 2.0)  # U5MR = 0.5
        with pytest.raises(AdjustmentError):
            bias_multiplier_ll(60.0, 2.0, 2.5)

    def test_nmr_imr_ratios_near_r(self):
        # the mu-only rescaling keeps the hazard ratio approximately (not
        # exactly) constant over age: NMR/IMR ratios stay within 2% of r
        rng = np.random.default_rng(9)
        for _ in range(30):
            # region around the Kenya-2000 fit: U5MR 40-150 per 1000
            sigma = float(rng.uniform(2.5, 5.0))
            u5 = float(rng.uniform(0.04, 0.15))
            beta = 1.0 / sigma
            theta1 = np.log(60.0) - np.log(u5 / (1 - u5)) / beta
            p = SurvivalParams(LL, np.array([theta1, np.log(beta / (1 - beta))]))
            r = float(rng.uniform(1.0, 1.3))
            b = bias_multiplier_ll(p.mu, p.sigma, r)
            adj = SurvivalParams(LL, p.theta + np.array([np.log(b), 0.0]))
            for a in (1.0, 12.0):
                got = (1 - survival(adj, a)) / (1 - survival(p, a))
                assert abs(got - r) <= 0.02 * r


def _estimate(family, years, theta_by_year, v=None):
    k = family.n_params
    theta = np.concatenate([theta_by_year[y] for y in years])
    if v is None:
        v = np.eye(len(years) * k) * 0.01
    return SurveyEstimate(survey_id="svy", family=family, years=list(years),
                          theta_hat=theta, v_hat=v)


class TestApplyAdjustment:
    def test_all_r_one_is_noop(self):
        years = list(range(2001, 2021))
        theta = {y: np.array([8.0, -0.3]) for y in years}
        est = _estimate(LL, years, theta)
        adj = apply_adjustment(est, {y: 1.0 for y in years})
        assert np.array_equal(adj.theta_hat, est.theta_hat)
        assert np.array_equal(adj.v_hat, est.v_hat)

    def test_pe_shifts_all_components_equally(self):
        years = list(range(2001, 2021))
        theta = {y: np.array([-7.0, -5.5, -4.0]) for y in years}
        est = _estimate(PE, years, theta)
        adj = apply_adjustment(est, {y: 1.15 for y in years})
        shift = adj.theta_hat - est.theta_hat
        shift = shift.reshape(len(years), 3)
        for row in shift:
            assert row[0] == pytest.approx(row[1], abs=1e-14)
            assert row[0] == pytest.approx(row[2], abs=1e-14)
            assert row[0] > 0

    def test_ll_theta2_bit_identical(self):
        years = list(range(2001, 2021))
        theta = {y: np.array([8.0 + 0.01 * (y - 2001), -0.3]) for y in years}
        est = _estimate(LL, years, theta)
        adj = apply_adjustment(est, {y: 1.137 for y in years})
        assert np.array_equal(adj.theta_hat[1::2], est.theta_hat[1::2])
        assert np.all(adj.theta_hat[0::2] < est.theta_hat[0::2])

    def test_covariance_unchanged(self):
        years = list(range(2001, 2021))
        theta = {y: np.array([8.0, -0.3]) for y in years}
        v = np.diag(np.linspace(0.01, 0.4, 40))
        est = _estimate(LL, years, theta, v)
        adj = apply_adjustment(est, {y: 1.2 for y in years})
        assert np.array_equal(adj.v_hat, est.v_hat)

    def test_missing_years_default_to_one_with_notice(self):
        years = list(range(2001, 2021))
        theta = {y: np.array([8.0, -0.3]) for y in years}
        est = _estimate(LL, years, theta)
        warnings = []
        adj = apply_adjustment(est, {2015: 1.1}, warnings=warnings)
        assert warnings
        for i, y in enumerate(years):
            if y != 2015:
                assert np.array_equal(adj.theta_hat[i * 2:(i + 1) * 2],
                                      est.theta_hat[i * 2:(i + 1) * 2])

    def test_u5mr_ratio_identity_both_families(self):
        for family, th in ((LL, np.array([8.0, -0.4])),
                           (PE, np.array([-7.0, -5.5, -4.0]))):
            years = list(range(2001, 2021))
            theta = {y: th for y in years}
            est = _estimate(family, years, theta)
            for r in (1.0, 1.05, 1.137, 1.3):
                adj = apply_adjustment(est, {y: r for y in years})
                for i, y in enumerate(years):
                    k = family.n_params
                    p0 = SurvivalParams(family, est.theta_hat[i * k:(i + 1) * k])
                    p1 = SurvivalParams(family, adj.theta_hat[i * k:(i + 1) * k])
                    got = (1 - survival(p1, 60.0)) / (1 - survival(p0, 60.0))
                    assert got == pytest.approx(r, abs=1e-10)

    def test_factor_validation(self):
        with pytest.raises(AdjustmentError):
            AdjustmentFactor(2000, -0.5)


class TestKenyaTableRows:
    """Published illustration: year-2000 rows of the 2014 survey table."""

    def test_pe_row(self):
        # unadjusted U5MR 77.0 per 1000, r = 1.137 -> adjusted 87.5 (+-0.05)
        s60_star = 1 - 0.0770
        b = bias_multiplier_pe(s60_star, 1.137)
        adjusted = 1 - s60_star ** b
        assert adjusted * 1000 == pytest.approx(87.5, abs=0.05)

    def test_ll_row_ratio_structure(self):
        # unadjusted LL triple (NMR 29.4, IMR 52.9, U5MR 76.6 per 1000):
        # fit mu*, sigma* from NMR and IMR, adjust with r = 1.137 and check
        # the published adjusted IMR/NMR levels and ratios
        z1 = np.log(0.0294 / (1 - 0.0294))
        z12 = np.log(0.0529 / (1 - 0.0529))
        beta = (z12 - z1) / np.log(12.0)
        theta1 = -z1 / beta
        p = SurvivalParams(LL, np.array([theta1, np.log(beta / (1 - beta))]))
        b = bias_multiplier_ll(p.mu, p.sigma, 1.137)
        adj = SurvivalParams(LL, p.theta + np.array([np.log(b), 0.0]))
        nmr_adj = 1000 * (1 - survival(adj, 1.0))
        imr_adj = 1000 * (1 - survival(adj, 12.0))
        assert nmr_adj / 29.4 == pytest.approx(1.145, abs=0.002)
        assert imr_adj / 52.9 == pytest.approx(1.141, abs=0.002)
