"""Missing-mothers adjustment for HIV survivorship bias in survey data.

The published correction is a per-year ratio r of true to unadjusted
under-five mortality.  It is translated into the survival families as a
multiplicative hazard bias b: the piecewise-exponential shifts all three
log-hazards by log(b); the log-logistic rescales mu only (theta1 shifts
by log(b), theta2 is untouched).  Either way the adjusted U5MR equals
exactly r times the unadjusted U5MR and the covariance of the estimates
is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .families import Family, SurvivalParams, inverse_survival, survival
from .fbh import SurveyEstimate


class AdjustmentError(ValueError):
    """Adjustment factor incompatible with the unadjusted survival level."""


@dataclass(frozen=True)
class AdjustmentFactor:
    year: int
    r: float

    def __post_init__(self):
        if not (self.r > 0):
            raise AdjustmentError(f"adjustment ratio must be positive, got {self.r}")


def bias_multiplier_pe(s60_star: float, r: float) -> float:
    """Hazard multiplier for the piecewise-exponential family.

    b = log(1 - r * (1 - S*(60))) / log(S*(60)); shifting every log-hazard
    by log(b) scales the adjusted U5MR to exactly r times the unadjusted.
    """
    if not (0.0 < s60_star < 1.0):
        raise AdjustmentError(f"S*(60)={s60_star} outside (0, 1)")
    target = 1.0 - r * (1.0 - s60_star)
    if target <= 0.0:
        raise AdjustmentError(
            f"ratio r={r} with S*(60)={s60_star} implies U5MR >= 1")
    return float(np.log(target) / np.log(s60_star))


def bias_multiplier_ll(mu_star: float, sigma_star: float, r: float) -> float:
    """Scale factor on mu for the log-logistic family.

    b = 60 / S*^{-1}(1 - r * (1 - S*(60))); theta1 shifts by log(b).
    """
    p_star = SurvivalParams.loglogistic(mu_star, sigma_star)
    s60 = survival(p_star, 60.0)
    target = 1.0 - r * (1.0 - s60)
    if not (0.0 < target < 1.0):
        raise AdjustmentError(
            f"ratio r={r} pushes the target survival {target} outside (0, 1)")
    return 60.0 / inverse_survival(p_star, target)


def apply_adjustment(est: SurveyEstimate, factors: dict[int, float],
                     warnings: list[str] | None = None) -> SurveyEstimate:
    """Shift per-year parameter blocks by log(b_year); covariance unchanged.

    Years without a published factor default to r = 1 (no adjustment) with
    a logged notice.
    """
    k = est.n_params
    theta = est.theta_hat.copy()
    missing = []
    for i, year in enumerate(est.years):
        r = factors.get(year)
        if r is None:
            missing.append(year)
            continue
        if r == 1.0:
            continue
        block = theta[i * k:(i + 1) * k]
        params = SurvivalParams(est.family, block)
        if est.family is Family.PIECEWISE_EXP:
            b = bias_multiplier_pe(survival(params, 60.0), r)
            theta[i * k:(i + 1) * k] = block + np.log(b)
        else:
            b = bias_multiplier_ll(params.mu, params.sigma, r)
            theta[i * k] = block[0] + np.log(b)
    if missing and warnings is not None:
        warnings.append(
            f"survey {est.survey_id}: no adjustment factor for years "
            f"{missing[0]}-{missing[-1]}, defaulted to r=1")
    return replace(est, theta_hat=theta, v_hat=est.v_hat.copy(),
                   diagnostics={**est.diagnostics, "hiv_adjusted": True})
