"""Country-level child-survival estimation engine.

Fuses full-birth-history pseudo-likelihood estimates, vital-registration
death counts, and pre-processed mortality rates into one Bayesian
temporal survival model, producing annual survival curves up to 60
months of age and any derived mortality summary with credible intervals.
"""

__version__ = "0.1.0"

from .families import (  # noqa: F401
    AgeBand,
    DomainError,
    Family,
    FamilyMismatchError,
    SurvivalParams,
    conditional_death_prob,
    hazard,
    inverse_survival,
    logit_q,
    person_time_rate,
    survival,
)
