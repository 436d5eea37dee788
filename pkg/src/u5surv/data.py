"""Country dataset container, observation records, and CSV ingestion.

All observation channels are normalized at ingestion: vital-registration
bands are decomposed into non-overlapping age bands, and every rate-type
observation ends up carrying a logit-scale variance.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .families import AgeBand, TERMINAL_AGE
from .fbh import Alive, BirthRecord, Died, IntervalDied


class IngestionError(ValueError):
    """Malformed or inconsistent input data."""


class VrConsistencyError(IngestionError):
    """A vital-registration part exceeds its aggregate or cannot be tiled."""


class ValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


# ---------------------------------------------------------------------------
# Band vocabulary.
# ---------------------------------------------------------------------------

BAND_LABELS: dict[str, tuple[float, float]] = {
    "neonatal": (0.0, 1.0),
    "postneonatal": (1.0, 11.0),
    "infant": (0.0, 12.0),
    "child1_4": (12.0, 48.0),
    "under5": (0.0, 60.0),
    "year1": (12.0, 12.0),
    "year2": (24.0, 12.0),
    "year3": (36.0, 12.0),
    "year4": (48.0, 12.0),
}

# decomposition priority when overlapping aggregates are supplied
_BAND_PRIORITY = ["neonatal", "postneonatal", "year1", "year2", "year3",
                  "year4", "infant", "child1_4", "under5"]


def parse_band(label: str) -> AgeBand:
    key = label.strip().lower()
    if key in BAND_LABELS:
        a, n = BAND_LABELS[key]
        return AgeBand(a, n)
    if key.startswith("m") and "-" in key:
        lo, hi = key[1:].split("-", 1)
        return AgeBand(float(lo), float(hi) - float(lo))
    raise IngestionError(f"unknown age band {label!r}")


def band_label(band: AgeBand) -> str:
    for name, (a, n) in BAND_LABELS.items():
        if band.a == a and band.n == n:
            return name
    return f"m{band.a:g}-{band.b:g}"


@dataclass(frozen=True)
class VrCountRecord:
    """One death count for one year and age band (possibly an aggregate)."""

    year: int
    band: AgeBand
    deaths: int
    sampling_fraction: float = 1.0

    def __post_init__(self):
        if self.deaths < 0:
            raise IngestionError(f"negative deaths in {self.year}")
        if not (0.0 < self.sampling_fraction <= 1.0):
            raise IngestionError(
                f"sampling fraction {self.sampling_fraction} outside (0, 1]")

    @property
    def label(self) -> str:
        return band_label(self.band)


@dataclass
class ExposureSeries:
    """Births and mid-year populations by year and age band."""

    births: dict[int, float] = field(default_factory=dict)
    pops: dict[tuple[int, tuple[float, float]], float] = field(default_factory=dict)

    def pop(self, year: int, band: AgeBand) -> float | None:
        return self.pops.get((year, (band.a, band.n)))

    def add_pop(self, year: int, band: AgeBand, value: float) -> None:
        if value <= 0:
            raise IngestionError(f"non-positive population in {year}")
        self.pops[(year, (band.a, band.n))] = value

    def add_births(self, year: int, value: float) -> None:
        if value <= 0:
            raise IngestionError(f"non-positive births in {year}")
        prior = self.births.get(year)
        if prior is not None and abs(prior - value) > 1e-9 * max(prior, value):
            raise IngestionError(f"conflicting births for {year}")
        self.births[year] = value


RATE_KINDS = ("fbh_other", "sbh_census", "sbh_survey", "vr_report", "other")


@dataclass
class RateRecord:
    """Pre-processed probability of death by ``age_months`` in one year.

    After ingestion the uncertainty always lives in ``logit_var``; census
    summary-birth-history pairs additionally carry the logit-scale
    covariance linking the infant and under-five terms.
    """

    source_id: str
    year: int
    age_months: float
    q: float
    logit_var: float
    kind: str = "other"
    pair_id: str | None = None
    pair_cov: float | None = None

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise IngestionError(f"rate {self.q} outside (0, 1) ({self.source_id})")
        if not (self.logit_var > 0):
            raise IngestionError(f"non-positive variance ({self.source_id})")
        if not (0.0 < self.age_months <= TERMINAL_AGE):
            raise IngestionError(f"rate age {self.age_months} outside (0, 60]")
        if self.kind not in RATE_KINDS:
            raise IngestionError(f"unknown rate kind {self.kind!r}")


MOTHER_GROUPS = ("20-24", "25-29", "30-34", "35-39", "40-44", "45-49")

# Default logit-scale standard errors and covariance for census
# summary-birth-history estimates of (IMR, U5MR), by mother age group.
DEFAULT_SBH_SE_TABLE: dict[str, tuple[float, float, float]] = {
    "20-24": (0.066, 0.078, 0.0039),
    "25-29": (0.068, 0.072, 0.0035),
    "30-34": (0.090, 0.091, 0.0066),
    "35-39": (0.139, 0.154, 0.0191),
    "40-44": (0.164, 0.182, 0.0272),
    "45-49": (0.172, 0.186, 0.0290),
}

SURVEY_SBH_COV = 0.1  # coefficient of variation for survey-based SBH


@dataclass(frozen=True)
class SbhRecord:
    source_id: str
    reference_year: int
    mother_group: str
    q1: float
    q5: float
    is_census: bool

    def __post_init__(self):
        if self.mother_group == "15-19":
            raise IngestionError("mother age group 15-19 is not used")
        if self.mother_group not in MOTHER_GROUPS:
            raise IngestionError(f"unknown mother age group {self.mother_group!r}")
        for q in (self.q1, self.q5):
            if not (0.0 < q < 1.0):
                raise IngestionError(f"SBH rate {q} outside (0, 1)")


def delta_logit_variance(q: float, v: float) -> float:
    """Natural-scale variance of a probability mapped to the logit scale."""
    if not (0.0 < q < 1.0):
        raise IngestionError(f"probability {q} outside (0, 1)")
    if not (v > 0):
        raise IngestionError(f"variance {v} must be positive")
    return v / (q * (1.0 - q)) ** 2


def sbh_to_rate(records: list[SbhRecord],
                se_table: dict[str, tuple[float, float, float]] | None = None,
                warnings: list[str] | None = None) -> list[RateRecord]:
    """Expand SBH records into (IMR, U5MR) rate-record pairs.

    Census records take the bundled logit-scale SE table (with the pair
    covariance kept for a joint bivariate likelihood term); survey records
    take a 10% coefficient of variation and enter independently.
    """
    table = DEFAULT_SBH_SE_TABLE if se_table is None else se_table
    out: list[RateRecord] = []
    for i, rec in enumerate(records):
        if rec.q1 > rec.q5:
            if warnings is not None:
                warnings.append(
                    f"SBH record {rec.source_id}/{rec.reference_year} dropped: "
                    f"q1={rec.q1} exceeds q5={rec.q5}")
            continue
        if rec.is_census:
            if rec.mother_group not in table:
                raise IngestionError(
                    f"mother age group {rec.mother_group!r} missing from SE table")
            se1, se5, cov = table[rec.mother_group]
            pid = f"{rec.source_id}:{rec.reference_year}:{rec.mother_group}:{i}"
            kind = "sbh_census"
            out.append(RateRecord(rec.source_id, rec.reference_year, 12.0, rec.q1,
                                  se1 ** 2, kind, pair_id=pid, pair_cov=cov))
            out.append(RateRecord(rec.source_id, rec.reference_year, 60.0, rec.q5,
                                  se5 ** 2, kind, pair_id=pid, pair_cov=cov))
        else:
            for age, q in ((12.0, rec.q1), (60.0, rec.q5)):
                v_nat = (SURVEY_SBH_COV * q) ** 2
                out.append(RateRecord(rec.source_id, rec.reference_year, age, q,
                                      delta_logit_variance(q, v_nat), "sbh_survey"))
    return out


# ---------------------------------------------------------------------------
# Vital-registration canonicalization.
# ---------------------------------------------------------------------------


def _priority(record: VrCountRecord) -> tuple:
    lab = record.label
    if lab in _BAND_PRIORITY:
        return (0, _BAND_PRIORITY.index(lab))
    return (1, record.band.a, record.band.n)


def canonicalize_vr(records: list[VrCountRecord],
                    exposures: ExposureSeries | None = None,
                    warnings: list[str] | None = None) -> list[VrCountRecord]:
    """Decompose possibly-overlapping VR bands into disjoint bands per year.

    Aggregates are peeled in a fixed priority order (neonatal first, the
    under-five total last).  A remainder band is emitted when claimed
    parts tile a contiguous prefix or suffix of an aggregate; aggregates
    fully tiled by consistent parts are dropped; a part exceeding its
    aggregate raises.
    """
    by_year: dict[int, list[VrCountRecord]] = {}
    for r in records:
        by_year.setdefault(r.year, []).append(r)

    out: list[VrCountRecord] = []
    for year in sorted(by_year):
        claimed: list[VrCountRecord] = []
        for rec in sorted(by_year[year], key=_priority):
            inside = [c for c in claimed if c.band.a >= rec.band.a - 1e-9
                      and c.band.b <= rec.band.b + 1e-9]
            partial = [c for c in claimed if c.band.overlaps(rec.band)
                       and c not in inside]
            if partial:
                raise VrConsistencyError(
                    f"year {year}: band {rec.label} partially overlaps "
                    f"{partial[0].label}")
            if not inside:
                claimed.append(rec)
                continue
            if any(abs(c.sampling_fraction - rec.sampling_fraction) > 1e-12
                   for c in inside):
                raise VrConsistencyError(
                    f"year {year}: cannot decompose {rec.label} across parts "
                    "with different sampling fractions")
            part_deaths = sum(c.deaths for c in inside)
            if part_deaths > rec.deaths:
                raise VrConsistencyError(
                    f"year {year}: parts of {rec.label} total {part_deaths} "
                    f"deaths, exceeding the aggregate count {rec.deaths}")
            covered = sorted((c.band.a, c.band.b) for c in inside)
            # merge the covered intervals; they are disjoint by construction
            merged = [list(covered[0])]
            for lo, hi in covered[1:]:
                if abs(lo - merged[-1][1]) < 1e-9:
                    merged[-1][1] = hi
                else:
                    merged.append([lo, hi])
            if len(merged) == 1 and abs(merged[0][0] - rec.band.a) < 1e-9 \
                    and abs(merged[0][1] - rec.band.b) < 1e-9:
                if part_deaths != rec.deaths:
                    raise VrConsistencyError(
                        f"year {year}: {rec.label} fully tiled by parts with "
                        f"{part_deaths} deaths but aggregate says {rec.deaths}")
                if warnings is not None:
                    warnings.append(
                        f"year {year}: dropped redundant aggregate {rec.label}")
                continue
            if len(merged) > 1:
                raise VrConsistencyError(
                    f"year {year}: parts leave {rec.label} with a "
                    "non-contiguous remainder")
            lo, hi = merged[0]
            if abs(lo - rec.band.a) < 1e-9:
                rem = AgeBand(hi, rec.band.b - hi)
            elif abs(hi - rec.band.b) < 1e-9:
                rem = AgeBand(rec.band.a, lo - rec.band.a)
            else:
                raise VrConsistencyError(
                    f"year {year}: parts sit strictly inside {rec.label}")
            claimed.append(VrCountRecord(year, rem, rec.deaths - part_deaths,
                                         rec.sampling_fraction))
        claimed.sort(key=lambda c: c.band.a)
        for left, right in zip(claimed, claimed[1:]):
            if left.band.overlaps(right.band):
                raise VrConsistencyError(
                    f"year {year}: bands {left.label} and {right.label} overlap")
        out.extend(claimed)
    return out


# ---------------------------------------------------------------------------
# Country dataset.
# ---------------------------------------------------------------------------


@dataclass
class CountryDataset:
    """All observations for one country, validated and canonicalized."""

    country_id: str
    years: list[int]
    surveys: list = field(default_factory=list)       # SurveyEstimate
    vr: list[VrCountRecord] = field(default_factory=list)
    exposures: ExposureSeries = field(default_factory=ExposureSeries)
    rates: list[RateRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_years(self) -> int:
        return len(self.years)

    def year_index(self, year: int) -> int:
        return self.years.index(year)

    def validate(self) -> None:
        problems = []
        if len(self.years) < 3:
            problems.append("need at least 3 estimation years")
        if self.years != list(range(self.years[0], self.years[-1] + 1)):
            problems.append("estimation years must be contiguous")
        yset = set(self.years)
        for est in self.surveys:
            missing = [y for y in est.years if y not in yset]
            if missing:
                problems.append(
                    f"survey {est.survey_id} covers years {missing} outside "
                    f"the estimation window {self.years[0]}-{self.years[-1]}")
        for rec in self.vr:
            if rec.year not in yset:
                problems.append(f"VR record year {rec.year} outside window")
                continue
            if rec.label in ("neonatal", "postneonatal"):
                if rec.year not in self.exposures.births:
                    problems.append(f"VR {rec.label} {rec.year}: births missing")
            if rec.label == "postneonatal":
                if self.exposures.pop(rec.year, AgeBand(0.0, 12.0)) is None:
                    problems.append(
                        f"VR postneonatal {rec.year}: infant population missing")
            if rec.label not in ("neonatal", "postneonatal"):
                if self.exposures.pop(rec.year, rec.band) is None:
                    problems.append(
                        f"VR {rec.label} {rec.year}: population for band missing")
        for rec in self.rates:
            if rec.year not in yset:
                problems.append(
                    f"rate record {rec.source_id} year {rec.year} outside window")
        if problems:
            raise ValidationError(problems)

    def inventory(self) -> dict:
        return {
            "country_id": self.country_id,
            "years": [self.years[0], self.years[-1]],
            "n_surveys": len(self.surveys),
            "n_vr_records": len(self.vr),
            "n_rate_records": len(self.rates),
            "vr_years": sorted({r.year for r in self.vr}),
            "n_warnings": len(self.warnings),
        }


# ---------------------------------------------------------------------------
# CSV readers (UTF-8, header row required, plain decimal points).
# ---------------------------------------------------------------------------


def _read_rows(path: str, required: set[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            missing = required - set(reader.fieldnames or [])
            raise IngestionError(f"{os.path.basename(path)}: missing columns {sorted(missing)}")
        return list(reader)


def read_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        m = json.load(fh)
    for key in ("country_id", "year_start", "year_end"):
        if key not in m:
            raise IngestionError(f"manifest missing {key!r}")
    if m["year_end"] < m["year_start"]:
        raise IngestionError("manifest year_end before year_start")
    return m


def read_vr_csv(path: str) -> list[VrCountRecord]:
    rows = _read_rows(path, {"year", "band", "deaths", "sampling_fraction"})
    out = []
    for r in rows:
        frac = r["sampling_fraction"].strip()
        out.append(VrCountRecord(
            year=int(r["year"]),
            band=parse_band(r["band"]),
            deaths=int(r["deaths"]),
            sampling_fraction=float(frac) if frac else 1.0,
        ))
    return out


def read_exposure_csv(path: str) -> ExposureSeries:
    rows = _read_rows(path, {"year", "births", "pop_band", "pop"})
    exp = ExposureSeries()
    for r in rows:
        year = int(r["year"])
        if r["births"].strip():
            exp.add_births(year, float(r["births"]))
        if r["pop_band"].strip():
            if not r["pop"].strip():
                raise IngestionError(f"exposure row {year}: pop_band without pop")
            exp.add_pop(year, parse_band(r["pop_band"]), float(r["pop"]))
    return exp


def read_rates_csv(path: str, exposures: ExposureSeries | None = None,
                   warnings: list[str] | None = None) -> list[RateRecord]:
    """Read pre-processed rates; ``se_scale`` is one of logit/natural/cov.

    Rows with an empty standard error are only usable for ``vr_report``
    records with known births (Poisson approximation); anything else is
    rejected with a message rather than guessed.
    """
    rows = _read_rows(path, {"source", "year", "age_months", "q", "se",
                             "se_scale", "kind"})
    out = []
    for r in rows:
        q = float(r["q"])
        year = int(r["year"])
        kind = r["kind"].strip() or "other"
        se_raw = r["se"].strip()
        if not se_raw:
            if kind != "vr_report":
                raise IngestionError(
                    f"rate {r['source']}/{year}: missing standard error")
            births = exposures.births.get(year) if exposures else None
            if births is None:
                raise IngestionError(
                    f"rate {r['source']}/{year}: no standard error and no "
                    "births denominator for the Poisson approximation")
            v_nat = q * (1.0 - q) / births
            logit_var = delta_logit_variance(q, v_nat)
            if warnings is not None:
                warnings.append(
                    f"rate {r['source']}/{year}: Poisson-approximated SE")
        else:
            se = float(se_raw)
            scale = r["se_scale"].strip().lower()
            if scale == "logit":
                logit_var = se ** 2
            elif scale == "natural":
                logit_var = delta_logit_variance(q, se ** 2)
            elif scale == "cov":
                logit_var = delta_logit_variance(q, (se * q) ** 2)
            else:
                raise IngestionError(
                    f"rate {r['source']}/{year}: unknown se_scale {scale!r}")
        out.append(RateRecord(r["source"], year, float(r["age_months"]), q,
                              logit_var, kind))
    return out


def read_sbh_csv(path: str) -> list[SbhRecord]:
    rows = _read_rows(path, {"source", "ref_year", "mother_group", "q1", "q5",
                             "is_census"})
    return [SbhRecord(r["source"], int(r["ref_year"]), r["mother_group"].strip(),
                      float(r["q1"]), float(r["q5"]),
                      bool(int(r["is_census"]))) for r in rows]


def read_fbh_csv(path: str, warnings: list[str] | None = None) -> list[BirthRecord]:
    """Read birth-history microdata.

    Deaths recorded at age 0 become interval deaths on (0, 1) month (the
    continuous density is unbounded at 0); rows with a missing age are
    rejected and counted.
    """
    rows = _read_rows(path, {"survey_id", "stratum", "cluster", "weight",
                             "birth_year", "died", "age_months"})
    out = []
    rejected = 0
    for r in rows:
        age_raw = r["age_months"].strip()
        if not age_raw:
            rejected += 1
            continue
        age = float(age_raw)
        died = bool(int(r["died"]))
        if died:
            if age >= 60.0:
                status = Alive(60.0)  # survived the under-five window
            elif age == 0.0:
                status = IntervalDied(0.0, 1.0)
            else:
                status = Died(age)
        else:
            status = Alive(min(age, 60.0))
        out.append(BirthRecord(r["survey_id"], r["stratum"], r["cluster"],
                               float(r["weight"]), int(r["birth_year"]), status))
    if rejected and warnings is not None:
        warnings.append(f"fbh: rejected {rejected} records with missing age")
    return out


def read_hiv_csv(path: str) -> dict[tuple[str, int], float]:
    rows = _read_rows(path, {"survey", "year", "ratio_r"})
    out = {}
    for r in rows:
        ratio = float(r["ratio_r"])
        if ratio <= 0:
            raise IngestionError(f"hiv ratio {ratio} must be positive")
        out[(r["survey"], int(r["year"]))] = ratio
    return out


# ---------------------------------------------------------------------------
# CSV writers (used for fixtures and for emitting canonical datasets).
# ---------------------------------------------------------------------------


def write_vr_csv(path: str, records: list[VrCountRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "band", "deaths", "sampling_fraction"])
        for r in records:
            w.writerow([r.year, r.label, r.deaths, repr(r.sampling_fraction)])


def write_exposure_csv(path: str, exp: ExposureSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "births", "pop_band", "pop"])
        years = sorted(set(exp.births) | {y for y, _ in exp.pops})
        for y in years:
            first = True
            births = exp.births.get(y)
            pop_items = sorted((band, v) for (yy, band), v in exp.pops.items()
                               if yy == y)
            if not pop_items:
                w.writerow([y, repr(births) if births else "", "", ""])
                continue
            for band, v in pop_items:
                w.writerow([y, repr(births) if first and births else "",
                            band_label(AgeBand(*band)), repr(v)])
                first = False


def write_rates_csv(path: str, records: list[RateRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "year", "age_months", "q", "se", "se_scale", "kind"])
        for r in records:
            w.writerow([r.source_id, r.year, repr(r.age_months), repr(r.q),
                        repr(float(np.sqrt(r.logit_var))), "logit", r.kind])


def write_sbh_csv(path: str, records: list[SbhRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "ref_year", "mother_group", "q1", "q5", "is_census"])
        for r in records:
            w.writerow([r.source_id, r.reference_year, r.mother_group,
                        repr(r.q1), repr(r.q5), int(r.is_census)])


def write_fbh_csv(path: str, records: list[BirthRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["survey_id", "stratum", "cluster", "weight", "birth_year",
                    "died", "age_months"])
        for r in records:
            st = r.status
            if isinstance(st, Died):
                died, age = 1, st.age
            elif isinstance(st, IntervalDied):
                died, age = 1, 0.0 if st.low == 0.0 else st.low
            else:
                died, age = 0, st.age
            w.writerow([r.survey_id, r.stratum_id, r.cluster_id, repr(r.weight),
                        r.birth_year, died, repr(age)])


def write_hiv_csv(path: str, factors: dict[tuple[str, int], float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["survey", "year", "ratio_r"])
        for (survey, year), ratio in sorted(factors.items()):
            w.writerow([survey, year, repr(ratio)])


def write_manifest(path: str, country_id: str, year_start: int, year_end: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"country_id": country_id, "year_start": year_start,
                   "year_end": year_end}, fh, indent=2, sort_keys=True)
        fh.write("\n")
