"""Communities and Crime ingestion and the two state-based transfer experiments.

The input is the published headerless comma-separated file with 128
attributes and ``?`` as the missing marker. Identifier columns other than
``state`` are dropped, as is every predictor that has a missing entry; the
last column (violent crimes per population) is the response.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import DataError, GroupData, MultiSourceProblem
from .l0solve import L0Options
from .l1solve import LassoPathConfig
from .select import fit_sjets, fit_sotl
from .stacking import build_stacked

log = logging.getLogger(__name__)

MISSING = "?"

CRIME_COLUMNS = (
    "state", "county", "community", "communityname", "fold", "population",
    "householdsize", "racepctblack", "racePctWhite", "racePctAsian", "racePctHisp",
    "agePct12t21", "agePct12t29", "agePct16t24", "agePct65up", "numbUrban", "pctUrban",
    "medIncome", "pctWWage", "pctWFarmSelf", "pctWInvInc", "pctWSocSec", "pctWPubAsst",
    "pctWRetire", "medFamInc", "perCapInc", "whitePerCap", "blackPerCap", "indianPerCap",
    "AsianPerCap", "OtherPerCap", "HispPerCap", "NumUnderPov", "PctPopUnderPov",
    "PctLess9thGrade", "PctNotHSGrad", "PctBSorMore", "PctUnemployed", "PctEmploy",
    "PctEmplManu", "PctEmplProfServ", "PctOccupManu", "PctOccupMgmtProf",
    "MalePctDivorce", "MalePctNevMarr", "FemalePctDiv", "TotalPctDiv", "PersPerFam",
    "PctFam2Par", "PctKids2Par", "PctYoungKids2Par", "PctTeen2Par",
    "PctWorkMomYoungKids", "PctWorkMom", "NumIlleg", "PctIlleg", "NumImmig",
    "PctImmigRecent", "PctImmigRec5", "PctImmigRec8", "PctImmigRec10", "PctRecentImmig",
    "PctRecImmig5", "PctRecImmig8", "PctRecImmig10", "PctSpeakEnglOnly",
    "PctNotSpeakEnglWell", "PctLargHouseFam", "PctLargHouseOccup", "PersPerOccupHous",
    "PersPerOwnOccHous", "PersPerRentOccHous", "PctPersOwnOccup", "PctPersDenseHous",
    "PctHousLess3BR", "MedNumBR", "HousVacant", "PctHousOccup", "PctHousOwnOcc",
    "PctVacantBoarded", "PctVacMore6Mos", "MedYrHousBuilt", "PctHousNoPhone",
    "PctWOFullPlumb", "OwnOccLowQuart", "OwnOccMedVal", "OwnOccHiQuart", "RentLowQ",
    "RentMedian", "RentHighQ", "MedRent", "MedRentPctHousInc", "MedOwnCostPctInc",
    "MedOwnCostPctIncNoMtg", "NumInShelters", "NumStreet", "PctForeignBorn",
    "PctBornSameState", "PctSameHouse85", "PctSameCity85", "PctSameState85",
    "LemasSwornFT", "LemasSwFTPerPop", "LemasSwFTFieldOps", "LemasSwFTFieldPerPop",
    "LemasTotalReq", "LemasTotReqPerPop", "PolicReqPerOffic", "PolicPerPop",
    "RacialMatchCommPol", "PctPolicWhite", "PctPolicBlack", "PctPolicHisp",
    "PctPolicAsian", "PctPolicMinor", "OfficAssgnDrugUnits", "NumKindsDrugsSeiz",
    "PolicAveOTWorked", "LandArea", "PopDens", "PctUsePubTrans", "PolicCars",
    "PolicOperBudg", "LemasPctPolicOnPatr", "LemasGangUnitDeploy",
    "LemasPctOfficDrugUn", "PolicBudgPerPop", "ViolentCrimesPerPop",
)
IDENTIFIER_COLUMNS = ("county", "community", "communityname", "fold")
STATE_COLUMN = 0
TARGET_COLUMN = len(CRIME_COLUMNS) - 1


@dataclass(frozen=True)
class CrimeTable:
    """Cleaned crime data: one row per community.

    ``provenance`` lists ``(column_name, reason)`` for every dropped column.
    """

    state_codes: np.ndarray
    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    provenance: tuple[tuple[str, str], ...]

    def __post_init__(self):
        for name in ("state_codes", "features", "target"):
            getattr(self, name).setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.target.size

    @property
    def p_c(self) -> int:
        return self.features.shape[1]

    def rows_for_state(self, code: int) -> np.ndarray:
        return np.flatnonzero(self.state_codes == code)


def load_crime_csv(path) -> CrimeTable:
    """Parse the raw 128-column file into a :class:`CrimeTable`.

    Raises
    ------
    DataError
        On a wrong field count, a non-numeric retained entry (the message
        names the line and the column), a missing state or response value, or
        when no predictor survives.
    FileNotFoundError
        If ``path`` does not exist.
    """
    path = Path(path)
    ncol = len(CRIME_COLUMNS)
    raw = []
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != ncol:
                raise DataError(f"{path}: line {lineno} has {len(fields)} fields, expected {ncol}")
            raw.append((lineno, [f.strip() for f in fields]))
    if not raw:
        raise DataError(f"{path}: no data rows")

    provenance = [(name, "identifier") for name in IDENTIFIER_COLUMNS]
    keep = []
    for j in range(STATE_COLUMN + 1, TARGET_COLUMN):
        name = CRIME_COLUMNS[j]
        if name in IDENTIFIER_COLUMNS:
            continue
        n_missing = sum(fields[j] == MISSING for _, fields in raw)
        if n_missing:
            provenance.append((name, f"missing in {n_missing} of {len(raw)} rows"))
        else:
            keep.append(j)
    if not keep:
        raise DataError(f"{path}: every predictor column has missing values")

    def number(lineno, fields, j):
        try:
            v = float(fields[j])
        except ValueError:
            raise DataError(
                f"{path}: line {lineno}, column {j + 1} ({CRIME_COLUMNS[j]}): "
                f"non-numeric value {fields[j]!r}"
            ) from None
        if not math.isfinite(v):
            raise DataError(f"{path}: line {lineno}, column {j + 1} ({CRIME_COLUMNS[j]}): non-finite value")
        return v

    states = np.empty(len(raw), dtype=np.int64)
    X = np.empty((len(raw), len(keep)))
    y = np.empty(len(raw))
    for i, (lineno, fields) in enumerate(raw):
        s = number(lineno, fields, STATE_COLUMN)
        if s != int(s):
            raise DataError(f"{path}: line {lineno}, column 1 (state): non-integer code {fields[0]!r}")
        states[i] = int(s)
        X[i] = [number(lineno, fields, j) for j in keep]
        y[i] = number(lineno, fields, TARGET_COLUMN)
        if not 0.0 <= y[i] <= 1.0:
            raise DataError(f"{path}: line {lineno}: response {y[i]} outside [0, 1]")
    names = tuple(CRIME_COLUMNS[j] for j in keep)
    log.info("loaded %s: %d rows, %d predictors, %d columns dropped", path, len(raw), len(keep), len(provenance))
    return CrimeTable(states, X, y, names, tuple(provenance))


@dataclass(frozen=True)
class ExperimentDesign:
    """Which states form the target and auxiliary groups, with their sizes."""

    target_state: int
    target_size: int
    train_size: int
    auxiliaries: tuple[tuple[int, int], ...]
    total_selected: int


EXPERIMENTS = {
    1: ExperimentDesign(1, 43, 30, ((6, 278),), 322),
    2: ExperimentDesign(9, 69, 44, ((34, 211), (48, 156)), 436),
}


def _design(experiment_id: int) -> ExperimentDesign:
    try:
        return EXPERIMENTS[experiment_id]
    except KeyError:
        raise DataError(f"experiment_id must be 1 or 2, got {experiment_id!r}") from None


def check_state_counts(table: CrimeTable, experiment_id: int, warn_total: bool = True) -> None:
    """Hard error on a per-state count mismatch; warning on the total."""
    d = _design(experiment_id)
    found_total = 0
    for code, expected in ((d.target_state, d.target_size), *d.auxiliaries):
        found = table.rows_for_state(code).size
        if found != expected:
            raise DataError(f"state {code}: expected {expected} rows, found {found}")
        found_total += found
    if warn_total and found_total != d.total_selected:
        log.warning(
            "experiment %d uses %d rows in total; the reference count is %d",
            experiment_id, found_total, d.total_selected,
        )


def split_target(table: CrimeTable, experiment_id: int, rng_seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random train/test row indices for the target state."""
    d = _design(experiment_id)
    rows = table.rows_for_state(d.target_state)
    perm = np.random.default_rng(rng_seed).permutation(rows.size)
    return np.sort(rows[perm[: d.train_size]]), np.sort(rows[perm[d.train_size:]])


def standardization_stats(X: np.ndarray, y: np.ndarray):
    """Feature means, feature scales and the response mean.

    Columns constant in ``X`` get scale 1 so they map to zero instead of NaN.
    """
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd, float(y.mean())


def build_experiment(table: CrimeTable, experiment_id: int, rng_seed):
    """Target/auxiliary problem and held-out target rows for one resample.

    Features of every group are centered and scaled with the target training
    rows' statistics; responses are centered by the target training mean.

    Returns
    -------
    (MultiSourceProblem, GroupData)
        Group 0 is the target training set; the auxiliaries follow in the
        listed state order. The second element is the target test set.
    """
    check_state_counts(table, experiment_id, warn_total=False)
    d = _design(experiment_id)
    train, test = split_target(table, experiment_id, rng_seed)
    X, y = table.features, table.target
    mu, sd, ybar = standardization_stats(X[train], y[train])

    def group(idx):
        return GroupData((X[idx] - mu) / sd, y[idx] - ybar)

    groups = [group(train)] + [group(table.rows_for_state(code)) for code, _ in d.auxiliaries]
    return MultiSourceProblem(tuple(groups), 0), group(test)


@dataclass(frozen=True)
class EmpiricalConfig:
    base_seed: int = 0
    gamma_max: int | None = None
    l0: L0Options = field(default_factory=L0Options)
    lasso: LassoPathConfig = field(default_factory=LassoPathConfig)


class EmpiricalError(RuntimeError):
    pass


def heldout_lmse(beta, test: GroupData) -> float:
    """Log of the mean squared prediction error on ``test``."""
    r = test.response - test.design @ beta
    return math.log(float(r @ r) / test.n)


def _one_repeat(table: CrimeTable, experiment_id: int, index: int, methods, config: EmpiricalConfig):
    problem, test = build_experiment(table, experiment_id, [config.base_seed, index])
    system = build_stacked(problem)
    out = []
    for m in methods:
        try:
            if m == "sotl":
                fit = fit_sotl(system, config.gamma_max, config.l0)
            elif m == "sjets":
                fit = fit_sjets(system, config.lasso, [config.base_seed, index, 1])
            else:
                raise ValueError(f"unknown method {m!r}")
        except Exception as exc:
            raise EmpiricalError(f"repeat {index}, method {m}: {type(exc).__name__}: {exc}") from exc
        out.append({"repeat_index": index, "method": m, "lmse": heldout_lmse(fit.beta_target, test)})
    return out


@dataclass
class EmpiricalResult:
    experiment_id: int
    methods: tuple[str, ...]
    records: list[dict]

    def distribution(self, method: str) -> np.ndarray:
        return np.array([r["lmse"] for r in self.records if r["method"] == method])

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in self.methods:
            v = self.distribution(m)
            out[m] = {"mean": float(v.mean()), "median": float(np.median(v)), "n": int(v.size)}
        return out


def run_empirical(
    table: CrimeTable,
    experiment_id: int,
    n_repeats: int,
    methods=("sotl", "sjets"),
    config: EmpiricalConfig | None = None,
    jobs: int = 1,
) -> EmpiricalResult:
    """Repeat the resample-fit-evaluate loop and collect test LMSE per method.

    Repeat ``i`` splits with seed ``(base_seed, i)``; every method sees the
    same split. Any fit failure aborts with an :class:`EmpiricalError` naming
    the repeat.
    """
    if n_repeats < 1:
        raise ValueError(f"n_repeats must be at least 1, got {n_repeats}")
    config = config or EmpiricalConfig()
    methods = tuple(methods)
    check_state_counts(table, experiment_id)
    idx = range(n_repeats)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(
                _one_repeat, [table] * n_repeats, [experiment_id] * n_repeats, idx,
                [methods] * n_repeats, [config] * n_repeats,
            ))
    else:
        chunks = [_one_repeat(table, experiment_id, i, methods, config) for i in idx]
    return EmpiricalResult(experiment_id, methods, [r for c in chunks for r in c])


def write_distribution(result: EmpiricalResult, path_stem) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (repeat_index, method, lmse) and ``<stem>.json``."""
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path_stem.parent / f"{path_stem.name}.csv"
    json_path = path_stem.parent / f"{path_stem.name}.json"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("repeat_index", "method", "lmse"))
        for r in result.records:
            wr.writerow((r["repeat_index"], r["method"], repr(r["lmse"])))
    payload = {
        "experiment_id": result.experiment_id,
        "records": result.records,
        "summary": result.summary(),
    }
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path
