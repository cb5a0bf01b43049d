"""Domain types, canonical feature order and physical validation.

Every matrix in the package indexes columns in the canonical order defined
here: process parameters ``P1..P34`` first, then kiln feed, hot meal and
clinker oxides, with the three clinker phases as targets.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd


class EmptySpec(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class Stream(str, Enum):
    KILN_FEED = "KilnFeed"
    HOT_MEAL = "HotMeal"
    CLINKER = "Clinker"


# (name, description, unit, lo, hi) in the plant historian's order.
PROCESS_PARAMETERS: tuple[tuple[str, str, str, float, float], ...] = (
    ("P1", "Gas outlet temperature, stage 1A cyclone", "degC", 0, 600),
    ("P2", "Gas outlet temperature, stage 1B cyclone", "degC", 0, 600),
    ("P3", "Gas outlet temperature, stage 2 cyclone", "degC", 0, 800),
    ("P4", "Gas outlet temperature, stage 3 cyclone", "degC", 0, 900),
    ("P5", "Gas outlet temperature, stage 4 cyclone", "degC", 0, 1000),
    ("P6", "Gas outlet temperature, stage 5 cyclone", "degC", 0, 1200),
    ("P7", "Preheater gas outlet temperature", "degC", 0, 600),
    ("P8", "O2 in raw gas at preheater outlet", "%", 0, 25),
    ("P9", "Raw mill outlet temperature", "degC", 0, 150),
    ("P10", "Kiln feed flow rate to preheater", "tph", 0, 550),
    ("P11", "Calciner exit duct temperature", "degC", 0, 1370),
    ("P12", "Flue gas O2 at calciner outlet", "%", 0, 25),
    ("P13", "Solids outlet temperature at kiln inlet", "degC", 700, 1500),
    ("P14", "Calciner fuel consumption", "tph", 0, 36),
    ("P15", "O2 in kiln gas at kiln inlet", "%", 0, 25),
    ("P16", "Hot meal temperature of lowest cyclone", "degC", 0, 1200),
    ("P17", "Total cooling air", "Am3/h", 0, 630000),
    ("P18", "Tertiary air temperature at cooler outlet", "degC", 0, 650),
    ("P19", "Clinker production", "tph", 0, 100),
    ("P20", "Total gas flow entering GCT", "CFM", 0, 3000),
    ("P21", "Gas temperature entering GCT", "degC", 0, 500),
    ("P22", "Spray water used in GCT", "m3/h", 0, 70),
    ("P23", "GCT outlet temperature", "degC", 0, 500),
    ("P24", "Gas temperature entering main fan", "degC", 0, 600),
    ("P25", "Raw mill electric consumption", "kW", 0, 6000),
    ("P26", "Pre-calciner outlet pressure", "mbar", -50, 5),
    ("P27", "Exit pressure, stage 1A cyclone", "mbar", -120, 10),
    ("P28", "Exit pressure, stage 1B cyclone", "mbar", -120, 10),
    ("P29", "Exit pressure, stage 2 cyclone", "mbar", -70, 10),
    ("P30", "Exit pressure, stage 3 cyclone", "mbar", -60, 10),
    ("P31", "Exit pressure, stage 4 cyclone", "mbar", -50, 5),
    ("P32", "Exit pressure, stage 5 cyclone", "mbar", -40, 5),
    ("P33", "Raw mill fan inlet pressure, point 1", "mbar", -15, 5),
    ("P34", "Raw mill fan inlet pressure, point 2", "mbar", -15, 5),
)
PP_NAMES: tuple[str, ...] = tuple(p[0] for p in PROCESS_PARAMETERS)
PP_RANGES: dict[str, tuple[float, float]] = {p[0]: (p[3], p[4]) for p in PROCESS_PARAMETERS}

OXIDES: tuple[str, ...] = ("CaO", "SiO2", "Al2O3", "Fe2O3", "MgO", "SO3", "K2O", "Na2O", "Cl")
MAJOR_OXIDES: tuple[str, ...] = OXIDES[:4]
PHASES: tuple[str, ...] = ("Alite", "Belite", "Ferrite")
HM_FIELDS: tuple[str, ...] = ("SO3", "K2O", "Na2O", "Cl", "Alite", "Belite", "Ferrite")

STREAM_FIELDS: dict[Stream, tuple[str, ...]] = {
    Stream.KILN_FEED: OXIDES,
    Stream.HOT_MEAL: HM_FIELDS,
    Stream.CLINKER: OXIDES + PHASES,
}
STREAM_PREFIX: dict[Stream, str] = {
    Stream.KILN_FEED: "KF_",
    Stream.HOT_MEAL: "HM_",
    Stream.CLINKER: "CLK_",
}

# Composition statistics (min, max, mean, sd), wt.%.
COMPOSITION_STATS: dict[Stream, dict[str, tuple[float, float, float, float]]] = {
    Stream.KILN_FEED: {
        "CaO": (38.17, 44.30, 42.43, 0.36),
        "SiO2": (10.36, 15.04, 13.02, 0.26),
        "Al2O3": (2.38, 4.01, 2.96, 0.11),
        "Fe2O3": (1.86, 2.71, 2.11, 0.05),
        "MgO": (1.31, 2.71, 2.08, 0.19),
        "SO3": (0.03, 0.61, 0.13, 0.06),
        "K2O": (0.31, 0.55, 0.43, 0.03),
        "Na2O": (0.00, 0.18, 0.06, 0.02),
        "Cl": (-0.01, 0.10, 0.02, 0.01),
    },
    Stream.HOT_MEAL: {
        "SO3": (-0.02, 2.97, 0.88, 0.18),
        "K2O": (0.38, 4.00, 1.51, 0.22),
        "Na2O": (0.07, 11.73, 0.17, 0.11),
        "Cl": (0.00, 3.25, 0.64, 0.20),
        "Alite": (0.00, 62.75, 2.22, 1.48),
        "Belite": (0.00, 23.76, 2.69, 1.21),
        "Ferrite": (0.00, 20.45, 1.31, 0.77),
    },
    Stream.CLINKER: {
        "CaO": (57.71, 66.75, 64.62, 0.42),
        "SiO2": (18.66, 27.10, 20.89, 0.29),
        "Al2O3": (4.57, 7.33, 5.24, 0.17),
        "Fe2O3": (3.06, 4.42, 3.55, 0.11),
        "MgO": (1.90, 4.17, 3.25, 0.36),
        "SO3": (0.07, 1.43, 0.50, 0.10),
        "K2O": (0.41, 0.87, 0.60, 0.06),
        "Na2O": (0.00, 0.39, 0.08, 0.04),
        "Cl": (-0.01, 0.32, 0.01, 0.01),
        "Alite": (0.00, 78.33, 60.03, 3.68),
        "Belite": (0.00, 40.61, 15.11, 3.43),
        "Ferrite": (0.00, 42.23, 14.31, 1.03),
    },
}

GROUPS: tuple[str, ...] = ("PP", "KF", "HM", "CO")
GROUP_FEATURES: dict[str, tuple[str, ...]] = {
    "PP": PP_NAMES,
    "KF": tuple("KF_" + f for f in OXIDES),
    "HM": tuple("HM_" + f for f in HM_FIELDS),
    "CO": tuple("CLK_" + f for f in OXIDES),
}
FEATURE_NAMES: tuple[str, ...] = tuple(itertools.chain.from_iterable(GROUP_FEATURES[g] for g in GROUPS))
TARGET_NAMES: tuple[str, ...] = tuple("CLK_" + p for p in PHASES)
FEATURE_GROUP: dict[str, str] = {f: g for g, names in GROUP_FEATURES.items() for f in names}
COMPOSITION_FEATURES: frozenset[str] = frozenset(FEATURE_NAMES[len(PP_NAMES):]) | frozenset(TARGET_NAMES)


def stream_columns(stream: Stream) -> tuple[str, ...]:
    """Canonical CSV column names (without the timestamp) for a composition stream."""
    return tuple(STREAM_PREFIX[stream] + f for f in STREAM_FIELDS[stream])


@dataclass(frozen=True)
class ProcessRecord:
    timestamp: np.datetime64
    params: tuple[float, ...]

    def __post_init__(self):
        if len(self.params) != len(PP_NAMES):
            raise SchemaMismatch(f"expected {len(PP_NAMES)} process parameters, got {len(self.params)}")

    def out_of_range(self) -> list[str]:
        return [
            name
            for name, v in zip(PP_NAMES, self.params)
            if not (PP_RANGES[name][0] <= v <= PP_RANGES[name][1])
        ]


@dataclass(frozen=True)
class CompositionSample:
    timestamp: np.datetime64
    stream: Stream
    values: Mapping[str, float]


@dataclass(frozen=True)
class ValidationVerdict:
    violations: tuple[str, ...] = ()

    @property
    def validated(self) -> bool:
        return not self.violations


def validate_sample(s: CompositionSample) -> ValidationVerdict:
    """Check a composition sample against its stream schema and physical limits.

    Violations are returned as data, never raised. Phase sums are bounded
    above by 100 wt.% only: minor phases are not measured, so totals below
    100 are legitimate.
    """
    violations = []
    expected = set(STREAM_FIELDS[s.stream])
    got = set(s.values)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        violations.append(f"schema mismatch: missing={missing} extra={extra}")
    for name in STREAM_FIELDS[s.stream]:
        v = s.values.get(name)
        if v is not None and v < 0:
            violations.append(f"negative value: {name}={v}")
    if s.stream is Stream.CLINKER and all(p in s.values for p in PHASES):
        total = sum(s.values[p] for p in PHASES)
        if total > 100:
            violations.append(f"phase sum {total:g} > 100")
    return ValidationVerdict(tuple(violations))


@dataclass(frozen=True, order=True)
class FeatureSetSpec:
    groups: frozenset[str]

    def __post_init__(self):
        unknown = set(self.groups) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown feature groups {sorted(unknown)}")

    @classmethod
    def of(cls, *groups: str) -> FeatureSetSpec:
        return cls(frozenset(groups))

    @classmethod
    def parse(cls, text: str) -> FeatureSetSpec:
        """Parse ``"PP+KF"`` or ``"pp,kf"`` style strings; ``"all"`` selects every group."""
        text = text.strip()
        if text.lower() == "all":
            return cls(frozenset(GROUPS))
        parts = [p.strip().upper() for p in text.replace(",", "+").split("+") if p.strip()]
        return cls(frozenset(parts))

    @property
    def enables_predictive_control(self) -> bool:
        # clinker oxides only exist after production
        return "CO" not in self.groups

    @property
    def ordered_groups(self) -> tuple[str, ...]:
        return tuple(g for g in GROUPS if g in self.groups)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(itertools.chain.from_iterable(GROUP_FEATURES[g] for g in self.ordered_groups))

    @property
    def label(self) -> str:
        return "+".join(self.ordered_groups)

    def __str__(self) -> str:
        return self.label


def expand_feature_sets() -> list[FeatureSetSpec]:
    """All 15 non-empty subsets of {PP, KF, HM, CO}, by size then lexically."""
    specs = []
    for size in range(1, len(GROUPS) + 1):
        for combo in itertools.combinations(GROUPS, size):
            specs.append(FeatureSetSpec(frozenset(combo)))
    return specs


class Split(str, Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"
    HOLDOUT = "Holdout"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned modelling rows: features, targets and optional split labels.

    ``features`` and ``targets`` are float64 matrices whose columns follow
    ``feature_names`` / ``target_names``; absent cells are NaN.
    """

    timestamps: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    target_names: tuple[str, ...] = TARGET_NAMES
    split: np.ndarray | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        X = np.asarray(self.features, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        X = X.reshape(len(ts), X.shape[-1] if X.ndim == 2 else len(self.feature_names))
        Y = Y.reshape(len(ts), Y.shape[-1] if Y.ndim == 2 else len(self.target_names))
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"{X.shape[1]} feature columns vs {len(self.feature_names)} names")
        if Y.shape[1] != len(self.target_names):
            raise SchemaMismatch(f"{Y.shape[1]} target columns vs {len(self.target_names)} names")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaMismatch("duplicate feature names")
        split = None
        if self.split is not None:
            split = np.asarray(self.split, dtype=object)
            if split.shape != (len(ts),):
                raise SchemaMismatch("split labels must cover every row")
            split.flags.writeable = False
        for a in (ts, X, Y):
            a.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", Y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))
        object.__setattr__(self, "split", split)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def is_strictly_increasing(self) -> bool:
        t = self.timestamps.astype(np.int64)
        return bool(np.all(np.diff(t) > 0))

    def column(self, name: str) -> np.ndarray:
        if name in self.feature_names:
            return self.features[:, self.feature_names.index(name)]
        return self.targets[:, self.target_names.index(name)]

    def target(self, phase: str) -> np.ndarray:
        """Target vector by phase name (``"alite"``) or column name (``"CLK_Alite"``)."""
        name = phase if phase in self.target_names else "CLK_" + phase.capitalize()
        return self.targets[:, self.target_names.index(name)]

    def take(self, index) -> Dataset:
        index = np.asarray(index)
        return Dataset(
            self.timestamps[index],
            self.features[index],
            self.targets[index],
            self.feature_names,
            self.target_names,
            None if self.split is None else self.split[index],
            dict(self.meta),
        )

    def with_split(self, labels) -> Dataset:
        return Dataset(self.timestamps, self.features, self.targets, self.feature_names,
                       self.target_names, np.asarray(labels, dtype=object), dict(self.meta))

    def subset(self, label: Split | str) -> Dataset:
        if self.split is None:
            raise ValueError("dataset has no split labels")
        label = Split(label).value
        return self.take(np.flatnonzero(self.split == label))

    def select_columns(self, names: Sequence[str]) -> Dataset:
        idx = [self.feature_names.index(n) for n in names]
        return Dataset(self.timestamps, self.features[:, idx], self.targets, tuple(names),
                       self.target_names, self.split, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        for j, name in enumerate(self.target_names):
            df[name] = self.targets[:, j]
        df.insert(0, "timestamp", format_timestamps(self.timestamps))
        if self.split is not None:
            df["split"] = list(self.split)
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> Dataset:
        targets = [c for c in TARGET_NAMES if c in df.columns]
        skip = {"timestamp", "split", *targets}
        features = [c for c in df.columns if c not in skip]
        order = {name: i for i, name in enumerate(FEATURE_NAMES)}
        features.sort(key=lambda c: order.get(c, len(order)))
        split = df["split"].to_numpy(dtype=object) if "split" in df.columns else None
        return cls(
            parse_timestamps(df["timestamp"]),
            df[features].to_numpy(dtype=np.float64),
            df[targets].to_numpy(dtype=np.float64),
            tuple(features),
            tuple(targets),
            split,
        )

    def to_csv(self, path, header: str | None = None) -> None:
        write_csv(self.to_frame(), path, header)

    @classmethod
    def read_csv(cls, path) -> Dataset:
        return cls.from_frame(read_csv(path))


def project_features(ds: Dataset, spec: FeatureSetSpec) -> Dataset:
    """Keep only the columns of the groups in ``spec``; rows and targets untouched."""
    if not spec.groups:
        raise EmptySpec("feature-set spec has no groups")
    wanted = [n for n in spec.feature_names if n in ds.feature_names]
    missing = set(spec.feature_names) - set(wanted)
    if missing:
        raise SchemaMismatch(f"dataset lacks columns {sorted(missing)[:5]}...")
    return ds.select_columns(wanted)


# ---------------------------------------------------------------- CSV helpers

def format_timestamps(ts: np.ndarray) -> list[str]:
    ts = np.asarray(ts, dtype="datetime64[m]")
    return [s + ":00Z" for s in np.datetime_as_string(ts, unit="m")]


def parse_timestamps(values: Iterable[str]) -> np.ndarray:
    out = pd.to_datetime(pd.Series(list(values)), utc=True)
    return out.dt.tz_localize(None).to_numpy().astype("datetime64[m]")


def write_csv(df: pd.DataFrame, path, header: str | None = None) -> None:
    """Write ``df`` with a fixed float format so identical data gives identical bytes."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# ---------------------------------------------------------------- raw streams

STREAM_FILES: dict[str, str] = {"PP": "pp.csv", "KF": "kf.csv", "HM": "hm.csv", "CLK": "clinker.csv"}


@dataclass(frozen=True, eq=False)
class StreamTable:
    """One raw measurement stream (DB1 process data or a DB2 composition stream).

    Rows are timestamped at minute resolution; ``values`` columns follow
    ``columns``. Absent cells are NaN.
    """

    name: str
    timestamps: np.ndarray
    values: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        vals = np.asarray(self.values, dtype=np.float64).reshape(len(ts), len(self.columns))
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", tuple(self.columns))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def minutes(self) -> np.ndarray:
        """Timestamps as integer minutes since the Unix epoch."""
        return self.timestamps.astype(np.int64)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def take(self, index) -> StreamTable:
        index = np.asarray(index)
        return StreamTable(self.name, self.timestamps[index], self.values[index], self.columns)

    def record(self, i: int) -> ProcessRecord | CompositionSample:
        if self.name == "PP":
            return ProcessRecord(self.timestamps[i], tuple(float(v) for v in self.values[i]))
        stream = {"KF": Stream.KILN_FEED, "HM": Stream.HOT_MEAL, "CLK": Stream.CLINKER}[self.name]
        prefix = STREAM_PREFIX[stream]
        values = {c[len(prefix):]: float(v) for c, v in zip(self.columns, self.values[i]) if not np.isnan(v)}
        return CompositionSample(self.timestamps[i], stream, values)

    def equals(self, other: StreamTable) -> bool:
        return (
            self.name == other.name
            and self.columns == other.columns
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=list(self.columns))
        df.insert(0, "timestamp", format_timestamps(self.timestamps))
        return df

    @classmethod
    def from_frame(cls, name: str, df: pd.DataFrame) -> StreamTable:
        cols = [c for c in df.columns if c != "timestamp"]
        return cls(name, parse_timestamps(df["timestamp"]), df[cols].to_numpy(dtype=np.float64), tuple(cols))


def stream_schema(name: str) -> tuple[str, ...]:
    if name == "PP":
        return PP_NAMES
    return stream_columns({"KF": Stream.KILN_FEED, "HM": Stream.HOT_MEAL, "CLK": Stream.CLINKER}[name])


@dataclass(frozen=True, eq=False)
class RawStreams:
    pp: StreamTable
    kf: StreamTable
    hm: StreamTable
    clinker: StreamTable

    def items(self):
        return (("PP", self.pp), ("KF", self.kf), ("HM", self.hm), ("CLK", self.clinker))

    def replace(self, **tables: StreamTable) -> RawStreams:
        current = {"pp": self.pp, "kf": self.kf, "hm": self.hm, "clinker": self.clinker}
        current.update(tables)
        return RawStreams(**current)

    def write(self, directory, header: str | None = None) -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for key, table in self.items():
            write_csv(table.to_frame(), directory / STREAM_FILES[key], header)

    @classmethod
    def read(cls, directory) -> RawStreams:
        from pathlib import Path

        directory = Path(directory)
        tables = {}
        for key, fname in STREAM_FILES.items():
            table = StreamTable.from_frame(key, read_csv(directory / fname))
            if table.columns != stream_schema(key):
                raise SchemaMismatch(f"{fname}: columns do not match the {key} schema")
            tables[key] = table
        return cls(tables["PP"], tables["KF"], tables["HM"], tables["CLK"])


class DimensionMismatch(ValueError):
    pass


def check_columns(X, n_features: int) -> np.ndarray:
    """2-D float view of ``X``; raises DimensionMismatch on a column-count mismatch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} columns, got shape {X.shape}")
    return X
