"""Synthetic DB1/DB2 plant history with a known phase law and injected defects.

The generator produces streams shaped like the plant historian: process
parameters every minute, kiln feed and clinker every hour, hot meal every two
hours. Clinker rows are stamped with their production time, 37 minutes after
the kiln feed measurement they derive from.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import signal, special, stats

from .datamodel import (
    COMPOSITION_STATS,
    HM_FIELDS,
    OXIDES,
    PHASES,
    PP_NAMES,
    RawStreams,
    Stream,
    StreamTable,
    TARGET_NAMES,
    format_timestamps,
    stream_columns,
    write_csv,
)


class ConfigInvalid(ValueError):
    pass


PP_CADENCE_MIN = 1
KF_CADENCE_MIN = 60
HM_CADENCE_MIN = 120
CLINKER_CADENCE_MIN = 60

# Residence chain used to stamp the generated streams; align.py reads its own copy.
PRODUCTION_LAG_MIN = 37
HM_LAG_MIN = 21
PP_WINDOW_MIN = 120

HISTORY_START = np.datetime64("2020-01-01T00:00", "m")
HALF_LIFE_HOURS = 6.0
TRUNCATE_SD = 3.0

# Plant phase means and spreads, wt.%.
TARGET_SD = np.array([COMPOSITION_STATS[Stream.CLINKER][p][3] for p in PHASES])
TARGET_MEAN = np.array([COMPOSITION_STATS[Stream.CLINKER][p][2] for p in PHASES])
DEFAULT_NOISE_SD = (1.4, 1.3, 0.4)
PHASE_RANGES = np.array([(45.0, 70.0), (5.0, 25.0), (11.0, 17.0)])

# Kiln inlet solids temperature P13: operating point and spread, degC.
P13_MEAN = 1050.0
P13_SD = 25.0

# (mean, sd, latent, loading) per process parameter. Latents: T thermal state,
# D draft/pressure state, F production rate.
PP_MODEL: dict[str, tuple[float, float, str, float]] = {
    "P1": (330, 12, "T", 0.6), "P2": (335, 12, "T", 0.6), "P3": (520, 15, "T", 0.6),
    "P4": (680, 15, "T", 0.65), "P5": (800, 15, "T", 0.7), "P6": (880, 15, "T", 0.75),
    "P7": (320, 10, "T", 0.5), "P8": (4.0, 0.6, "D", -0.5), "P9": (85, 5, "F", 0.3),
    "P10": (280, 10, "F", 0.8), "P11": (880, 15, "T", 0.7), "P12": (3.0, 0.5, "D", -0.5),
    "P13": (P13_MEAN, P13_SD, "T", 0.8), "P14": (14, 1.0, "F", 0.6), "P15": (3.5, 0.6, "D", -0.4),
    "P16": (870, 15, "T", 0.75), "P17": (300000, 15000, "F", 0.5), "P18": (420, 20, "T", 0.4),
    "P19": (75, 4, "F", 0.8), "P20": (1500, 100, "F", 0.5), "P21": (350, 15, "T", 0.3),
    "P22": (30, 4, "F", 0.4), "P23": (180, 8, "T", 0.2), "P24": (150, 8, "T", 0.2),
    "P25": (3500, 200, "F", 0.5), "P26": (-20, 4, "D", 0.6), "P27": (-70, 6, "D", 0.7),
    "P28": (-70, 6, "D", 0.7), "P29": (-45, 4, "D", 0.6), "P30": (-35, 4, "D", 0.6),
    "P31": (-28, 3, "D", 0.6), "P32": (-20, 3, "D", 0.5), "P33": (-6, 1.2, "D", 0.3),
    "P34": (-6, 1.2, "D", 0.3),
}

# Plant-specific major-oxide coefficients (alite, belite, ferrite) x (CaO, SiO2, Al2O3, Fe2O3).
CASE1_MATRIX = np.array([
    [2.97, -4.5, -7.25, 0.05],
    [-2.1, 5.66, 6.15, -0.11],
    [0.02, -0.28, -0.28, 3.82],
])


@dataclass(frozen=True)
class DefectRates:
    duplicate_frac: float = 0.0
    missing_frac: float = 0.0
    negative_frac: float = 0.0
    outlier_frac: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "duplicate": self.duplicate_frac,
            "missing": self.missing_frac,
            "negative": self.negative_frac,
            "outlier": self.outlier_frac,
        }


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 7
    duration_days: int = 30
    defect_rates: DefectRates = field(default_factory=DefectRates)
    noise_sd: tuple[float, float, float] = DEFAULT_NOISE_SD
    pp_cadence: int = PP_CADENCE_MIN
    kf_cadence: int = KF_CADENCE_MIN
    hm_cadence: int = HM_CADENCE_MIN
    clinker_cadence: int = CLINKER_CADENCE_MIN

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigInvalid("seed must be non-negative")
        if self.duration_days < 1:
            raise ConfigInvalid("duration_days must be >= 1")
        cadences = (self.pp_cadence, self.kf_cadence, self.hm_cadence, self.clinker_cadence)
        if cadences != (PP_CADENCE_MIN, KF_CADENCE_MIN, HM_CADENCE_MIN, CLINKER_CADENCE_MIN):
            raise ConfigInvalid("cadences are fixed at 1 min / 1 h / 2 h / 1 h")
        for kind, rate in self.defect_rates.as_dict().items():
            if not 0 <= rate < 0.25:
                raise ConfigInvalid(f"{kind} defect rate {rate} outside [0, 0.25)")
        if len(self.noise_sd) != 3 or any(s < 0 for s in self.noise_sd):
            raise ConfigInvalid("noise_sd needs three non-negative entries")

    def with_noise(self, noise_sd) -> GeneratorConfig:
        return replace(self, noise_sd=tuple(float(s) for s in noise_sd))


# ------------------------------------------------------------------ phase law

def _softplus(x):
    return np.logaddexp(0.0, x)


CO_MEAN = np.array([COMPOSITION_STATS[Stream.CLINKER][o][2] for o in OXIDES])
CO_SD = np.array([COMPOSITION_STATS[Stream.CLINKER][o][3] for o in OXIDES])


def _raw_phase_terms(oxides: np.ndarray, p13: np.ndarray) -> np.ndarray:
    """Unscaled phase response: major-oxide linear form plus nonlinear terms."""
    z = (oxides - CO_MEAN) / CO_SD
    t = (p13 - P13_MEAN) / P13_SD
    zca, zsi, zal, zfe, zmg = z[:, 0], z[:, 1], z[:, 2], z[:, 3], z[:, 4]
    # linear part in sd units
    lin = (z[:, :4] * CO_SD[:4]) @ CASE1_MATRIX.T
    burn = np.tanh(4.0 * t)  # clinkering threshold in kiln-inlet temperature
    lime = _softplus(1.5 * zca) / 1.5
    alite = lin[:, 0] + 1.6 * lime - 0.3 * zca * zsi + 3.0 * burn - 0.1 * zmg
    belite = lin[:, 1] - 0.9 * lime + 0.3 * zca * zsi - 2.8 * burn + 0.05 * zmg
    ferrite = lin[:, 2] + 0.15 * zfe * zal + 0.35 * burn * (1.0 + 0.5 * zfe) + 0.05 * _softplus(2.0 * zfe)
    return np.column_stack([alite, belite, ferrite])


SQUASH_SD = 2.5


def _squash(x: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Soft clamp to ``mean +/- 2.5 signal sds``, which sits inside the plant ranges."""
    half = SQUASH_SD * sd
    return TARGET_MEAN + half * np.tanh((x - TARGET_MEAN) / half)


def reference_inputs(n: int = 20000, seed: int = 20200101) -> tuple[np.ndarray, np.ndarray]:
    """Fixed in-distribution sample of (clinker oxides, P13) used to calibrate the law."""
    rng = np.random.default_rng(seed)
    z = np.clip(rng.standard_normal((n, len(OXIDES))), -TRUNCATE_SD, TRUNCATE_SD)
    p13 = P13_MEAN + P13_SD * np.clip(rng.standard_normal(n), -TRUNCATE_SD, TRUNCATE_SD)
    return CO_MEAN + CO_SD * z, p13


@dataclass(frozen=True)
class PhaseLaw:
    """Deterministic map from clinker oxides and effective kiln-inlet temperature to phases.

    The raw response is affinely rescaled and squashed into the observed plant
    ranges so that, over the calibration sample, each phase has the requested
    mean and signal spread.
    """

    offset: np.ndarray
    scale: np.ndarray
    signal_sd: np.ndarray

    def __call__(self, oxides, p13) -> np.ndarray:
        oxides = np.atleast_2d(np.asarray(oxides, dtype=np.float64))
        p13 = np.atleast_1d(np.asarray(p13, dtype=np.float64))
        return _squash(self.offset + self.scale * _raw_phase_terms(oxides, p13), self.signal_sd)

    @classmethod
    def calibrated(cls, signal_sd=None) -> PhaseLaw:
        if signal_sd is None:
            signal_sd = np.sqrt(TARGET_SD**2 - np.square(DEFAULT_NOISE_SD))
        return _calibrate(tuple(np.round(np.asarray(signal_sd, float), 12)))


@functools.lru_cache(maxsize=8)
def _calibrate(signal_sd: tuple[float, ...]) -> PhaseLaw:
    oxides, p13 = reference_inputs()
    raw = _raw_phase_terms(oxides, p13)
    u = (raw - raw.mean(axis=0)) / raw.std(axis=0)
    sd = np.asarray(signal_sd)
    a, b = TARGET_MEAN.copy(), sd.copy()
    # fixed-point match of mean and sd after squashing
    for _ in range(200):
        y = _squash(a + b * u, sd)
        a = a + (TARGET_MEAN - y.mean(axis=0))
        b = b * sd / y.std(axis=0)
    scale = b / raw.std(axis=0)
    offset = a - scale * raw.mean(axis=0)
    return PhaseLaw(offset=offset, scale=scale, signal_sd=sd)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact noise-free phases and the latent paths behind a generated history."""

    phase_law: PhaseLaw
    clinker_timestamps: np.ndarray
    oxides: np.ndarray
    p13_effective: np.ndarray
    phases: np.ndarray
    oxide_latent: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.oxides, columns=[f"CLK_{o}" for o in OXIDES])
        df["P13_window_mean"] = self.p13_effective
        for j, name in enumerate(TARGET_NAMES):
            df[name] = self.phases[:, j]
        df.insert(0, "timestamp", format_timestamps(self.clinker_timestamps))
        return df


# ------------------------------------------------------------------ generation

def _ar1(rng: np.random.Generator, n: int, k: int, half_life_steps: float) -> np.ndarray:
    phi = 0.5 ** (1.0 / half_life_steps)
    eps = rng.standard_normal((n, k)) * np.sqrt(1.0 - phi**2)
    eps[0] = rng.standard_normal(k)
    return signal.lfilter([1.0], [1.0, -phi], eps, axis=0)


def truncated_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws truncated to +/-3 by inversion."""
    lo, hi = special.ndtr(-TRUNCATE_SD), special.ndtr(TRUNCATE_SD)
    return special.ndtri(rng.uniform(lo, hi, size=shape))


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean(axis=0)) / x.std(axis=0)


def _gaussian_marginal(z: np.ndarray, mean, sd) -> np.ndarray:
    """Moment-match ``z`` to (mean, sd), then truncate at +/-3 sd."""
    z = np.clip(_standardize(z), -TRUNCATE_SD, TRUNCATE_SD)
    return mean + sd * z


def _positive_marginal(z: np.ndarray, mean: float, sd: float) -> np.ndarray:
    """Skewed beta marginal on ``[0, mean + 3 sd]`` via a Gaussian copula.

    Used for small oxides whose mean is under 3 sds, where a symmetric
    truncated Gaussian would go negative.
    """
    lo, hi = -mean / sd, TRUNCATE_SD
    m = -lo / (hi - lo)
    v = 1.0 / (hi - lo) ** 2
    k = m * (1 - m) / v - 1.0
    u = special.ndtr(np.clip(_standardize(z), -TRUNCATE_SD, TRUNCATE_SD))
    w = lo + (hi - lo) * stats.beta.ppf(u, m * k, (1 - m) * k)
    return np.maximum(mean + sd * _standardize(w), 0.0)


def _composition(z: np.ndarray, stream: Stream, fields) -> np.ndarray:
    out = np.empty_like(z)
    for j, f in enumerate(fields):
        _, _, mean, sd = COMPOSITION_STATS[stream][f]
        if mean >= TRUNCATE_SD * sd:
            out[:, j] = _gaussian_marginal(z[:, j], mean, sd)
        else:
            out[:, j] = _positive_marginal(z[:, j], mean, sd)
    return out


def _mix(rng, latent: np.ndarray, rho: float, half_life_steps: float) -> np.ndarray:
    own = _ar1(rng, latent.shape[0], latent.shape[1], half_life_steps)
    return rho * _standardize(latent) + np.sqrt(1.0 - rho**2) * _standardize(own)


def window_mean_p13(p13_minutes: np.ndarray, end_minutes: np.ndarray) -> np.ndarray:
    """Arithmetic mean of 1-minute P13 samples over ``[end - 120, end)`` (minute offsets)."""
    csum = np.concatenate([[0.0], np.cumsum(p13_minutes)])
    n = len(p13_minutes)
    hi = np.clip(end_minutes, 0, n)
    lo = np.clip(end_minutes - PP_WINDOW_MIN, 0, n)
    out = np.empty(len(end_minutes))
    empty = hi <= lo
    out[~empty] = (csum[hi[~empty]] - csum[lo[~empty]]) / (hi[~empty] - lo[~empty])
    out[empty] = p13_minutes[0]
    return out


def generate_history(cfg: GeneratorConfig) -> tuple[RawStreams, GroundTruth]:
    """Generate a defect-free history; deterministic for a given config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    hours = 24 * cfg.duration_days
    minutes = 60 * hours
    hl_min = HALF_LIFE_HOURS * 60.0

    # process parameters: three shared latents plus an idiosyncratic slow part and white noise
    latents = {name: _ar1(rng, minutes, 1, hl_min)[:, 0] for name in ("T", "D", "F")}
    idio = _ar1(rng, minutes, len(PP_NAMES), hl_min)
    white = rng.standard_normal((minutes, len(PP_NAMES)))
    pp = np.empty((minutes, len(PP_NAMES)))
    for j, name in enumerate(PP_NAMES):
        mean, sd, lat, load = PP_MODEL[name]
        own = np.sqrt(0.85) * _standardize(idio[:, j]) + np.sqrt(0.15) * white[:, j]
        pp[:, j] = _gaussian_marginal(load * _standardize(latents[lat]) + np.sqrt(1 - load**2) * own, mean, sd)
    pp_ts = HISTORY_START + np.arange(minutes).astype("timedelta64[m]")

    # oxide latent on the hourly production grid; kiln feed and clinker share it
    oxide_latent = _standardize(_ar1(rng, hours, len(OXIDES), HALF_LIFE_HOURS))
    kf = _composition(_mix(rng, oxide_latent, 0.9, HALF_LIFE_HOURS), Stream.KILN_FEED, OXIDES)
    co = _composition(_mix(rng, oxide_latent, 0.95, HALF_LIFE_HOURS), Stream.CLINKER, OXIDES)
    # the first feed sample comes one hour in, so every clinker row has process history
    feed_minute = np.arange(1, hours + 1) * KF_CADENCE_MIN
    kf_ts = HISTORY_START + feed_minute.astype("timedelta64[m]")
    clk_ts = kf_ts + np.timedelta64(PRODUCTION_LAG_MIN, "m")

    # phases from the clinker oxides and the P13 window ending at the feed time
    p13 = pp[:, PP_NAMES.index("P13")]
    p13_eff = window_mean_p13(p13, feed_minute)
    law = PhaseLaw.calibrated()
    exact = law(co, p13_eff)
    phases = exact + truncated_normal(rng, (hours, 3)) * np.asarray(cfg.noise_sd)

    # hot meal every two hours, sampled 21 min before the clinker it feeds
    hm_idx = np.arange(0, hours, HM_CADENCE_MIN // KF_CADENCE_MIN)
    thermal_hourly = _standardize(latents["T"][feed_minute - 1])[:, None]
    hm_latent = np.column_stack([
        oxide_latent[:, [OXIDES.index(o) for o in ("SO3", "K2O", "Na2O", "Cl")]],
        np.repeat(thermal_hourly, 3, axis=1) * np.array([1.0, -1.0, 0.5]),
    ])
    hm = _composition(_mix(rng, hm_latent, 0.7, HALF_LIFE_HOURS)[hm_idx], Stream.HOT_MEAL, HM_FIELDS)
    hm_ts = clk_ts[hm_idx] - np.timedelta64(HM_LAG_MIN, "m")

    raw = RawStreams(
        pp=StreamTable("PP", pp_ts, pp, PP_NAMES),
        kf=StreamTable("KF", kf_ts, kf, stream_columns(Stream.KILN_FEED)),
        hm=StreamTable("HM", hm_ts, hm, stream_columns(Stream.HOT_MEAL)),
        clinker=StreamTable("CLK", clk_ts, np.column_stack([co, phases]), stream_columns(Stream.CLINKER)),
    )
    truth = GroundTruth(law, clk_ts, co, p13_eff, exact, oxide_latent)
    return raw, truth


# ------------------------------------------------------------------ defects

DEFECT_KINDS = ("duplicate", "missing", "negative", "outlier")


@dataclass(frozen=True, eq=False)
class DefectManifest:
    """Every injected defect, keyed by row index in the defective clinker stream.

    ``original`` holds the clean cell value for cell-level defects so the
    clean stream can be restored exactly.
    """

    rows: np.ndarray
    kinds: np.ndarray
    columns: np.ndarray
    original: np.ndarray
    timestamps: np.ndarray

    def count(self, kind: str) -> int:
        return int(np.sum(self.kinds == kind))

    def counts(self) -> dict[str, int]:
        return {k: self.count(k) for k in DEFECT_KINDS}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "row": self.rows,
            "timestamp": format_timestamps(self.timestamps),
            "kind": self.kinds,
            "column": self.columns,
            "original": self.original,
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> DefectManifest:
        from .datamodel import parse_timestamps

        return cls(
            df["row"].to_numpy(dtype=np.int64),
            df["kind"].to_numpy(dtype=object),
            df["column"].fillna("").to_numpy(dtype=object),
            df["original"].to_numpy(dtype=np.float64),
            parse_timestamps(df["timestamp"]) if len(df) else np.array([], dtype="datetime64[m]"),
        )


def defect_count(rate: float, n: int) -> int:
    """Number of defects for a rate: ``floor(rate * n)`` (0.3 % of 14,985 rows -> 44)."""
    return int(np.floor(rate * n + 1e-9))


def inject_defects(raw: RawStreams, cfg: GeneratorConfig) -> tuple[RawStreams, DefectManifest]:
    """Corrupt the clinker stream with duplicates, blanks, sign flips and spikes.

    Each defect lands on its own clinker row, so every preprocessing stage
    removes exactly the rows of one defect kind. Spikes push a composition
    cell 6-10 sds above its column mean.
    """
    cfg.validate()
    rates = cfg.defect_rates
    clk = raw.clinker
    n = len(clk)
    counts = {k: defect_count(r, n) for k, r in rates.as_dict().items()}
    if sum(counts.values()) == 0:
        return raw, DefectManifest(*(np.array([], dtype=d) for d in (np.int64, object, object, np.float64)),
                                   np.array([], dtype="datetime64[m]"))
    if sum(counts.values()) > n - 1:
        raise ConfigInvalid("defect rates exceed the number of clinker rows")

    rng = np.random.default_rng([cfg.seed, 0xDEF])
    # row 0 has no process history and is left alone
    rows = rng.permutation(np.arange(1, n))
    chosen, start = {}, 0
    for kind in DEFECT_KINDS:
        chosen[kind] = np.sort(rows[start:start + counts[kind]])
        start += counts[kind]

    values = clk.values.copy()
    ncol = values.shape[1]
    oxide_cols = np.arange(len(OXIDES))
    col_mean = np.nanmean(values, axis=0)
    col_sd = np.nanstd(values, axis=0)
    cell_defects = []  # (clean row, kind, column index, original value)
    for r in chosen["missing"]:
        c = int(rng.integers(ncol))
        cell_defects.append((r, "missing", c, values[r, c]))
        values[r, c] = np.nan
    for r in chosen["negative"]:
        c = int(rng.choice(oxide_cols[values[r, oxide_cols] > 0]))
        cell_defects.append((r, "negative", c, values[r, c]))
        values[r, c] = -values[r, c]
    for r in chosen["outlier"]:
        c = int(rng.integers(ncol))
        cell_defects.append((r, "outlier", c, values[r, c]))
        values[r, c] = col_mean[c] + rng.uniform(6.0, 10.0) * col_sd[c]

    # duplicates: an exact copy inserted right after the original row
    dup = set(int(r) for r in chosen["duplicate"])
    order = []
    for r in range(n):
        order.append(r)
        if r in dup:
            order.append(r)
    order = np.array(order)
    new_index = np.searchsorted(order, np.arange(n))  # first occurrence of each clean row
    out = StreamTable("CLK", clk.timestamps[order], values[order], clk.columns)

    m_rows, m_kinds, m_cols, m_orig = [], [], [], []
    for r in sorted(dup):
        m_rows.append(new_index[r] + 1)
        m_kinds.append("duplicate")
        m_cols.append("")
        m_orig.append(np.nan)
    for r, kind, c, orig in cell_defects:
        m_rows.append(new_index[r])
        m_kinds.append(kind)
        m_cols.append(clk.columns[c])
        m_orig.append(orig)
    sort = np.argsort(m_rows, kind="stable")
    m_rows = np.asarray(m_rows, dtype=np.int64)[sort]
    manifest = DefectManifest(
        m_rows,
        np.asarray(m_kinds, dtype=object)[sort],
        np.asarray(m_cols, dtype=object)[sort],
        np.asarray(m_orig, dtype=np.float64)[sort],
        out.timestamps[m_rows],
    )
    return raw.replace(clinker=out), manifest


def remove_defects(raw: RawStreams, manifest: DefectManifest) -> RawStreams:
    """Undo :func:`inject_defects` using its manifest."""
    clk = raw.clinker
    values = clk.values.copy()
    for r, kind, col, orig in zip(manifest.rows, manifest.kinds, manifest.columns, manifest.original):
        if kind != "duplicate":
            values[r, clk.columns.index(col)] = orig
    keep = np.ones(len(clk), dtype=bool)
    keep[manifest.rows[manifest.kinds == "duplicate"]] = False
    return raw.replace(clinker=StreamTable("CLK", clk.timestamps[keep], values[keep], clk.columns))


def write_history(directory, raw: RawStreams, truth: GroundTruth, manifest: DefectManifest | None,
                  header: str | None = None) -> None:
    from pathlib import Path

    directory = Path(directory)
    raw.write(directory, header)
    write_csv(truth.to_frame(), directory / "ground_truth.csv", header)
    if manifest is not None:
        write_csv(manifest.to_frame(), directory / "defects.csv", header)
