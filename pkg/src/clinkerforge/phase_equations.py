"""Linear clinker equations Y = A X + B: Bogue, plant-specific cases and their comparison.

Four data-driven cases differ in the oxide columns and whether an intercept
is fitted:

    MajorOnly            CaO SiO2 Al2O3 Fe2O3
    MajorIntercept       same + intercept
    MajorMinor           all nine clinker oxides
    MajorMinorIntercept  all nine + intercept

Outputs are always ordered (alite, belite, ferrite) and are not clipped
unless asked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import MAJOR_OXIDES, OXIDES, PHASES, Dataset, DimensionMismatch
from .eval_tune import mae, mape, r2
from .linear_models import RankDeficient


class EquationCase(str, Enum):
    MAJOR_ONLY = "MajorOnly"
    MAJOR_INTERCEPT = "MajorIntercept"
    MAJOR_MINOR = "MajorMinor"
    MAJOR_MINOR_INTERCEPT = "MajorMinorIntercept"
    BOGUE = "BogueStandard"

    @property
    def oxides(self) -> tuple[str, ...]:
        return OXIDES if self in (EquationCase.MAJOR_MINOR, EquationCase.MAJOR_MINOR_INTERCEPT) else MAJOR_OXIDES

    @property
    def has_intercept(self) -> bool:
        return self in (EquationCase.MAJOR_INTERCEPT, EquationCase.MAJOR_MINOR_INTERCEPT)


FITTED_CASES: tuple[EquationCase, ...] = (EquationCase.MAJOR_ONLY, EquationCase.MAJOR_INTERCEPT,
                                          EquationCase.MAJOR_MINOR, EquationCase.MAJOR_MINOR_INTERCEPT)

# Published plant constants. The second SiO2 column in the printed first
# case is read as Al2O3, following its matrix layout.
PUBLISHED_A: dict[EquationCase, np.ndarray] = {
    EquationCase.MAJOR_ONLY: np.array([
        [2.97, -4.5, -7.25, 0.05],
        [-2.1, 5.66, 6.15, -0.11],
        [0.02, -0.28, -0.28, 3.82],
    ]),
    EquationCase.MAJOR_INTERCEPT: np.array([
        [4.84, -3.62, -4.47, 1.52],
        [-4.71, 4.5, 2.39, -1.89],
        [0.65, -0.3, 0.52, 4.24],
    ]),
    EquationCase.MAJOR_MINOR: np.array([
        [3.08, -4.72, -5.59, 0.09, -1.3, 2.81, -13.62, 4.78, -83.96],
        [-2.31, 6.12, 4.92, -0.12, -1.71, -2.83, 10.76, -2.33, 107.0],
        [0.11, -0.07, 0.17, 3.56, -0.8, 2.41, -5.17, -2.85, -30.0],
    ]),
    EquationCase.MAJOR_MINOR_INTERCEPT: np.array([
        [4.72, -3.15, -4.28, 3.08, 0.33, 2.4, -7.0, 5.96, -75.0],
        [-5.17, 4.04, 1.7, -3.48, -0.94, -5.11, 3.76, -4.3, 86.46],
        [0.05, -0.13, 0.1, 3.41, -0.9, 2.29, -5.35, -2.99, -27.37],
    ]),
}
PUBLISHED_B = np.array([-166.9, -219.4, -45.0])


@dataclass(frozen=True, eq=False)
class PhaseEquationSet:
    case: EquationCase
    A: np.ndarray  # 3 x k, rows alite, belite, ferrite
    B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    oxides: tuple[str, ...] = MAJOR_OXIDES
    aluminate: tuple[np.ndarray, float] | None = None  # optional extra row (coefficients, intercept)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64).ravel()
        if A.shape != (3, len(self.oxides)) or B.shape != (3,):
            raise DimensionMismatch(f"A {A.shape} / B {B.shape} do not fit {len(self.oxides)} oxides")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "case", EquationCase(self.case))
        object.__setattr__(self, "oxides", tuple(self.oxides))

    @property
    def k(self) -> int:
        return len(self.oxides)

    @property
    def name(self) -> str:
        return self.case.value

    def __call__(self, oxides) -> np.ndarray:
        return eval_equation(self, oxides)

    def to_text(self) -> str:
        lines = [f"case {self.case.value}", "columns " + " ".join(self.oxides) + " intercept"]
        rows = [(p, self.A[i], self.B[i]) for i, p in enumerate(PHASES)]
        if self.aluminate is not None:
            rows.insert(2, ("Aluminate", np.asarray(self.aluminate[0]), self.aluminate[1]))
        for label, coef, b in rows:
            lines.append(" ".join([label] + [repr(float(c)) for c in coef] + [repr(float(b))]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def published_equation(case: EquationCase | str) -> PhaseEquationSet:
    """Plant constants as printed; the intercept vector is shared by both intercept cases."""
    case = EquationCase(case)
    B = PUBLISHED_B if case.has_intercept else np.zeros(3)
    return PhaseEquationSet(case, PUBLISHED_A[case].copy(), B.copy(), case.oxides)


def parse_equation(text: str) -> PhaseEquationSet:
    """Read the labelled row-major matrix format written by :meth:`PhaseEquationSet.to_text`."""
    case, columns, rows = None, None, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        head, rest = line[0], line[1:]
        if head == "case":
            case = EquationCase(rest[0])
        elif head == "columns":
            if rest[-1] != "intercept":
                raise ValueError(f"line {lineno}: the last column must be 'intercept'")
            columns = tuple(rest[:-1])
        else:
            if columns is None:
                raise ValueError(f"line {lineno}: row before 'columns'")
            if len(rest) != len(columns) + 1:
                raise DimensionMismatch(f"line {lineno}: {len(rest)} values for {len(columns) + 1} columns")
            rows[head] = np.array([float(v) for v in rest])
    if case is None or columns is None:
        raise ValueError("equation text needs 'case' and 'columns' lines")
    missing = [p for p in PHASES if p not in rows]
    if missing:
        raise ValueError(f"missing phase rows: {missing}")
    A = np.array([rows[p][:-1] for p in PHASES])
    B = np.array([rows[p][-1] for p in PHASES])
    alu = (rows["Aluminate"][:-1], float(rows["Aluminate"][-1])) if "Aluminate" in rows else None
    return PhaseEquationSet(case, A, B, columns, alu)


def load_equation(path) -> PhaseEquationSet:
    return parse_equation(Path(path).read_text(encoding="utf-8"))


def bogue_constants(path=None) -> PhaseEquationSet:
    """Bogue coefficients from ``path`` or the bundled constants file."""
    if path is None:
        text = resources.files("clinkerforge").joinpath("data/bogue.txt").read_text(encoding="utf-8")
        return parse_equation(text)
    return load_equation(path)


def _oxide_matrix(oxides, k: int) -> np.ndarray:
    X = np.asarray(oxides, dtype=np.float64)
    if X.shape[-1] != k:
        raise DimensionMismatch(f"expected {k} oxide values, got {X.shape[-1]}")
    return X


def eval_equation(eq: PhaseEquationSet, oxides, clip: bool = False) -> np.ndarray:
    """``A x + B`` for one oxide vector (shape (3,)) or a matrix of rows (shape (n, 3))."""
    X = _oxide_matrix(oxides, eq.k)
    Y = X @ eq.A.T + eq.B
    return np.clip(Y, 0.0, 100.0) if clip else Y


def bogue_standard(oxides, eq: PhaseEquationSet | None = None, aluminate: bool = False) -> np.ndarray:
    """Bogue phases from (CaO, SiO2, Al2O3, Fe2O3); with ``aluminate`` a fourth column is appended."""
    eq = bogue_constants() if eq is None else eq
    Y = eval_equation(eq, oxides)
    if aluminate:
        if eq.aluminate is None:
            raise ValueError("these constants have no aluminate row")
        X = _oxide_matrix(oxides, eq.k)
        alu = X @ eq.aluminate[0] + eq.aluminate[1]
        Y = np.concatenate([Y, np.asarray(alu)[..., None]], axis=-1)
    return Y


def oxide_columns(ds: Dataset, oxides=OXIDES) -> np.ndarray:
    return np.column_stack([ds.column("CLK_" + o) for o in oxides])


def fit_clinker_equations(ds: Dataset, case: EquationCase | str) -> PhaseEquationSet:
    """Per-phase least squares on the case's clinker oxide columns."""
    case = EquationCase(case)
    if case is EquationCase.BOGUE:
        raise ValueError("the Bogue set is not fitted")
    X = oxide_columns(ds, case.oxides)
    Y = ds.targets[:, [ds.target_names.index("CLK_" + p) for p in PHASES]]
    D = np.column_stack([X, np.ones(len(X))]) if case.has_intercept else X
    if len(D) < len(case.oxides) + 1:
        raise RankDeficient(f"{len(D)} rows for {D.shape[1]} unknowns")
    coef, _, rank, _ = np.linalg.lstsq(D, Y, rcond=None)
    if rank < D.shape[1]:
        raise RankDeficient(f"design rank {rank} < {D.shape[1]}")
    A = coef[: len(case.oxides)].T
    B = coef[-1] if case.has_intercept else np.zeros(3)
    return PhaseEquationSet(case, A, B, case.oxides)


def error_histogram(err, width: float = 0.5) -> pd.DataFrame:
    """Counts of signed errors in bins of ``width`` aligned to multiples of it."""
    err = np.asarray(err, dtype=np.float64)
    lo = np.floor(err.min() / width) * width
    hi = np.ceil(err.max() / width) * width
    edges = np.arange(lo, hi + width * 1.5, width)
    counts, edges = np.histogram(err, bins=edges)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


@dataclass
class EquationComparison:
    table: pd.DataFrame  # one row per (equation, phase)
    histograms: dict[tuple[str, str], pd.DataFrame]
    errors: dict[tuple[str, str], np.ndarray]


def compare_equations(eqs, ds: Dataset, names=None, clip: bool = False, bin_width: float = 0.5) -> EquationComparison:
    """Per-equation, per-phase MAPE, MAE and R^2 plus signed-error (prediction minus measurement) histograms."""
    names = list(names) if names is not None else [e.name for e in eqs]
    rows, hists, errs = [], {}, {}
    for name, eq in zip(names, eqs):
        pred = eval_equation(eq, oxide_columns(ds, eq.oxides), clip=clip)
        for i, phase in enumerate(PHASES):
            y = ds.target(phase)
            e = pred[:, i] - y
            errs[name, phase] = e
            hists[name, phase] = error_histogram(e, bin_width)
            rows.append({"equation": name, "phase": phase, "MAPE": mape(y, pred[:, i]),
                         "MAE": mae(y, pred[:, i]), "R2": r2(y, pred[:, i]), "mean_error": float(e.mean())})
    return EquationComparison(pd.DataFrame(rows), hists, errs)
