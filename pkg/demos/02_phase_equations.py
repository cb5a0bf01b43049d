"""
Linear phase equations against the Bogue baseline
=================================================

Evaluate the published major-oxide equation at typical clinker chemistry,
refit all four equation families on synthetic data and compare them with
the classical Bogue constants.
"""

import numpy as np

from clinkerforge.align import build_aligned_dataset
from clinkerforge.eval_tune import split_train_test
from clinkerforge.phase_equations import (
    FITTED_CASES, bogue_constants, compare_equations, eval_equation, fit_clinker_equations, published_equation,
)
from clinkerforge.synthgen import GeneratorConfig, generate_history

# CaO, SiO2, Al2O3, Fe2O3 at their plant means
means = np.array([64.62, 20.89, 5.24, 3.55])
print("major-oxide equation at the means:", np.round(eval_equation(published_equation("MajorOnly"), means), 2))
print("Bogue at the means:", np.round(eval_equation(bogue_constants(), means), 2))

raw, _ = generate_history(GeneratorConfig(seed=7))
ds, _ = build_aligned_dataset(raw)
split = split_train_test(ds, 0.8, seed=7)
train, test = split.subset("Train"), split.subset("Test")

eqs = [fit_clinker_equations(train, case) for case in FITTED_CASES]
print(eqs[0].to_text())

comp = compare_equations(eqs + [bogue_constants()], test, [e.case.value for e in eqs] + ["Bogue"])
print(comp.table.pivot(index="equation", columns="phase", values="MAPE").round(2))
