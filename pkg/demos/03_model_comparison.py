"""
Linear versus nonlinear regressors
==================================

Fit every model family on all 59 features for one random split and
compare test MAPE per phase. Takes a couple of minutes, mostly boosting.
"""

import pandas as pd

from clinkerforge.align import build_aligned_dataset
from clinkerforge.eval_tune import mae, mape, r2, split_train_test
from clinkerforge.models import FAMILIES, fit_model
from clinkerforge.synthgen import GeneratorConfig, generate_history

raw, _ = generate_history(GeneratorConfig(seed=7))
ds, _ = build_aligned_dataset(raw)
split = split_train_test(ds, 0.8, seed=0)
tr, te = split.subset("Train"), split.subset("Test")

rows = []
for fam in FAMILIES:
    for j, phase in enumerate(ds.target_names):
        m = fit_model(fam, tr.features, tr.targets[:, j], seed=0, feature_names=tr.feature_names, target=phase)
        pred = m.predict(te.features)
        yt = te.targets[:, j]
        rows.append({"model": fam, "phase": phase[4:], "MAPE": mape(yt, pred), "MAE": mae(yt, pred),
                     "R2": r2(yt, pred)})

table = pd.DataFrame(rows).pivot(index="model", columns="phase", values="MAPE").round(3)
print(table.sort_values("Alite"))
