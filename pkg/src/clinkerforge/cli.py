"""Command-line entry point: ``clinkerforge <subcommand> [options]``.

Exit codes: 0 success, 1 internal error, 2 usage or input error. Errors are
reported on stderr tagged with the stage that failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import explain as ex
from . import phase_equations as pe
from .align import ResidenceSchedule, WindowPolicy, build_aligned_dataset
from .config import ConfigError, RunConfig, derive_seed, load_config, parse_config
from .datamodel import (GROUP_FEATURES, PHASES, TARGET_NAMES, Dataset, DimensionMismatch, FeatureSetSpec,
                        RawStreams, SchemaMismatch, Split, expand_feature_sets, project_features, read_csv,
                        write_csv)
from .eval_tune import (MetricReport, TemporalHoldout, expand_grid, grid_search, parse_grid, split_summary,
                        split_train_test)
from .models import FAMILIES, FittedModel, fit_model, load_model
from .preprocess import run_pipeline
from .report import FEATURE_SET_FILE, PREDICTIONS_FILE, MissingArtifacts, build_report
from .serialize import FormatError, canonical_json, sha256_bytes, sha256_file
from .synthgen import ConfigInvalid, DefectRates, GeneratorConfig, generate_history, inject_defects, write_history

log = logging.getLogger("clinkerforge")

INPUT_ERRORS = (FileNotFoundError, IsADirectoryError, NotADirectoryError, ConfigError, ConfigInvalid,
                SchemaMismatch, DimensionMismatch, FormatError, MissingArtifacts, KeyError,
                pd.errors.ParserError, pd.errors.EmptyDataError)


class UsageError(ValueError):
    pass


class StageFailure(Exception):
    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error

    @property
    def exit_code(self) -> int:
        return 2 if isinstance(self.error, INPUT_ERRORS + (UsageError,)) else 1


@contextmanager
def stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except StageFailure:
        raise
    except Exception as exc:  # tagged and mapped to an exit code in main
        raise StageFailure(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = round(time.perf_counter() - t0, 3)


# ------------------------------------------------------------------ hashing

def manifest_hash(config: dict, inputs: dict[str, str], seed: int) -> str:
    """Hash of everything that determines a run's outputs."""
    doc = {"config": config, "inputs": dict(sorted(inputs.items())), "seed": seed, "version": __version__}
    return sha256_bytes(canonical_json(doc).encode())


def header_for(digest: str) -> str:
    return f"clinkerforge {__version__} manifest {digest}"


def _input_hashes(*paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.glob("*.csv")):
                out[f.name] = sha256_file(f)
        else:
            out[p.name] = sha256_file(p)
    return out


def _command_header(args, inputs: dict[str, str]) -> str:
    skip = {"func", "verbose", "jobs"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return header_for(manifest_hash(params, inputs, args.seed))


# ------------------------------------------------------------------ helpers

def _phase_column(phase: str) -> str:
    name = phase if phase in TARGET_NAMES else "CLK_" + phase.strip().capitalize()
    if name not in TARGET_NAMES:
        raise UsageError(f"unknown target {phase!r}; choose alite, belite or ferrite")
    return name


def _read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return Dataset.read_csv(path)


def _train_rows(ds: Dataset) -> Dataset:
    return ds.subset(Split.TRAIN) if ds.split is not None else ds


def _parse_params(items) -> dict:
    params = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = parse_grid(f"{k} = {v}")[k.strip()][0]
    return params


def _out(args, default: str) -> Path:
    return Path(args.out if args.out else default)


# ------------------------------------------------------------------ subcommands

def cmd_synth(args) -> int:
    with stage("synth"):
        cfg = GeneratorConfig(seed=args.seed, duration_days=args.days,
                              defect_rates=DefectRates(args.duplicate_frac, args.missing_frac,
                                                       args.negative_frac, args.outlier_frac))
        if args.noise_sd:
            cfg = cfg.with_noise([float(s) for s in args.noise_sd.split(",")])
        raw, truth = generate_history(cfg)
        raw, manifest = inject_defects(raw, cfg)
        header = _command_header(args, {})
        write_history(_out(args, "synth"), raw, truth, manifest, header)
    return 0


def cmd_align(args) -> int:
    with stage("align"):
        raw = RawStreams.read(args.input)
        ds, rep = build_aligned_dataset(raw, ResidenceSchedule(), WindowPolicy(width=args.window_min),
                                        keep_unmatched=args.keep_unmatched)
        ds.to_csv(_out(args, "aligned.csv"), _command_header(args, _input_hashes(args.input)))
        log.info("aligned %d of %d clinker rows", rep.n_aligned, rep.n_clinker)
    return 0


def cmd_clean(args) -> int:
    with stage("clean"):
        ds = _read_dataset(args.input)
        out, report = run_pipeline(ds, args.lo, args.hi, args.quantile_method)
        out.to_csv(_out(args, "clean.csv"), _command_header(args, _input_hashes(args.input)))
        if args.report:
            report.to_json(args.report)
    return 0


def cmd_split(args) -> int:
    with stage("split"):
        ds = _read_dataset(args.input)
        mode = TemporalHoldout(args.months) if args.mode == "temporal" else "random"
        out = split_train_test(ds, args.ratio, args.seed, mode)
        header = _command_header(args, _input_hashes(args.input))
        path = _out(args, "split.csv")
        out.to_csv(path, header)
        write_csv(split_summary(out), path.with_name(path.stem + "_summary.csv"), header)
    return 0


def _project(ds: Dataset, features: str) -> Dataset:
    return project_features(ds, FeatureSetSpec.parse(features))


def cmd_train(args) -> int:
    with stage("train"):
        if args.model not in FAMILIES:
            raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(FAMILIES)}")
        ds = _project(_train_rows(_read_dataset(args.train)), args.features)
        target = _phase_column(args.target)
        m = fit_model(args.model, ds.features, ds.column(target), _parse_params(args.param), seed=args.seed,
                      feature_names=ds.feature_names, target=target)
        m.extra["feature_set"] = args.features
        m.save(_out(args, f"{args.model}_{target[4:].lower()}.json"))
    return 0


def cmd_tune(args) -> int:
    with stage("tune"):
        if args.model not in FAMILIES:
            raise UsageError(f"unknown model {args.model!r}")
        grid = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
        ds = _project(_train_rows(_read_dataset(args.train)), args.features)
        target = _phase_column(args.target)
        res = grid_search(args.model, grid, ds.features, ds.column(target), k=args.k, seed=args.seed,
                          jobs=args.jobs, feature_names=ds.feature_names, target=target)
        header = _command_header(args, _input_hashes(args.train, args.grid))
        write_csv(res.table(), _out(args, f"tune_{args.model}.csv"), header)
        if args.model_out:
            res.best_model.extra["feature_set"] = args.features
            res.best_model.save(args.model_out)
    return 0


def _predict_frame(m: FittedModel, ds: Dataset) -> np.ndarray:
    missing = [n for n in m.feature_names if n not in ds.feature_names]
    if missing:
        raise SchemaMismatch(f"data lacks model features {missing[:5]}")
    return m.predict(ds.select_columns(m.feature_names).features)


def cmd_evaluate(args) -> int:
    with stage("evaluate"):
        ds = _read_dataset(args.data)
        rows, preds = [], []
        for path in args.model:
            m = load_model(path)
            y = ds.column(m.target)
            yp = _predict_frame(m, ds)
            labels = ds.split if ds.split is not None else np.full(len(ds), "All", dtype=object)
            for split in dict.fromkeys(labels):
                mask = labels == split
                r = MetricReport.of(y[mask], yp[mask])
                rows.append({"model": Path(path).stem, "family": m.family, "target": m.target, "split": split,
                             "n": int(mask.sum()), "MAE": r.mae, "R2": r.r2, "MAPE": r.mape})
            preds.append(pd.DataFrame({"family": m.family, "phase": m.target[4:], "repeat": 0, "split": labels,
                                       "timestamp": ds.to_frame()["timestamp"], "y_true": y, "y_pred": yp}))
        header = _command_header(args, _input_hashes(args.data, *args.model))
        write_csv(pd.DataFrame(rows), _out(args, "metrics.csv"), header)
        if args.predictions:
            write_csv(pd.concat(preds, ignore_index=True), args.predictions, header)
    return 0


def cmd_equations(args) -> int:
    with stage("equations"):
        ds = _read_dataset(args.data)
        header = _command_header(args, _input_hashes(args.data, *(args.eq or ())))
        if args.action == "fit":
            eq = pe.fit_clinker_equations(_train_rows(ds), args.case)
            eq.save(_out(args, f"equation_{eq.case.value}.txt"))
            return 0
        eqs = [pe.load_equation(p) for p in args.eq] if args.eq else []
        names = [Path(p).stem for p in args.eq] if args.eq else []
        if args.action == "eval":
            if len(eqs) != 1:
                raise UsageError("equations eval needs exactly one --eq file")
            Y = pe.eval_equation(eqs[0], pe.oxide_columns(ds, eqs[0].oxides), clip=args.clip)
            df = pd.DataFrame(Y, columns=list(PHASES))
            df.insert(0, "timestamp", ds.to_frame()["timestamp"])
            write_csv(df, _out(args, "equation_predictions.csv"), header)
            return 0
        if not eqs:
            train = _train_rows(ds)
            eqs = [pe.fit_clinker_equations(train, c) for c in pe.FITTED_CASES]
            names = [c.value for c in pe.FITTED_CASES]
        eqs.append(pe.bogue_constants(args.bogue))
        names.append("Bogue")
        test = ds.subset(Split.TEST) if ds.split is not None and (ds.split == "Test").any() else ds
        comp = pe.compare_equations(eqs, test, names, clip=args.clip)
        path = _out(args, "equation_comparison.csv")
        write_csv(comp.table, path, header)
        hist = pd.concat([h.assign(equation=k[0], phase=k[1]) for k, h in comp.histograms.items()],
                         ignore_index=True)
        write_csv(hist, path.with_name(path.stem + "_histograms.csv"), header)
    return 0


def _explain(m: FittedModel, ds_all: Dataset, points: Dataset, scope: str, mode: str, background: int,
             n_samples: int, seed: int) -> ex.GlobalAttributionSummary:
    names = m.feature_names
    if scope == "co":
        cols = [i for i, n in enumerate(names) if n in GROUP_FEATURES["CO"]]
        if not cols:
            raise UsageError("the model has no clinker-oxide features to explain")
    else:
        cols = list(range(len(names)))
        mode = "sampled"
    bg = ex.background_sample(ds_all.select_columns(names).features, background, seed)
    X = points.select_columns(names).features
    return ex.global_summary(m.predict, X, bg, features=cols, feature_names=[names[i] for i in cols],
                             mode=mode, n_samples=n_samples, seed=seed)


def cmd_explain(args) -> int:
    with stage("explain"):
        m = load_model(args.model)
        ds = _read_dataset(args.data)
        train = _train_rows(ds)
        pts = ds.subset(Split.TEST) if ds.split is not None and (ds.split == "Test").any() else ds
        pts = pts.take(np.arange(min(args.points, len(pts))))
        summ = _explain(m, train, pts, args.features, args.mode, args.background, args.n_samples, args.seed)
        header = _command_header(args, _input_hashes(args.data, args.model))
        path = _out(args, "shap.csv")
        write_csv(summ.beeswarm(), path, header)
        write_csv(summ.table(), path.with_name(path.stem + "_summary.csv"), header)
    return 0


def cmd_report(args) -> int:
    with stage("report"):
        build_report(args.results, args.out or args.results)
    return 0


# ------------------------------------------------------------------ pipeline

def _generator_config(cfg: RunConfig, seed: int) -> GeneratorConfig:
    return GeneratorConfig(
        seed=cfg["synth.seed"] if cfg["synth.seed"] is not None else seed,
        duration_days=cfg["synth.duration_days"],
        defect_rates=DefectRates(cfg["synth.duplicate_frac"], cfg["synth.missing_frac"],
                                 cfg["synth.negative_frac"], cfg["synth.outlier_frac"]),
        noise_sd=tuple(cfg["synth.noise_sd"]),
    )


def _fit_configured(cfg: RunConfig, family: str, ds: Dataset, target: str, seed: int, jobs: int,
                    tuning: list) -> FittedModel:
    fixed, grid = cfg.model_params(family)
    y = ds.column(target)
    if cfg["tune.enabled"] and grid:
        candidates = [{**fixed, **c} for c in expand_grid(grid)]
        res = grid_search(family, candidates, ds.features, y, k=cfg["tune.k"], seed=seed, jobs=jobs,
                          feature_names=ds.feature_names, target=target)
        tuning.append(res.table().assign(family=family, phase=target[4:]))
        return res.best_model
    return fit_model(family, ds.features, y, fixed, seed=seed, feature_names=ds.feature_names, target=target)


def run_pipeline_config(cfg: RunConfig, out: Path, seed: int, jobs: int = 1) -> dict:
    """Run every configured stage into ``out`` and return the manifest."""
    (out / "models").mkdir(parents=True, exist_ok=True)
    timings, rows = {}, {}
    with stage("synth", timings):
        if cfg["synth.enabled"]:
            gcfg = _generator_config(cfg, seed)
            inputs = {}
        else:
            if not cfg["synth.input_dir"]:
                raise ConfigError("synth.enabled = false needs synth.input_dir")
            inputs = _input_hashes(cfg["synth.input_dir"])
        digest = manifest_hash(cfg.canonical(), inputs, seed)
        header = header_for(digest)
        if cfg["synth.enabled"]:
            raw, truth = generate_history(gcfg)
            raw, defects = inject_defects(raw, gcfg)
            write_history(out / "raw", raw, truth, defects, header)
            rows["defects"] = defects.counts()
        else:
            raw = RawStreams.read(cfg["synth.input_dir"])
        rows["raw_clinker"] = len(raw.clinker)

    with stage("align", timings):
        sched = ResidenceSchedule(*(int(cfg[f"align.{k}"]) for k in
                                    ("kf_buffer", "preheater", "cooler", "sampling_delay", "hm_lag")))
        policy = WindowPolicy(int(cfg["align.window"]), int(cfg["align.kf_max_age"]), int(cfg["align.hm_max_age"]))
        aligned, _ = build_aligned_dataset(raw, sched, policy, keep_unmatched=True)
        aligned.to_csv(out / "aligned.csv", header)
        rows["aligned"] = len(aligned)

    with stage("clean", timings):
        clean, report = run_pipeline(aligned, cfg["clean.lo"], cfg["clean.hi"], cfg["clean.quantile_method"])
        clean.to_csv(out / "clean.csv", header)
        report.to_json(out / "cleaning_report.json")
        rows["clean"] = len(clean)
        rows["cleaning"] = {s.stage: s.removed for s in report.stages}

    spec = FeatureSetSpec.parse(cfg["tune.feature_set"])
    targets = [_phase_column(t) for t in cfg["tune.targets"]]
    families = list(cfg["tune.families"])
    mode = TemporalHoldout(cfg["split.holdout_months"]) if cfg["split.mode"] == "temporal" else "random"
    preds, tuning, splits, fitted = [], [], {}, {}
    stamps = clean.to_frame()["timestamp"].to_numpy()

    for rep in range(cfg["tune.repeats"]):
        with stage("split", timings):
            split = split_train_test(clean, cfg["split.ratio"], derive_seed(seed, 1, rep), mode)
            splits[rep] = split
            if rep == 0:
                split.to_csv(out / "split.csv", header)
                write_csv(split_summary(split), out / "split_summary.csv", header)
        with stage("train", timings):
            proj = project_features(split, spec)
            train = proj.subset(Split.TRAIN)
            for fam in families:
                for target in targets:
                    m = _fit_configured(cfg, fam, train, target, derive_seed(seed, 2, rep), jobs, tuning)
                    if rep == 0:
                        fitted[fam, target] = m
                        m.save(out / "models" / f"{fam}_{target[4:].lower()}.json")
                    preds.append(pd.DataFrame({
                        "family": fam, "phase": target[4:], "repeat": rep, "split": proj.split,
                        "timestamp": stamps, "y_true": proj.column(target), "y_pred": m.predict(proj.features)}))

    with stage("evaluate", timings):
        pred_df = pd.concat(preds, ignore_index=True)
        write_csv(pred_df, out / PREDICTIONS_FILE, header)
        if tuning:
            write_csv(pd.concat(tuning, ignore_index=True), out / "tuning.csv", header)
        split0 = splits[0]
        scores = []
        radar_fam = cfg["report.radar_family"]
        fixed, _ = cfg.model_params(radar_fam)
        for fs in expand_feature_sets():
            p = project_features(split0, fs)
            tr, te = p.subset(Split.TRAIN), p.subset(Split.TEST)
            for target in targets:
                m = fit_model(radar_fam, tr.features, tr.column(target), fixed, seed=derive_seed(seed, 2, 0),
                              feature_names=tr.feature_names, target=target)
                r = MetricReport.of(te.column(target), m.predict(te.features))
                scores.append({"feature_set": fs.label, "family": radar_fam, "phase": target[4:],
                               "MAE": r.mae, "R2": r.r2, "MAPE": r.mape})
        write_csv(pd.DataFrame(scores), out / FEATURE_SET_FILE, header)

    with stage("equations", timings):
        train0, test0 = split0.subset(Split.TRAIN), split0.subset(Split.TEST)
        eqs = [pe.fit_clinker_equations(train0, c) for c in pe.FITTED_CASES]
        for eq in eqs:
            eq.save(out / f"equation_{eq.case.value}.txt")
        comp = pe.compare_equations(eqs + [pe.bogue_constants()], test0,
                                    [e.case.value for e in eqs] + ["Bogue"])
        write_csv(comp.table, out / "equation_comparison.csv", header)

    if cfg["explain.enabled"]:
        with stage("explain", timings):
            target = _phase_column(cfg["explain.target"])
            key = (cfg["explain.family"], target)
            if key not in fitted:
                raise ConfigError(f"explain.family {key[0]} / explain.target {target} was not trained")
            pts = split0.subset(Split.TEST)
            pts = pts.take(np.arange(min(cfg["explain.points"], len(pts))))
            summ = _explain(fitted[key], train0, pts, cfg["explain.scope"], cfg["explain.mode"],
                            cfg["explain.background"], cfg["explain.n_samples"], derive_seed(seed, 3))
            write_csv(summ.beeswarm(), out / "shap_beeswarm.csv", header)
            write_csv(summ.table(), out / "shap_summary.csv", header)

    with stage("report", timings):
        build_report(out, out, cfg["report.hist_width"])

    manifest = {
        "manifest_hash": digest,
        "config_hash": cfg.hash(),
        "input_hashes": inputs,
        "seed": seed,
        "version": __version__,
        "rows": rows,
        "wall_clock_s": timings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def quickstart_text() -> str:
    return resources.files("clinkerforge").joinpath("data/quickstart.cfg").read_text(encoding="utf-8")


def cmd_pipeline(args) -> int:
    with stage("config"):
        path = args.config_file or args.config
        cfg = load_config(path) if path else parse_config(quickstart_text(), "quickstart.cfg")
        seed = args.seed if args.seed_given else (cfg["synth.seed"] if cfg["synth.seed"] is not None else 7)
    manifest = run_pipeline_config(cfg, _out(args, "clinkerforge_run"), seed, args.jobs)
    print(manifest["manifest_hash"])
    return 0


# ------------------------------------------------------------------ parser

def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=argparse.SUPPRESS, help="run configuration file")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="top-level random seed (default 7)")
    g.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads for tuning (default 1)")
    g.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS, help="log progress")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    p = argparse.ArgumentParser(prog="clinkerforge", parents=[g],
                                description="Clinker phase prediction: data synthesis, alignment, cleaning, "
                                            "models, equations and attributions.")
    p.add_argument("--version", action="version", version=f"clinkerforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", parents=[g], help="generate a synthetic plant history")
    s.add_argument("--days", type=int, default=30)
    s.add_argument("--noise-sd", help="comma-separated phase noise sds (alite,belite,ferrite)")
    for kind in ("duplicate", "missing", "negative", "outlier"):
        s.add_argument(f"--{kind}-frac", type=float, default=0.0, help=f"fraction of {kind} defects")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("align", parents=[g], help="join raw streams into aligned rows")
    s.add_argument("--in", dest="input", required=True, help="raw stream directory")
    s.add_argument("--window-min", type=int, default=120, help="process-data window in minutes")
    s.add_argument("--keep-unmatched", action="store_true", help="keep rows lacking a join partner as NaN")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("clean", parents=[g], help="run the cleaning stages")
    s.add_argument("--in", dest="input", required=True, help="aligned CSV")
    s.add_argument("--report", help="cleaning report JSON path")
    s.add_argument("--quantile-method", choices=("normal", "linear"), default="normal")
    s.add_argument("--lo", type=float, default=0.0001)
    s.add_argument("--hi", type=float, default=0.9999)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("split", parents=[g], help="label train/test (and holdout) rows")
    s.add_argument("--in", dest="input", required=True, help="clean CSV")
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--mode", choices=("random", "temporal"), default="random")
    s.add_argument("--months", type=int, default=2, help="holdout months for temporal mode")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", parents=[g], help="fit one model family for one phase")
    s.add_argument("--model", required=True, help="|".join(FAMILIES))
    s.add_argument("--train", required=True, help="CSV; Train rows are used when a split column exists")
    s.add_argument("--target", required=True, help="alite, belite or ferrite")
    s.add_argument("--features", default="all", help="feature groups, e.g. PP+KF or all")
    s.add_argument("--param", action="append", help="hyperparameter override key=value (repeatable)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune", parents=[g], help="grid search with k-fold cross-validation")
    s.add_argument("--model", required=True)
    s.add_argument("--grid", required=True, help="grid file of 'param = v1, v2' lines")
    s.add_argument("--train", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--features", default="all")
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--model-out", help="save the refitted best model here")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("evaluate", parents=[g], help="score saved models on a dataset")
    s.add_argument("--model", action="append", required=True, help="model JSON (repeatable)")
    s.add_argument("--data", required=True)
    s.add_argument("--predictions", help="also write per-row predictions here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("equations", parents=[g], help="fit, evaluate or compare linear phase equations")
    s.add_argument("action", choices=("fit", "eval", "compare"))
    s.add_argument("--data", required=True)
    s.add_argument("--case", default="MajorOnly", choices=[c.value for c in pe.FITTED_CASES])
    s.add_argument("--eq", action="append", help="equation file (repeatable)")
    s.add_argument("--bogue", help="Bogue constants file (default: bundled)")
    s.add_argument("--clip", action="store_true", help="clip outputs to [0, 100]")
    s.set_defaults(func=cmd_equations)

    s = sub.add_parser("explain", parents=[g], help="Shapley attributions for a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--features", choices=("co", "all"), default="co")
    s.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    s.add_argument("--background", type=int, default=ex.BACKGROUND_ROWS)
    s.add_argument("--points", type=int, default=25)
    s.add_argument("--n-samples", type=int, default=2048)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", parents=[g], help="build report tables from evaluation artifacts")
    s.add_argument("--results", required=True, help="directory holding predictions.csv")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("pipeline", parents=[g], help="run every stage from a configuration file")
    s.add_argument("config_file", nargs="?", help="configuration file (default: bundled quickstart)")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.seed_given = hasattr(args, "seed")
    for name, default in (("config", None), ("out", None), ("seed", 7), ("jobs", 1), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config and args.command != "pipeline":
        try:
            load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"clinkerforge: [config] error: {exc}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"clinkerforge: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
