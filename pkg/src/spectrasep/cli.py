"""Command-line entry point.

One subcommand per pipeline stage, all deterministic given (inputs,
seed, config): synth, calibrate, preprocess, indices, features, scores,
train-rf, rfe, evaluate, stats, report. Every run writes a manifest.json
under --out recording the tool version, seeds, config hash, inputs, and
per-step timings; manifest timings are the only non-reproducible bytes a
run emits. Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, clinical, forest, indices, scores, stats, synth
from . import cube as cube_mod
from . import evaluation as ev
from .errors import ConfigError, SpectrasepError, ValidationError
from .features import FeatureTable, hstack, read_features_csv, write_features_csv
from .seeding import subseed

CONFIG_ENV = "SPECTRASEP_CONFIG"

_CONFIG_SECTIONS = ("indices", "features", "forest", "evaluate", "synth")


class RunContext:
    def __init__(self, args):
        self.seed = args.seed
        self.jobs = args.jobs
        self.out = Path(args.out)
        self.config_path = args.config or os.environ.get(CONFIG_ENV)
        self.config = self._load_config(self.config_path)
        self.notes: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.monotonic()

    @staticmethod
    def _load_config(path):
        if not path:
            return {}
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(doc) - set(_CONFIG_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
        return doc

    def section(self, name) -> dict:
        return self.config.get(name, {})

    def option(self, section, key, flag_value, default):
        if flag_value is not None:
            return flag_value
        return self.section(section).get(key, default)

    def index_specs(self):
        if "indices" in self.config:
            return indices.parse_index_specs(self.config["indices"])
        return indices.default_index_specs()

    def mark(self, step):
        self.timings[step] = round(time.monotonic() - self._t0, 6)

    def write_manifest(self, subcommand, inputs, outputs):
        self.mark("total")
        config_hash = None
        if self.config_path:
            config_hash = hashlib.sha256(
                Path(self.config_path).read_bytes()
            ).hexdigest()
        manifest = {
            "tool": "spectrasep",
            "version": __version__,
            "subcommand": subcommand,
            "seed": self.seed,
            "jobs": self.jobs,
            "config_path": str(self.config_path) if self.config_path else None,
            "config_sha256": config_hash,
            "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
            "outputs": sorted(str(o) for o in outputs),
            "notes": self.notes,
            "timings_s": self.timings,
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def _load_task_labels(labels_path, task) -> dict[str, int]:
    mapping = (
        {"sepsis": 1, "no_sepsis": 0}
        if task == clinical.TASK_SEPSIS
        else {"died": 1, "survived": 0}
    )
    column = "sepsis_label" if task == clinical.TASK_SEPSIS else "survival_label"
    out = {}
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"patient_id", "sepsis_label", "survival_label"}
        if reader.fieldnames is None or set(reader.fieldnames) != required:
            raise ValidationError(
                f"labels file must have columns {sorted(required)}"
            )
        for row in reader:
            label = row[column].strip()
            if label in mapping:
                out[row["patient_id"].strip()] = mapping[label]
    if not out:
        raise ValidationError(f"no usable labels for task {task!r} in {labels_path}")
    return out


def _cube_files(path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if p.is_dir():
        found = sorted(p.glob("*.spec"))
        if not found:
            raise ValidationError(f"no .spec cubes under {p}")
        return found
    raise ValidationError(f"cube path {p} does not exist")


def _reference_for(cube_path: Path, ref_arg: str) -> Path:
    ref = Path(ref_arg)
    if ref.is_dir():
        candidate = ref / cube_path.name
        if not candidate.exists():
            raise ValidationError(f"no reference {candidate} for {cube_path.name}")
        return candidate
    return ref


def _load_calibrated(path: Path, white_arg, dark_arg) -> cube_mod.SpectralCube:
    cube = cube_mod.load_cube(path)
    if cube.calibration_state == cube_mod.STATE_RAW:
        if not (white_arg and dark_arg):
            raise ValidationError(
                f"{path.name} holds raw counts; pass --white and --dark"
            )
        white = cube_mod.load_cube(_reference_for(path, white_arg))
        dark = cube_mod.load_cube(_reference_for(path, dark_arg))
        cube = cube_mod.calibrate(cube, white, dark)
    return cube


def _annotations_by_patient(path, site) -> dict[str, cube_mod.RegionAnnotation]:
    out = {}
    for ann in cube_mod.load_annotations(path):
        if ann.site == site:
            out[ann.image_id] = ann
    if not out:
        raise ValidationError(f"no {site!r} annotations in {path}")
    return out


def _write_boxplot_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", "q1", "median", "q3", "whisker_low", "whisker_high",
             "mean", "n", "outliers"]
        )
        for label, values in rows:
            b = stats.boxplot_stats(values)
            writer.writerow(
                [label, repr(b.q1), repr(b.median), repr(b.q3),
                 repr(b.whisker_low), repr(b.whisker_high), repr(b.mean),
                 len(values), ";".join(repr(o) for o in b.outliers)]
            )


# ---------------------------------------------------------------- subcommands


def cmd_synth(args, ctx: RunContext):
    section = ctx.section("synth")
    config = synth.SynthConfig(
        n_patients=ctx.option("synth", "n_patients", args.n, 160),
        width=ctx.option("synth", "width", args.width, 64),
        height=ctx.option("synth", "height", args.height, 64),
        prevalence_sepsis=ctx.option("synth", "prevalence", args.prevalence, 0.30),
        effect_scale=ctx.option("synth", "effect_scale", args.effect_scale, 1.0),
        clinical_effect_scale=ctx.option(
            "synth", "clinical_effect_scale", args.clinical_effect_scale, 1.0
        ),
        missingness=ctx.option("synth", "missingness", args.missingness, 0.016),
        unsure_fraction=ctx.option("synth", "unsure_fraction", args.unsure_fraction, 0.0),
        lost_to_followup_fraction=ctx.option(
            "synth", "lost_fraction", args.lost_fraction, 0.05
        ),
        seed=ctx.seed,
        **{
            k: v
            for k, v in section.items()
            if k in ("mortality_given_sepsis", "mortality_given_no_sepsis",
                     "palm_radius", "finger_radius", "channels")
        },
    )
    cohort = synth.generate(config, ctx.out)
    ctx.mark("generate")
    outputs = [cohort.annotations_path, cohort.clinical_path, cohort.labels_path,
               cohort.truth_path, cohort.white_path, cohort.dark_path]
    print(f"synth: {config.n_patients} patients under {ctx.out}")
    return {}, outputs + sorted(cohort.cube_paths.values())


def cmd_calibrate(args, ctx: RunContext):
    out_dir = ctx.out / "calibrated"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for path in _cube_files(args.cubes):
        raw = cube_mod.load_cube(path)
        white = cube_mod.load_cube(_reference_for(path, args.white))
        dark = cube_mod.load_cube(_reference_for(path, args.dark))
        reflectance = cube_mod.calibrate(raw, white, dark)
        target = out_dir / path.name
        cube_mod.save_cube(reflectance, target)
        outputs.append(target)
    ctx.mark("calibrate")
    print(f"calibrate: {len(outputs)} cube(s) -> {out_dir}")
    return {"cubes": args.cubes, "white": args.white, "dark": args.dark}, outputs


def cmd_preprocess(args, ctx: RunContext):
    annotations = _annotations_by_patient(args.annotations, args.site)
    out_dir = ctx.out / "preprocessed"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for path in _cube_files(args.cubes):
        pid = path.stem
        if pid not in annotations:
            continue
        cube = _load_calibrated(path, args.white, args.dark)
        sample = cube_mod.preprocess(cube, annotations[pid], target=args.target)
        tensor_cube = cube.with_values(sample.tensor, cube_mod.STATE_L1)
        tensor_path = out_dir / f"{pid}_{args.site}.spec"
        mask_path = out_dir / f"{pid}_{args.site}.mask.npy"
        cube_mod.save_cube(tensor_cube, tensor_path)
        np.save(mask_path, sample.mask)
        outputs += [tensor_path, mask_path]
    if not outputs:
        raise ValidationError("no cube matched an annotation; nothing to preprocess")
    ctx.mark("preprocess")
    print(f"preprocess: {len(outputs) // 2} sample(s) -> {out_dir}")
    return {"cubes": args.cubes, "annotations": args.annotations}, outputs


def _extract_hsi_features(args, ctx, include_spectrum) -> FeatureTable:
    annotations = _annotations_by_patient(args.annotations, args.site)
    specs = ctx.index_specs()
    statistic = ctx.option("features", "statistic", args.statistic, "median")
    config = indices.FeatureConfig(
        indices=specs, include_spectrum=include_spectrum, statistic=statistic
    )
    ids, rows = [], []
    names = None
    for path in _cube_files(args.cubes):
        pid = path.stem
        if pid not in annotations:
            continue
        cube = _load_calibrated(path, args.white, args.dark)
        fv = indices.extract_feature_vector(cube, annotations[pid], config)
        ids.append(pid)
        rows.append(fv.values)
        names = fv.names
    if not ids:
        raise ValidationError("no cube matched an annotation")
    return FeatureTable(patient_ids=ids, names=list(names), values=np.stack(rows))


def cmd_indices(args, ctx: RunContext):
    table = _extract_hsi_features(args, ctx, include_spectrum=False)
    target = ctx.out / "indices.csv"
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_features_csv(table, target)
    ctx.mark("indices")
    print(f"indices: {len(table.patient_ids)} patient(s) -> {target}")
    return {"cubes": args.cubes, "annotations": args.annotations}, [target]


def cmd_features(args, ctx: RunContext):
    ctx.out.mkdir(parents=True, exist_ok=True)
    outputs = []
    inputs = {}
    table = None
    if args.kind in ("hsi", "combined"):
        if not (args.cubes and args.annotations):
            raise ValidationError(f"--kind {args.kind} needs --cubes and --annotations")
        include_spectrum = ctx.option(
            "features", "include_spectrum", args.spectrum, True
        )
        table = _extract_hsi_features(args, ctx, include_spectrum)
        inputs.update({"cubes": args.cubes, "annotations": args.annotations})
    if args.kind in ("clinical", "combined"):
        if not args.clinical:
            raise ValidationError(f"--kind {args.kind} needs --clinical")
        cohort = clinical.ingest_csv(args.clinical, args.labels)
        clin_table = clinical.encode(cohort, tier=args.tier)
        inputs["clinical"] = args.clinical
        mapping_path = ctx.out / "encoding_map.json"
        mapping_path.write_text(
            json.dumps(cohort.dictionary.encoding_map(), sort_keys=True, indent=2)
            + "\n",
            encoding="utf-8",
        )
        outputs.append(mapping_path)
        table = clin_table if table is None else hstack(table, clin_table)
    target = ctx.out / "features.csv"
    write_features_csv(table, target)
    outputs.append(target)
    dictionary_path = ctx.out / "feature_dictionary.json"
    dictionary_path.write_text(
        json.dumps({str(i): n for i, n in enumerate(table.names)},
                   sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    outputs.append(dictionary_path)
    ctx.mark("features")
    print(f"features: {len(table.patient_ids)} x {table.n_features} -> {target}")
    return inputs, outputs


def cmd_scores(args, ctx: RunContext):
    cohort = clinical.ingest_csv(args.clinical, args.labels)
    requested = (
        list(scores.BUNDLED_TABLES) + ["vis"] if args.table == "all" else [args.table]
    )
    results = []
    for name in requested:
        if name == "vis":
            results += [scores.vasoactive_inotropic_score(r) for r in cohort.records]
        else:
            table = scores.load_score_table(name)
            results += scores.evaluate_cohort(cohort, table)
    for biomarker in args.biomarker or []:
        results += scores.biomarker_results(cohort, biomarker)
    ctx.out.mkdir(parents=True, exist_ok=True)
    target = ctx.out / "scores.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "score_name", "value", "valid"])
        for r in results:
            writer.writerow(
                [r.patient_id, r.score_name,
                 "" if r.value is None else repr(float(r.value)),
                 "true" if r.valid else "false"]
            )
    ctx.mark("scores")
    print(f"scores: {len(results)} row(s) -> {target}")
    return {"clinical": args.clinical}, [target]


def cmd_train_rf(args, ctx: RunContext):
    features = read_features_csv(args.features)
    labels = _load_task_labels(args.labels, args.task)
    usable = [p for p in features.patient_ids if p in labels]
    table = features.rows(usable)
    y = np.asarray([labels[p] for p in usable], dtype=int)
    n_trees = ctx.option("forest", "n_trees", args.trees, 100)
    model = forest.fit(table.values, y, seed=ctx.seed, n_trees=n_trees, n_jobs=ctx.jobs)
    ctx.mark("fit")
    ctx.out.mkdir(parents=True, exist_ok=True)
    model_path = ctx.out / "model.json"
    forest.save_model(model, model_path)
    importance = forest.feature_importance(model)
    importance_path = ctx.out / "importance.csv"
    with open(importance_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "importance"])
        for name, value in zip(table.names, importance):
            writer.writerow([name, repr(float(value))])
    ctx.mark("train-rf")
    print(f"train-rf: {model.n_trees} trees on {len(usable)} patients -> {model_path}")
    return {"features": args.features, "labels": args.labels}, [model_path, importance_path]


def _plan_for(features, labels, args, ctx) -> ev.SplitPlan:
    if args.splits:
        plan = ev.SplitPlan.from_json(Path(args.splits).read_text(encoding="utf-8"))
        missing = [p for p in plan.patient_ids() if p not in set(features.patient_ids)]
        if missing:
            raise ValidationError(
                f"split plan references patients missing from features: {missing[:5]}"
            )
        return plan
    usable = [p for p in features.patient_ids if p in labels]
    y = [labels[p] for p in usable]
    return ev.make_nested_splits(usable, y, args.task, seed=ctx.seed)


def _rfe_rankings(features, labels, plan, seed, n_trees, n_jobs):
    rankings = {}
    for k in range(plan.n_outer):
        folds = []
        for j in range(plan.n_inner):
            ids = sorted(plan.inner_train(k, j))
            X = features.rows(ids).values
            y = np.asarray([labels[p] for p in ids], dtype=int)
            folds.append((X, y))
        rankings[k] = forest.rfe_rank(
            folds, seed=subseed(seed, "rfe", k), n_trees=n_trees, n_jobs=n_jobs
        )
    return rankings


def cmd_rfe(args, ctx: RunContext):
    features = read_features_csv(args.features)
    labels = _load_task_labels(args.labels, args.task)
    usable = [p for p in features.patient_ids if p in labels]
    table = features.rows(usable)
    plan = _plan_for(table, labels, args, ctx)
    n_trees = ctx.option("forest", "n_trees", args.trees, 100)
    rankings = _rfe_rankings(table, labels, plan, ctx.seed, n_trees, ctx.jobs)
    ctx.out.mkdir(parents=True, exist_ok=True)
    splits_path = ctx.out / "splits.json"
    splits_path.write_text(plan.to_json() + "\n", encoding="utf-8")
    target = ctx.out / "rfe.csv"
    with open(target, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer_fold", "elimination_position", "feature_index",
                         "feature_name"])
        for k in sorted(rankings):
            for pos, idx in enumerate(rankings[k].elimination_order):
                writer.writerow([k, pos, idx, table.names[idx]])
    ctx.mark("rfe")
    print(f"rfe: {plan.n_outer} fold rankings -> {target}")
    return {"features": args.features, "labels": args.labels}, [target, splits_path]


def _read_rfe_csv(path) -> dict[int, forest.RfeRanking]:
    orders: dict[int, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            orders.setdefault(int(row["outer_fold"]), []).append(
                int(row["feature_index"])
            )
    return {k: forest.RfeRanking(tuple(v)) for k, v in orders.items()}


def cmd_evaluate(args, ctx: RunContext):
    ctx.out.mkdir(parents=True, exist_ok=True)
    n_bootstrap = ctx.option("evaluate", "n_bootstrap", args.bootstrap, 1000)
    inputs = {"labels": args.labels}
    outputs = []
    if args.mode == "predictions":
        if not args.predictions:
            raise ValidationError("--mode predictions needs --predictions")
        pset = ev.read_predictions_csv(args.predictions)
        inputs["predictions"] = args.predictions
        report = ev.evaluate_prediction_set(
            pset, task=args.task, model_name=args.model_name or "external",
            seed=subseed(ctx.seed, "boot"), n_bootstrap=n_bootstrap,
        )
        reports = [(report.model_name, report, pset)]
    elif args.mode == "score":
        if not (args.scores and args.score_name and args.labels):
            raise ValidationError("--mode score needs --scores, --score-name, --labels")
        labels = _load_task_labels(args.labels, args.task)
        results = []
        with open(args.scores, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row["score_name"] != args.score_name:
                    continue
                results.append(
                    scores.ScoreResult(
                        patient_id=row["patient_id"], score_name=row["score_name"],
                        value=float(row["value"]) if row["value"] else None,
                        valid=row["valid"] == "true",
                    )
                )
        values, y, ids = scores.score_as_classifier(results, labels)
        pset = ev.PredictionSet(
            rows=[
                ev.PredictionRow(pid, 0, 0, (-v, v), int(label))
                for pid, v, label in zip(ids, values, y)
            ]
        )
        inputs["scores"] = args.scores
        report = ev.evaluate_prediction_set(
            pset, task=args.task, model_name=args.score_name,
            seed=subseed(ctx.seed, "boot"), n_bootstrap=n_bootstrap,
        )
        reports = [(args.score_name, report, pset)]
    else:
        if not (args.features and args.labels):
            raise ValidationError(f"--mode {args.mode} needs --features and --labels")
        features = read_features_csv(args.features)
        labels = _load_task_labels(args.labels, args.task)
        usable = [p for p in features.patient_ids if p in labels]
        table = features.rows(usable)
        inputs["features"] = args.features
        plan = _plan_for(table, labels, args, ctx)
        splits_path = ctx.out / "splits.json"
        splits_path.write_text(plan.to_json() + "\n", encoding="utf-8")
        outputs.append(splits_path)
        n_trees = ctx.option("forest", "n_trees", args.trees, 100)
        repetitions = ctx.option("evaluate", "repetitions", args.repetitions, 3)
        if args.mode == "sequential":
            if not args.clinical_features:
                raise ValidationError("--mode sequential needs --clinical-features")
            clinical_table = read_features_csv(args.clinical_features).rows(usable)
            inputs["clinical_features"] = args.clinical_features
            if args.rfe_file:
                rankings = _read_rfe_csv(args.rfe_file)
                inputs["rfe"] = args.rfe_file
            else:
                rankings = _rfe_rankings(
                    clinical_table, labels, plan, ctx.seed, n_trees, ctx.jobs
                )
            ctx.mark("rfe")
            results = ev.sequential_feature_experiment(
                table, clinical_table, rankings, labels, plan,
                seed=ctx.seed, n_trees=n_trees, repetitions=repetitions,
                n_bootstrap=n_bootstrap, n_jobs=ctx.jobs, task=args.task,
                model_prefix=args.model_name or "hsi_plus_clinical",
            )
            reports = results
        else:
            pset = ev.run_nested_evaluation(
                table, labels, plan, seed=ctx.seed, n_trees=n_trees,
                repetitions=repetitions, n_jobs=ctx.jobs,
            )
            ctx.mark("members")
            report = ev.evaluate_prediction_set(
                pset, task=args.task, model_name=args.model_name or "random_forest",
                seed=subseed(ctx.seed, "boot"), n_bootstrap=n_bootstrap, plan=plan,
            )
            reports = [(report.model_name, report, pset)]

    boxplot_rows = []
    for name, report, pset in reports:
        suffix = "" if len(reports) == 1 else f"_{name}"
        report_path = ctx.out / f"report{suffix}.json"
        report_path.write_text(report.to_json() + "\n", encoding="utf-8")
        predictions_path = ctx.out / f"predictions{suffix}.csv"
        ev.write_predictions_csv(pset, predictions_path)
        roc_path = ctx.out / f"roc{suffix}.csv"
        ev.write_roc_csv(report.roc_points, roc_path)
        outputs += [report_path, predictions_path, roc_path]
        boxplot_rows.append((name, report.bootstrap_samples))
        print(
            f"evaluate[{name}]: AUROC {report.auroc:.3f} "
            f"(bootstrap {report.auroc_mean:.3f} +- {report.auroc_sd:.3f}, "
            f"95% CI {report.ci_low:.3f}-{report.ci_high:.3f})"
        )
    boxplot_path = ctx.out / "boxplot.csv"
    _write_boxplot_csv(boxplot_rows, boxplot_path)
    outputs.append(boxplot_path)
    ctx.mark("evaluate")
    return inputs, outputs


def cmd_stats(args, ctx: RunContext):
    features = read_features_csv(args.features)
    task = clinical.TASK_SEPSIS if args.grouping == "sepsis" else clinical.TASK_MORTALITY
    labels = _load_task_labels(args.labels, task)
    usable = [p for p in features.patient_ids if p in labels]
    table = features.rows(usable)
    mask = np.asarray([labels[p] == 1 for p in usable], dtype=bool)
    index_names = [s.name for s in ctx.index_specs() if s.name in table.names]
    if not index_names:
        raise ValidationError(
            "features file holds none of the configured index columns"
        )
    index_values = {
        name: table.values[:, table.names.index(name)] for name in index_names
    }
    results = stats.group_tests(index_values, mask)
    ctx.out.mkdir(parents=True, exist_ok=True)
    stats_path = ctx.out / "stats.json"
    doc = {
        "grouping": args.grouping,
        "n_group_positive": int(mask.sum()),
        "n_group_negative": int((~mask).sum()),
        "alpha_family": 0.05,
        "alpha_per_test": results[0].alpha_per_test if results else None,
        "tests": [
            {
                "index": r.index_name,
                "t_statistic": r.welch.t_statistic,
                "dof": r.welch.dof,
                "p_two_sided": r.welch.p_two_sided,
                "ci95_mean_difference": list(r.welch.ci95_mean_difference),
                "mean_difference": r.welch.mean_difference,
                "significant": r.significant,
                "direction_in_positive_group": r.direction,
            }
            for r in results
        ],
    }
    stats_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
    boxplot_rows = []
    for name in index_names:
        boxplot_rows.append((f"{name}_positive", index_values[name][mask]))
        boxplot_rows.append((f"{name}_negative", index_values[name][~mask]))
    boxplot_path = ctx.out / "boxplot.csv"
    _write_boxplot_csv(boxplot_rows, boxplot_path)
    ctx.mark("stats")
    for r in results:
        flag = "significant" if r.significant else "n.s."
        print(
            f"stats[{r.index_name}]: t={r.welch.t_statistic:+.3f} "
            f"dof={r.welch.dof:.1f} p={r.welch.p_two_sided:.3g} ({flag}, "
            f"{r.direction} in positive group)"
        )
    return {"features": args.features, "labels": args.labels}, [stats_path, boxplot_path]


def cmd_report(args, ctx: RunContext):
    cohort = clinical.ingest_csv(args.clinical, args.labels)
    group_by = "sepsis_label" if args.grouping == "sepsis" else "survival_label"
    doc = clinical.descriptive_stats(cohort, group_by=group_by)
    ctx.out.mkdir(parents=True, exist_ok=True)
    target = ctx.out / "descriptive_stats.json"
    target.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                      encoding="utf-8")
    outputs = [target]
    if args.collect:
        summary = []
        for report_path in sorted(Path(args.collect).rglob("report*.json")):
            body = json.loads(report_path.read_text(encoding="utf-8"))
            summary.append(
                {
                    "path": str(report_path),
                    "model_name": body.get("model_name"),
                    "task": body.get("task"),
                    "auroc": body.get("auroc"),
                    "auroc_mean": body.get("auroc_mean"),
                    "auroc_sd": body.get("auroc_sd"),
                    "ci": [body.get("ci_low"), body.get("ci_high")],
                }
            )
        summary_path = ctx.out / "summary.json"
        summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n",
                                encoding="utf-8")
        outputs.append(summary_path)
    ctx.mark("report")
    print(f"report: descriptive statistics for {doc['n_patients']} patients")
    return {"clinical": args.clinical}, outputs


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=17)
    shared.add_argument("--config", default=None,
                        help=f"JSON config path (or ${CONFIG_ENV})")
    shared.add_argument("--jobs", type=int, default=1)
    shared.add_argument("--out", default="out")

    parser = argparse.ArgumentParser(
        prog="spectrasep",
        description="Hyperspectral skin-cube biomarker pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic cohort")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--prevalence", type=float, default=None)
    p.add_argument("--effect-scale", type=float, default=None)
    p.add_argument("--clinical-effect-scale", type=float, default=None)
    p.add_argument("--missingness", type=float, default=None)
    p.add_argument("--unsure-fraction", type=float, default=None)
    p.add_argument("--lost-fraction", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[shared],
                       help="convert raw cubes to reflectance")
    p.add_argument("--cubes", required=True)
    p.add_argument("--white", required=True)
    p.add_argument("--dark", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("preprocess", parents=[shared],
                       help="normalize, crop, and resample annotated regions")
    p.add_argument("--cubes", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--site", choices=("palm", "finger"), default="palm")
    p.add_argument("--target", type=int, default=224)
    p.add_argument("--white", default=None)
    p.add_argument("--dark", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("indices", parents=[shared],
                       help="tissue index summaries per patient")
    p.add_argument("--cubes", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--site", choices=("palm", "finger"), default="palm")
    p.add_argument("--white", default=None)
    p.add_argument("--dark", default=None)
    p.add_argument("--statistic", choices=("median", "mean"), default=None)
    p.set_defaults(func=cmd_indices)

    p = sub.add_parser("features", parents=[shared], help="build features.csv")
    p.add_argument("--kind", choices=("hsi", "clinical", "combined"), default="hsi")
    p.add_argument("--cubes", default=None)
    p.add_argument("--annotations", default=None)
    p.add_argument("--site", choices=("palm", "finger"), default="palm")
    p.add_argument("--white", default=None)
    p.add_argument("--dark", default=None)
    p.add_argument("--statistic", choices=("median", "mean"), default=None)
    p.add_argument("--spectrum", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--clinical", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--tier", choices=("one_hour", "ten_hour", "all"), default="all")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("scores", parents=[shared], help="clinical scores")
    p.add_argument("--clinical", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--table", default="all",
                   help="bundled table name, path, 'vis', or 'all'")
    p.add_argument("--biomarker", action="append", default=None)
    p.set_defaults(func=cmd_scores)

    p = sub.add_parser("train-rf", parents=[shared], help="fit one forest")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("sepsis", "mortality"), default="sepsis")
    p.add_argument("--trees", type=int, default=None)
    p.set_defaults(func=cmd_train_rf)

    p = sub.add_parser("rfe", parents=[shared],
                       help="recursive feature elimination per outer fold")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("sepsis", "mortality"), default="sepsis")
    p.add_argument("--splits", default=None)
    p.add_argument("--trees", type=int, default=None)
    p.set_defaults(func=cmd_rfe)

    p = sub.add_parser("evaluate", parents=[shared],
                       help="nested cross-validation evaluation")
    p.add_argument("--task", choices=("sepsis", "mortality"), default="sepsis")
    p.add_argument("--mode", choices=("nested", "sequential", "score", "predictions"),
                   default="nested")
    p.add_argument("--features", default=None)
    p.add_argument("--clinical-features", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--splits", default=None)
    p.add_argument("--rfe-file", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--scores", default=None)
    p.add_argument("--score-name", default=None)
    p.add_argument("--model-name", default=None)
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[shared],
                       help="Welch tests on index features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--grouping", choices=("sepsis", "survival"), default="sepsis")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", parents=[shared],
                       help="descriptive statistics and run summaries")
    p.add_argument("--clinical", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--grouping", choices=("sepsis", "survival"), default="sepsis")
    p.add_argument("--collect", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        ctx = RunContext(args)
        inputs, outputs = args.func(args, ctx)
        ctx.write_manifest(args.subcommand, inputs, outputs)
        return 0
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SpectrasepError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
