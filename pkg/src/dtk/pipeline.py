"""File-based pipeline stages and the end-to-end run.

Every stage reads its inputs from the run directory and writes its outputs
back there, so stages can be rerun one at a time from the CLI and a full run
is just the stages in order.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import abtest, causal, featcat, gbdt, metrics, spyem, synthgen, trendlab
from .config import PipelineConfig
from .data import DataError, Window, assign_segment, build_monthly_panel, load_dataset, read_bce, read_transactions, write_csv

logger = logging.getLogger(__name__)

STAGES = ("generate", "panel", "label", "featurize", "train", "score", "causal", "spyem", "abtest", "report")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing input file: {p}")
    return p


def read_table(path, **kw) -> pd.DataFrame:
    return pd.read_csv(require(path), dtype={"customer_id": str}, keep_default_na=True, **kw)


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _window(cfg: PipelineConfig) -> Window:
    return Window(cfg.generator_config().target_month)


# ---------------------------------------------------------------------------
# Stages


def stage_generate(cfg: PipelineConfig, out: Path):
    gcfg = cfg.generator_config()
    ds = synthgen.generate(gcfg)
    ds.write(out)
    summary = synthgen.summarize(ds.transactions, ds.ground_truth, ds.latent[["customer_id", "segment"]])
    summary["seed"] = gcfg.seed
    write_json(summary, out / "population_summary.json")


def stage_panel(cfg: PipelineConfig, out: Path, transactions_path=None):
    tx, _, customers = load_dataset(
        {"transactions": transactions_path or out / "transactions.csv", "bce": out / "bce.csv", "customers": out / "customers.csv"}
    )
    window = _window(cfg)
    panel = build_monthly_panel(tx, window, customers["customer_id"])
    write_csv(panel, out / "panel.csv")
    profiles = assign_segment(panel, customers, int(cfg.labeler.get("min_active_months", 6)))
    write_csv(profiles, out / "profiles.csv")


def read_panel(path) -> pd.DataFrame:
    panel = read_table(path)
    missing = set(["customer_id", "month_index", "gmv", "bi", "pd"]) - set(panel.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return panel


def stage_label(cfg: PipelineConfig, out: Path, metrics_=trendlab.METRICS, panel_path=None, profiles_path=None, alphas=None):
    panel = read_panel(panel_path or out / "panel.csv")
    profiles = read_table(profiles_path or out / "profiles.csv")
    for m in metrics_:
        fb, ib = (alphas or {}).get(m, cfg.alphas(m))
        labels, rate = trendlab.label_panel(panel, m, fb, ib, profiles)
        write_csv(labels, out / f"labels_{m}.csv")
        logger.info("%s event rate %.4f (alpha FB %.2f, IB %.2f)", m, rate, fb, ib)


def stage_featurize(cfg: PipelineConfig, out: Path):
    tx, bce, customers = load_dataset(out)
    fm = featcat.build_feature_matrix(tx, bce, customers, featcat.default_catalog(), _window(cfg).as_of)
    fm.write(out / "features.csv")


def _read_labels(path) -> pd.Series:
    labels = read_table(path)
    return labels.set_index("customer_id")["is_downward"]


def stage_train(cfg: PipelineConfig, out: Path, metrics_=trendlab.METRICS):
    fm = featcat.FeatureMatrix.read(require(out / "features.csv"))
    X_all = fm.model_input()
    for m in metrics_:
        y_all = _read_labels(out / f"labels_{m}.csv").reindex(X_all.index)
        ok = y_all.notna().to_numpy()
        X, y = X_all[ok], y_all[ok].astype(int).to_numpy()
        top = gbdt.select_top_k(X, y, cfg.rough_config(m), int(cfg.features.get("top_k", 13)))
        t0 = time.perf_counter()
        model = gbdt.train(X[top], y, cfg.train_config(m))
        logger.info("trained %s model in %.1f s", m, time.perf_counter() - t0)
        model.save(out / f"model_{m}.json")
        vi = model.valid_index_
        hold = pd.DataFrame(
            {"customer_id": X.index[vi], "label": y[vi], "score": model.predict_proba(X.iloc[vi])[:, 1]}
        ).sort_values("customer_id", kind="stable")
        write_csv(hold, out / f"holdout_{m}.csv", float_format="%.10g")


def stage_score(cfg: PipelineConfig, out: Path, model_paths=None):
    fm = featcat.FeatureMatrix.read(require(out / "features.csv"))
    X = fm.model_input()
    paths = model_paths or {m: out / f"model_{m}.json" for m in trendlab.METRICS}
    scores = pd.DataFrame({"customer_id": X.index.to_numpy()})
    for m in trendlab.METRICS:
        model = gbdt.GBDTClassifier.load(require(paths[m]))
        scores[f"p_{m}"] = model.predict_proba(X[list(model.feature_names_in_)])[:, 1]
    for m in trendlab.METRICS:
        scores[f"decile_{m}"] = metrics.decile_bucket(scores[f"p_{m}"], scores["customer_id"])
    scores["ensemble_bucket"] = metrics.ensemble_max(*(scores[f"decile_{m}"] for m in trendlab.METRICS))
    write_csv(scores, out / "scores.csv", float_format="%.10g")

    rows = []
    for m in trendlab.METRICS:
        hp = out / f"holdout_{m}.csv"
        if not hp.exists():
            continue
        hold = read_table(hp)
        s, y = hold["score"].to_numpy(float), hold["label"].to_numpy(int)
        if len(y) == 0 or y.min() == y.max():
            continue
        write_csv(metrics.roc_points(s, y), out / f"roc_{m}.csv", float_format="%.10g")
        write_csv(metrics.pr_points(s, y), out / f"pr_{m}.csv", float_format="%.10g")
        f_thr, f1 = metrics.max_f_beta(s, y, 1.0)
        a_thr, acc = metrics.max_min_per_class_accuracy(s, y)
        rows.append(
            {
                "metric": m,
                "n_holdout": len(y),
                "auc": metrics.roc_auc(s, y),
                "max_f1": f1,
                "f1_threshold": f_thr,
                "max_min_per_class_accuracy": acc,
                "accuracy_threshold": a_thr,
                "log_loss": metrics.log_loss(s, y),
            }
        )
    write_csv(pd.DataFrame(rows), out / "model_metrics.csv", float_format="%.10g")


def stage_causal(cfg: PipelineConfig, out: Path, scores_path=None, bce_path=None, cl=None):
    c = cfg.causal
    as_of = _window(cfg).as_of
    scores = read_table(scores_path or out / "scores.csv")
    bce = read_bce(require(bce_path or out / "bce.csv"))
    tx = read_transactions(require(out / "transactions.csv"))
    profiles = read_table(out / "profiles.csv")
    band = tuple(int(b) for b in c["band"])
    golden = causal.build_golden_set(scores, bce, tx, as_of, band=band, reported_only=bool(c["reported_only"]))
    gdf = pd.DataFrame({"customer_id": golden.customer_ids}).merge(profiles[["customer_id", "segment"]], how="left")
    write_csv(gdf, out / "golden.csv")
    write_json(golden.criteria, out / "golden_criteria.json")

    sample = causal.causal_sample(scores, bce, profiles, as_of, band=band)
    if c["sample"] == "golden":
        sample = sample[sample["customer_id"].isin(set(golden.customer_ids))].reset_index(drop=True)
    write_csv(sample, out / "causal_sample.csv")
    report = causal.causal_report(
        sample, float(cl if cl is not None else c["cl"]), int(c["degree"]), int(c["n_permutations"]), cfg.seed_for("causal", c)
    )
    cols = ["segment", "direction", "coefficient", "statistic", "p_value", "pass", "verdict", "n"]
    write_csv(report[cols], out / "causal_report.csv", float_format="%.10g")

    # feature rows of the spy-EM stage: golden set and the rest of the band
    fm = featcat.FeatureMatrix.read(require(out / "features.csv")).select(featcat.SPYEM_FEATURES)
    in_band = scores.loc[scores["ensemble_bucket"].between(*band), "customer_id"]
    mixed = np.asarray(sorted(set(in_band) - set(golden.customer_ids)), dtype=object)
    fm.rows(golden.customer_ids).write(out / "golden_features.csv")
    fm.rows(mixed).write(out / "mixed_features.csv")


def _spyem_rows(path, out: Path) -> pd.DataFrame:
    """Feature rows from a feature file, or from ``features.csv`` for an id-only file."""
    df = read_table(path)
    if set(featcat.SPYEM_FEATURES) <= set(df.columns):
        return featcat.FeatureMatrix.from_frame(df).select(featcat.SPYEM_FEATURES).model_input()
    fm = featcat.FeatureMatrix.read(require(out / "features.csv")).select(featcat.SPYEM_FEATURES)
    return fm.rows(df["customer_id"].to_numpy()).model_input()


def stage_spyem(cfg: PipelineConfig, out: Path, golden_path=None, mixed_path=None, overrides=None):
    scfg = replace(cfg.spyem_config(), **(overrides or {}))
    G = _spyem_rows(golden_path or out / "golden_features.csv", out)
    M = _spyem_rows(mixed_path or out / "mixed_features.csv", out)
    pop, state = spyem.run_spy_em(G, M, scfg)
    pop = pop.sort_values("customer_id", kind="stable").reset_index(drop=True)
    write_csv(pop, out / "labeled_population.csv", float_format="%.10g")
    write_csv(state.trace, out / "spyem_trace.csv", float_format="%.10g")
    write_json(
        {
            "iterations": int(state.iteration),
            "cutoff": float(state.cutoff),
            "converged": bool(state.trace["beta"].iloc[-1] <= scfg.theta),
            "theta": scfg.theta,
            "holdout_ids": sorted(G.index[state.holdout_index]),
            "config": scfg.to_dict(),
        },
        out / "spyem_summary.json",
    )


def stage_abtest(cfg: PipelineConfig, out: Path, population_path=None, post_gmv_path=None, test_fraction=None, seed=None):
    a = cfg.abtest
    pop = read_table(population_path or out / "labeled_population.csv")
    frac = test_fraction if test_fraction is not None else a["test_fraction"]
    seed = seed if seed is not None else cfg.seed_for("abtest", a)
    assignment = abtest.assign_groups(pop, frac, seed)
    write_csv(assignment, out / "abtest_assignment.csv")
    if post_gmv_path is not None:
        post = read_table(post_gmv_path)
    else:
        latent = read_table(out / "latent.csv")
        truth = read_table(out / "ground_truth.csv")
        treated = assignment.loc[assignment["group"] == abtest.TEST, "customer_id"]
        post = synthgen.simulate_post_period(
            latent, truth, cfg.generator_config(), treated=treated, recovery=float(a["recovery"]), seed=cfg.seed_for("post_period")
        )
        write_csv(post, out / "post_gmv.csv", float_format="%.2f")
    readout = abtest.campaign_readout(assignment, post, float(a["cl"]))
    write_csv(abtest.readout_frame(assignment, readout), out / "abtest_report.csv", float_format="%.10g")


def stage_report(cfg: PipelineConfig, out: Path):
    from .report import render_report

    (out / "report.md").write_text(render_report(out))


# ---------------------------------------------------------------------------
# End-to-end


def run_pipeline(cfg: PipelineConfig, out=None) -> Path:
    """Run every stage in order; partial artifacts stay on failure."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.to_dict() | {"out": "."}, out / "config.json")
    steps = [
        ("generate", stage_generate),
        ("panel", stage_panel),
        ("label", stage_label),
        ("featurize", stage_featurize),
        ("train", stage_train),
        ("score", stage_score),
        ("causal", stage_causal),
        ("spyem", stage_spyem),
        ("abtest", stage_abtest),
        ("report", stage_report),
    ]
    for name, fn in steps:
        t0 = time.perf_counter()
        try:
            fn(cfg, out)
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, exc) from exc
        logger.info("stage %s done in %.1f s", name, time.perf_counter() - t0)
    return out
