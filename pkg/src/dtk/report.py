"""Markdown run report rendered from the artifacts of a run directory."""
from __future__ import annotations

import json
from pathlib import Path

import pandas as pd

from .trendlab import METRICS

TOP_K = 13


def _fmt(v, digits=4) -> str:
    if v is None or (isinstance(v, float) and v != v):
        return "NA"
    if isinstance(v, (bool,)):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def md_table(df: pd.DataFrame, digits=4) -> str:
    head = "| " + " | ".join(str(c) for c in df.columns) + " |"
    rule = "|" + "|".join("---" for _ in df.columns) + "|"
    body = ["| " + " | ".join(_fmt(v, digits) for v in row) + " |" for row in df.itertuples(index=False)]
    return "\n".join([head, rule, *body])


def _csv(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"customer_id": str})


def _json(path) -> dict:
    return json.loads(Path(path).read_text())


def _missing(name) -> str:
    return f"_{name} not available_"


def section_population(run: Path) -> str:
    p = run / "population_summary.json"
    if not p.exists():
        return _missing("population_summary.json")
    s = _json(p)
    rows = [
        ("customers", s["customers"]),
        ("sufferers", s["sufferers"]),
        ("silent sufferers", s["silent_sufferers"]),
        ("reporters", s["reporters"]),
    ]
    rows += [(f"mean monthly GMV ({seg})", float(v)) for seg, v in sorted(s["mean_monthly_gmv"].items())]
    out = md_table(pd.DataFrame(rows, columns=["quantity", "value"], dtype=object), 2)
    prof = run / "profiles.csv"
    if prof.exists():
        seg = _csv(prof)["segment"].value_counts().reindex(["FB", "IB"], fill_value=0)
        out += "\n\n" + md_table(pd.DataFrame({"segment": seg.index, "customers": seg.to_numpy()}))
    return out


def section_event_rates(run: Path) -> str:
    cfg = _json(run / "config.json") if (run / "config.json").exists() else {}
    alphas = cfg.get("labeler", {}).get("alphas", {})
    rows = []
    for m in METRICS:
        p = run / f"labels_{m}.csv"
        if not p.exists():
            continue
        lab = _csv(p)["is_downward"].dropna()
        a = alphas.get(m, {})
        rows.append((m.upper(), a.get("FB"), a.get("IB"), int(len(lab)), int(lab.sum()), float(lab.mean()) if len(lab) else float("nan")))
    if not rows:
        return _missing("labels")
    df = pd.DataFrame(rows, columns=["metric", "alpha FB", "alpha IB", "scoreable", "events", "event rate"])
    df["alpha FB"] = df["alpha FB"].astype(float)
    df["alpha IB"] = df["alpha IB"].astype(float)
    return md_table(df)


def section_importance(run: Path) -> str:
    parts = []
    for m in METRICS:
        p = run / f"model_{m}.json"
        if not p.exists():
            continue
        imp = sorted(_json(p)["importance"].items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_K]
        df = pd.DataFrame([(i + 1, n, float(v)) for i, (n, v) in enumerate(imp)], columns=["rank", "feature", "importance"])
        parts.append(f"**{m.upper()}**\n\n" + md_table(df))
    return "\n\n".join(parts) if parts else _missing("models")


def section_models(run: Path) -> str:
    p = run / "model_metrics.csv"
    if not p.exists():
        return _missing("model_metrics.csv")
    mm = _csv(p).set_index("metric")
    rows = [
        ("AUC", "auc"),
        ("Max F1", "max_f1"),
        ("F1 threshold", "f1_threshold"),
        ("Max min per-class accuracy", "max_min_per_class_accuracy"),
        ("Accuracy threshold", "accuracy_threshold"),
        ("Holdout log loss", "log_loss"),
        ("Holdout rows", "n_holdout"),
    ]
    cols = [m for m in METRICS if m in mm.index]
    df = pd.DataFrame(
        [[label] + [mm.loc[m, key].item() for m in cols] for label, key in rows],
        columns=["measure"] + [f"{m.upper()} model" for m in cols],
        dtype=object,
    )
    return md_table(df)


def section_causal(run: Path) -> str:
    p = run / "causal_report.csv"
    if not p.exists():
        return _missing("causal_report.csv")
    rep = _csv(p)
    rep["pass"] = rep["pass"].map({1: "yes", 0: "no", 1.0: "yes", 0.0: "no"}).fillna("NA")
    out = md_table(rep[["segment", "direction", "n", "coefficient", "statistic", "p_value", "pass", "verdict"]])
    g = run / "golden.csv"
    if g.exists():
        out += f"\n\nGolden set size: {len(_csv(g))}"
    return out


def section_spyem(run: Path) -> str:
    p = run / "spyem_trace.csv"
    if not p.exists():
        return _missing("spyem_trace.csv")
    out = md_table(_csv(p))
    pop = run / "labeled_population.csv"
    if pop.exists():
        counts = _csv(pop)["status"].value_counts().reindex(["golden", "silent_sufferer", "normal"], fill_value=0)
        out += "\n\n" + md_table(pd.DataFrame({"status": counts.index, "customers": counts.to_numpy()}))
    summ = run / "spyem_summary.json"
    if summ.exists():
        s = _json(summ)
        out += f"\n\nIterations: {s['iterations']}, converged: {_fmt(bool(s['converged']))}, final cutoff: {_fmt(float(s['cutoff']))}"
    return out


def section_abtest(run: Path) -> str:
    p = run / "abtest_report.csv"
    if not p.exists():
        return _missing("abtest_report.csv")
    kv = dict(zip(*(_csv(p)[c] for c in ("key", "value"))))
    groups = ["control", "test", "total"]
    cols = ["golden", "silent_sufferer", "total"]
    counts = pd.DataFrame(
        [[g.capitalize() if g != "total" else "Grand Total"] + [int(kv[f"count_{g}_{c}"]) for c in cols] for g in groups],
        columns=["group", "Golden", "Silent sufferer", "Total"],
    )
    stats = pd.DataFrame(
        [
            ("test mean GMV", float(kv["test_mean"])),
            ("control mean GMV", float(kv["control_mean"])),
            ("lift (%)", float(kv["lift"])),
            ("t", float(kv["t"])),
            ("df", float(kv["df"])),
            ("p-value", float(kv["p_value"])),
            ("significant", bool(kv["significant"])),
            ("confidence level", float(kv["cl"])),
        ],
        columns=["quantity", "value"],
        dtype=object,
    )
    return md_table(counts) + "\n\n" + md_table(stats)


SECTIONS = [
    ("Population", section_population),
    ("Event rates", section_event_rates),
    ("Variable importance", section_importance),
    ("Model performance", section_models),
    ("Causal inference", section_causal),
    ("Spy-EM", section_spyem),
    ("A/B test", section_abtest),
]


def render_report(run_dir) -> str:
    run = Path(run_dir)
    parts = ["# Run report"]
    for i, (title, fn) in enumerate(SECTIONS, 1):
        parts.append(f"## {i}. {title}\n\n{fn(run)}")
    return "\n\n".join(parts) + "\n"
