"""Stage orchestration over an output directory.

Each stage reads the artifacts of earlier stages from disk, writes its own
artifacts, and finally writes ``stage_<name>.json``. A stage whose marker
exists is skipped when resuming.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import explain as ex
from .config import ConfigError, PipelineConfig, dump_config
from .features import (DEFAULT_STOP_WORDS, FeatureConfig, FeatureMatrix, apply_heuristic1, build_matrix,
                       canonicalize_matrix, load_matrix, load_vocabulary, save_matrix, save_vocabulary,
                       vectorize)
from .ingest import Corpus, dump_flowlines, read_corpus, read_recon
from .models import (DecisionTree, Metrics, ccp_path, dump_model, evaluate, feature_digest,
                     fit_model, load_model)
from .pii import (LabeledFlow, SyntheticSpec, aggregate_profile, apply_external_labels, default_rules, dump_labels,
                  emit_leak_table, flows_for_subject, format_profile, generate_synthetic_corpus,
                  label_corpus, load_rules, parse_labels, scan_flow)

logger = logging.getLogger(__name__)

CORPUS = "corpus.fl"
LABELS, FINDINGS = "labels.tsv", "findings.tsv"
TRUTH_LABELS, TRUTH_FINDINGS = "truth_labels.tsv", "truth_findings.tsv"
EXTERNAL_LABELS = "external_labels.tsv"
SPLIT = "split.tsv"
VOCAB, VOCAB_SELECTED = "vocab.txt", "vocab_selected.txt"
MATRICES = {"train": "train.mtx", "val": "val.mtx", "test": "test.mtx"}
PRUNING = "pruning.csv"
EXPLANATIONS, SELECTED = "explanations.csv", "selected_features.txt"
PREDICTIONS, LEAK_CSV, LEAK_TXT, PROFILE = "predictions.csv", "leak_table.csv", "leak_table.txt", "profile.txt"
REPORT_JSON, REPORT_TXT = "report.json", "report.txt"


class FeatureMismatch(ValueError):
    """Model and vocabulary disagree; maps to exit code 2."""


def model_file(kind: str, variant: str = "") -> str:
    return f"model_{kind}{'_' + variant if variant else ''}.lhmd"


# --- small I/O helpers ----------------------------------------------------------

def _write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path}")
    return path


def _metrics_dict(m: Metrics) -> dict:
    d = asdict(m)
    d["train_time"] = round(d["train_time"], 3)
    return d


@dataclass
class Workspace:
    cfg: PipelineConfig
    out: Path

    @classmethod
    def create(cls, cfg: PipelineConfig) -> "Workspace":
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return cls(cfg, out)

    def path(self, name: str) -> Path:
        return self.out / name

    def marker(self, stage: str) -> Path:
        return self.out / f"stage_{stage}.json"

    def done(self, stage: str) -> bool:
        return self.marker(stage).exists()

    def finish(self, stage: str, started: float, info: dict) -> dict:
        info = dict(info, stage=stage, seconds=round(time.perf_counter() - started, 3))
        _write_json(self.marker(stage), info)
        return info

    def stage_info(self, stage: str) -> dict:
        return _read_json(self.marker(stage)) if self.done(stage) else {}


# --- stages -----------------------------------------------------------------------

def stage_generate(ws: Workspace, spec: SyntheticSpec) -> dict:
    started = time.perf_counter()
    corpus, truth = generate_synthetic_corpus(spec)
    _write_bytes(ws.path(CORPUS), _corpus_bytes(corpus))
    labels, findings = dump_labels(truth)
    _write_text(ws.path(TRUTH_LABELS), labels)
    _write_text(ws.path(TRUTH_FINDINGS), findings)
    return ws.finish("ingest", started, {"flows": len(corpus), "source": corpus.provenance,
                                         "positives": sum(lf.label for lf in truth)})


def _corpus_bytes(corpus: Corpus) -> bytes:
    return dump_flowlines(corpus.flows)


def read_inputs(paths, fmt: str) -> tuple[Corpus, dict[str, bool], int]:
    """Merge several input files; returns (corpus, carried labels, skipped records)."""
    flows, labels, skipped, seen = [], {}, 0, set()
    for p in paths:
        if fmt == "recon":
            corpus, carried = read_recon(Path(p).read_bytes(), str(p))
            labels.update(carried)
        else:
            corpus = read_corpus(p, fmt)
        skipped += corpus.skipped
        for f in corpus.flows:
            if f.flow_id in seen:
                raise ConfigError(f"flow id {f.flow_id!r} appears in more than one input")
            seen.add(f.flow_id)
            flows.append(f)
    provenance = f"{fmt}:" + ",".join(str(p) for p in paths)
    return Corpus(tuple(flows), provenance, skipped), labels, skipped


def stage_ingest(ws: Workspace, target: Path | None = None) -> dict:
    started = time.perf_counter()
    cfg = ws.cfg
    if not cfg.input.paths:
        raise ConfigError("no input paths given")
    corpus, carried, skipped = read_inputs(cfg.input.paths, cfg.input.format)
    if not len(corpus):
        logger.warning("input produced an empty corpus")
    _write_bytes(target or ws.path(CORPUS), _corpus_bytes(corpus))
    if carried:
        _write_text(ws.path(EXTERNAL_LABELS), "".join(f"{k}\t{int(v)}\n" for k, v in sorted(carried.items())))
    return ws.finish("ingest", started, {"flows": len(corpus), "skipped": skipped, "source": corpus.provenance,
                                         "external_labels": len(carried)})


def _read_label_file(path: Path) -> dict[str, bool]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        flow_id, value = line.rsplit("\t", 1)
        if value.strip().lower() in ("flow_id", "label"):
            continue
        out[flow_id] = value.strip().lower() in ("1", "true", "yes", "pii")
    return out


def stage_label(ws: Workspace) -> dict:
    started = time.perf_counter()
    corpus = read_corpus(_require(ws.path(CORPUS), "corpus (run ingest or generate first)"))
    rules = load_rules(ws.cfg.input.rules) if ws.cfg.input.rules else default_rules()
    labeled = label_corpus(corpus, rules)
    external = {}
    if ws.path(EXTERNAL_LABELS).exists():
        external.update(_read_label_file(ws.path(EXTERNAL_LABELS)))
    if ws.cfg.input.labels:
        external.update(_read_label_file(Path(ws.cfg.input.labels)))
    if external:
        labeled = apply_external_labels(labeled, external)
    labels, findings = dump_labels(labeled)
    _write_text(ws.path(LABELS), labels)
    _write_text(ws.path(FINDINGS), findings)
    return ws.finish("label", started, {"flows": len(labeled), "positives": sum(lf.label for lf in labeled),
                                        "external_labels": len(external)})


def load_labeled(ws: Workspace):
    corpus = read_corpus(_require(ws.path(CORPUS), "corpus"))
    return parse_labels(corpus, _require(ws.path(LABELS), "labels (run label first)").read_text(encoding="utf-8"),
                        ws.path(FINDINGS).read_text(encoding="utf-8") if ws.path(FINDINGS).exists() else "")


def split_flows(labeled, cfg: PipelineConfig) -> dict[str, str]:
    """flow_id -> train/val/test. Domain lists win over fractions when given."""
    split = cfg.split
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    ids = [lf.flow.flow_id for lf in labeled]
    if split.train_domains or split.test_domains:
        if not (split.train_domains and split.test_domains):
            raise ConfigError("domain split needs both train and test domain lists")
        train_d, test_d = set(split.train_domains), set(split.test_domains)
        train = [lf.flow.flow_id for lf in labeled if lf.flow.domain in train_d]
        test = [lf.flow.flow_id for lf in labeled if lf.flow.domain in test_d]
        perm = rng.permutation(len(train))
        n_val = int(round(split.val_fraction * len(train)))
        val = {train[i] for i in perm[:n_val]}
        parts = {i: "train" for i in train}
        parts.update({i: "val" for i in val})
        parts.update({i: "test" for i in test})
        return parts
    perm = rng.permutation(len(ids))
    n_test = int(round(split.test_fraction * len(ids)))
    n_val = int(round(split.val_fraction * len(ids)))
    parts = {}
    for rank, i in enumerate(perm):
        parts[ids[i]] = "test" if rank < n_test else "val" if rank < n_test + n_val else "train"
    return parts


def _stop_words(cfg: PipelineConfig) -> frozenset[str]:
    if not cfg.features.stop_words:
        return DEFAULT_STOP_WORDS
    lines = Path(cfg.features.stop_words).read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip().lower() for w in lines if w.strip() and not w.startswith("#"))


def stage_featurize(ws: Workspace) -> dict:
    started = time.perf_counter()
    cfg = ws.cfg
    labeled = load_labeled(ws)
    parts = split_flows(labeled, cfg)
    groups = {name: [lf for lf in labeled if parts.get(lf.flow.flow_id) == name] for name in MATRICES}
    if not groups["train"] or not groups["test"]:
        raise ConfigError("split leaves the train or test set empty")
    fcfg = FeatureConfig(freq_t=cfg.features.freq_t, tfidf_t=cfg.features.tfidf_t,
                         tfidf_percentile=cfg.features.tfidf_percentile, stop_words=_stop_words(cfg),
                         adjacency_window=cfg.features.adjacency_window, seed=cfg.seed)
    raw = build_matrix(groups["train"], fcfg)
    canon = canonicalize_matrix(raw)
    train = apply_heuristic1(canon, cfg.features.heuristic1_threshold)
    vocab = train.vocabulary
    save_vocabulary(vocab, ws.path(VOCAB))
    save_matrix(train, ws.path(MATRICES["train"]))
    for name in ("val", "test"):
        flows = groups[name]
        m = vectorize([lf.flow for lf in flows], vocab, [lf.label for lf in flows])
        save_matrix(m, ws.path(MATRICES[name]))
    _write_text(ws.path(SPLIT), "".join(f"{lf.flow.flow_id}\t{parts.get(lf.flow.flow_id, '-')}\n" for lf in labeled))
    counts = {"algorithm1": raw.shape[1], "canonical": canon.shape[1], "heuristic1": train.shape[1]}
    sizes = {name: len(g) for name, g in groups.items()}
    return ws.finish("featurize", started, {"feature_counts": counts, "split_sizes": sizes,
                                            "oversampled_rows": int(raw.duplicate.sum()),
                                            "provenance": list(vocab.provenance)})


def load_matrices(ws: Workspace) -> dict[str, FeatureMatrix]:
    vocab = load_vocabulary(_require(ws.path(VOCAB), "vocabulary (run featurize first)"))
    return {name: load_matrix(_require(ws.path(f), f"{name} matrix"), vocab) for name, f in MATRICES.items()}


def _save_model(ws: Workspace, model, name: str, features) -> None:
    _write_bytes(ws.path(name), dump_model(model, features))


def stage_train(ws: Workspace) -> dict:
    started = time.perf_counter()
    cfg = ws.cfg
    mats = load_matrices(ws)
    train, test = mats["train"], mats["test"]
    tokens = train.vocabulary.tokens
    kinds = ("dt", "nn") if cfg.model.kind == "both" else (cfg.model.kind,)
    results = {}
    for kind in kinds:
        model, fit_metrics = fit_model(kind, train, arch=cfg.model.arch, cfg=cfg.model.train_config(cfg.seed),
                                       max_depth=cfg.model.max_depth, min_samples_leaf=cfg.model.min_samples_leaf)
        name = model_file(kind, "full" if kind == "dt" else "")
        _save_model(ws, model, name, tokens)
        results[kind] = {"model_file": name, "train": _metrics_dict(fit_metrics),
                         "test": _metrics_dict(evaluate(model, test))}
        if kind == "dt":
            results[kind]["node_count"] = model.node_count
    info = ws.finish("train", started, {"models": results, "arch": cfg.model.arch})
    if "dt" in kinds and cfg.model.prune:
        stage_prune(ws)
    elif "dt" in kinds:
        _write_bytes(ws.path(model_file("dt")), ws.path(model_file("dt", "full")).read_bytes())
    return info


def stage_prune(ws: Workspace) -> dict:
    """Cost-complexity path of the full tree; alpha chosen on the validation split."""
    started = time.perf_counter()
    mats = load_matrices(ws)
    tree, _ = load_model(_require(ws.path(model_file("dt", "full")), "full decision tree (run train first)"))
    if not isinstance(tree, DecisionTree):
        raise ConfigError("model_dt_full.lhmd does not hold a decision tree")
    select_on = mats["val"] if len(mats["val"].rows) else mats["train"]
    path = ccp_path(tree, mats["train"], select_on)
    best = path.best()
    lines = ["ccp_alpha,node_count,n_leaves,train_acc,val_acc,test_acc"]
    for step in path:
        test_acc = evaluate(step.tree, mats["test"]).accuracy
        lines.append(f"{step.ccp_alpha!r},{step.tree.node_count},{step.tree.n_leaves},"
                     f"{step.train_acc:.6f},{step.test_acc:.6f},{test_acc:.6f}")
    _write_text(ws.path(PRUNING), "\n".join(lines) + "\n")
    _save_model(ws, best.tree, model_file("dt"), mats["train"].vocabulary.tokens)
    return ws.finish("prune", started, {
        "steps": len(path), "best_alpha": best.ccp_alpha, "node_count": best.tree.node_count,
        "full_node_count": tree.node_count,
        "test": _metrics_dict(evaluate(best.tree, mats["test"])),
        "train": _metrics_dict(evaluate(best.tree, mats["train"])),
        "selected_on": "val" if select_on is mats["val"] else "train",
    })


def stage_explain_select(ws: Workspace) -> dict:
    started = time.perf_counter()
    cfg = ws.cfg
    lime = cfg.lime
    mats = load_matrices(ws)
    train, val, test = mats["train"], mats["val"], mats["test"]
    if lime.n_val > len(val.rows):
        raise ConfigError(f"--n-val {lime.n_val} exceeds the {len(val.rows)} validation flows")
    if lime.n_val < 1:
        raise ConfigError("--n-val must be >= 1")
    kind = lime.model
    model, _ = load_model(_require(ws.path(model_file(kind)), f"{kind} model (run train first)"))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    rows = sorted(rng.choice(len(val.rows), size=lime.n_val, replace=False).tolist())
    explanations = ex.explain_rows(model.predict_proba, val, rows, lime.lime_config(cfg.seed),
                                   ex.activation_rates(train), threads=cfg.threads)
    _write_text(ws.path(EXPLANATIONS), ex.explanations_to_csv(explanations, train.vocabulary.tokens))
    if lime.heuristic == "h2":
        selection = ex.select_h2(explanations, lime.percentile)
    else:
        selection = ex.select_h3(explanations, lime.top_frac, lime.support)
    _write_text(ws.path(SELECTED), ex.dump_selection(selection, train.vocabulary))
    if selection.degenerate:
        raise ex.EmptySelection(f"{selection.heuristic.value} selected no features "
                                f"over {len(explanations)} validation flows")

    sliced = ex.slice_selected(train, selection)
    new_model, fit_metrics = ex.retrain_selected(train, selection, kind, cfg.model.train_config(cfg.seed),
                                                 arch=cfg.model.arch, max_depth=cfg.model.max_depth,
                                                 min_samples_leaf=cfg.model.min_samples_leaf)
    save_vocabulary(sliced.vocabulary, ws.path(VOCAB_SELECTED))
    _save_model(ws, new_model, model_file(kind, "selected"), sliced.vocabulary.tokens)
    baseline = ws.stage_info("train").get("models", {}).get(kind, {})
    label = lime.report_label or f"LIME-{selection.heuristic.value}"
    return ws.finish("explain_select", started, {
        "heuristic": selection.heuristic.value, "params": selection.params, "model": kind,
        "n_val": len(explanations), "n_selected": len(selection.selected), "n_features": selection.n_features,
        "mean_fidelity": round(float(np.mean([e.surrogate_fidelity for e in explanations])), 6),
        "label": label, "baseline": baseline,
        "selected": {"train": _metrics_dict(fit_metrics),
                     "test": _metrics_dict(evaluate(new_model, ex.slice_selected(test, selection)))},
    })


def stage_detect(ws: Workspace, model_path: Path, corpus_path: Path, fmt: str = "flowlines",
                 vocab_path: Path | None = None, profile: str | None = None) -> dict:
    started = time.perf_counter()
    model, digest = load_model(_require(Path(model_path), "model file"))
    vocab = load_vocabulary(_require(Path(vocab_path) if vocab_path else ws.path(VOCAB), "vocabulary"))
    if digest != bytes(32) and digest != feature_digest(vocab.tokens):
        raise FeatureMismatch("model was trained on a different vocabulary")
    n_model = model.n_features
    if n_model != len(vocab):
        raise FeatureMismatch(f"model expects {n_model} features, vocabulary has {len(vocab)}")
    corpus, _, _ = read_inputs([corpus_path], fmt)
    known = {}
    if ws.path(LABELS).exists():
        for row in list(csv.reader(io.StringIO(ws.path(LABELS).read_text(encoding="utf-8")), delimiter="\t"))[1:]:
            known[row[0]] = row[1] == "1"
    matrix = vectorize(corpus.flows, vocab)
    proba = model.predict_proba(matrix.values) if len(corpus) else np.zeros(0)
    predicted = proba >= 0.5

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["flow_id", "probability", "predicted_label", "true_label"])
    for flow, p, yhat in zip(corpus.flows, proba, predicted):
        truth = known.get(flow.flow_id)
        out.writerow([flow.flow_id, repr(float(p)), int(yhat), "" if truth is None else int(truth)])
    _write_text(ws.path(PREDICTIONS), buf.getvalue())

    rules = load_rules(ws.cfg.input.rules) if ws.cfg.input.rules else default_rules()
    detected = [LabeledFlow(f, bool(y), tuple(scan_flow(f, rules)), "model") for f, y in zip(corpus.flows, predicted)]
    table = emit_leak_table(detected)
    _write_text(ws.path(LEAK_CSV), table.to_csv())
    _write_text(ws.path(LEAK_TXT), table.to_text())
    info = {"flows": len(corpus), "predicted_positive": int(predicted.sum()),
            "leak_cells": sum(r.n_leaks for r in table.rows)}
    if profile:
        subject = [lf for lf in flows_for_subject(detected, profile) if lf.label]
        report = aggregate_profile(subject, profile)
        _write_text(ws.path(PROFILE), format_profile(report))
        info["profile_apps"] = sorted({lf.flow.app_name for lf in subject})
    return ws.finish("detect", started, info)


# --- report -----------------------------------------------------------------------

TIMING_KEYS = ("seconds", "train_time")


def build_report(ws: Workspace) -> dict:
    stages = {s: ws.stage_info(s) for s in ("ingest", "label", "featurize", "train", "prune",
                                             "explain_select", "detect")}
    rows = []
    train = stages["train"].get("models", {})
    if "dt" in train:
        rows.append(_row("DT", train["dt"]))
    if stages["prune"]:
        p = stages["prune"]
        rows.append(_row(f"DT pruned (alpha={p['best_alpha']:.3g})", p, train_time=train.get("dt", {})
                         .get("train", {}).get("train_time", 0.0)))
    if "nn" in train:
        rows.append(_row(f"NN {stages['train'].get('arch', '')}".strip(), train["nn"]))
    sel = stages["explain_select"]
    if sel:
        rows.append(_row(f"{sel['model'].upper()} {sel['label']}", sel["selected"]))
    counts = dict(stages["featurize"].get("feature_counts", {}))
    if sel:
        counts["selected"] = sel["n_selected"]
    return {
        "config": json.loads(json.dumps(ws.cfg.to_dict())),
        "timings": {s: info.get("seconds") for s, info in stages.items() if info},
        "results": rows,
        "feature_counts": counts,
        "stages": stages,
    }


def _row(name: str, info: dict, train_time: float | None = None) -> dict:
    tr, te = info.get("train", {}), info.get("test", {})
    return {"model": name, "train_acc": tr.get("accuracy"), "test_acc": te.get("accuracy"),
            "test_f1": te.get("f1"), "train_time": train_time if train_time is not None else tr.get("train_time"),
            "n_features": tr.get("n_features")}


def format_report(report: dict) -> str:
    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}"

    lines = ["Model results", ""]
    table = [("Model", "Train", "Test", "Test F1", "Tr. time (s)", "Features")]
    for r in report["results"]:
        table.append((r["model"], pct(r["train_acc"]), pct(r["test_acc"]), pct(r["test_f1"]),
                      "-" if r["train_time"] is None else f"{r['train_time']:.3f}", str(r["n_features"])))
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    for k, row in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines += ["", "Feature counts after each filter"]
    lines += [f"  {k}: {v}" for k, v in report["feature_counts"].items()]
    lines += ["", "Stage timings (s)"]
    lines += [f"  {k}: {v:.3f}" for k, v in report["timings"].items()]
    return "\n".join(lines) + "\n"


def stage_report(ws: Workspace) -> dict:
    report = build_report(ws)
    _write_json(ws.path(REPORT_JSON), report)
    _write_text(ws.path(REPORT_TXT), format_report(report))
    return report


STAGES: dict[str, Callable[[Workspace], dict]] = {
    "ingest": stage_ingest,
    "label": stage_label,
    "featurize": stage_featurize,
    "train": stage_train,
    "explain_select": stage_explain_select,
}


def run_pipeline(ws: Workspace, resume: bool = False, explain: bool = True) -> dict:
    """ingest -> label -> featurize -> train (+prune) -> explain-select -> report."""
    _write_text(ws.path("config.ini"), dump_config(ws.cfg))
    order = ["ingest", "label", "featurize", "train"] + (["explain_select"] if explain else [])
    for stage in order:
        if resume and ws.done(stage) and (stage != "train" or not ws.cfg.model.prune or ws.done("prune")
                                          or ws.cfg.model.kind == "nn"):
            logger.info("resume: skipping %s", stage)
            continue
        if stage == "ingest" and not ws.cfg.input.paths and ws.path(CORPUS).exists():
            continue
        STAGES[stage](ws)
    return stage_report(ws)
