"""Content-addressed pipeline stages.

Each stage writes its artifacts under <out>/<stage>/<hash>/ where the
hash covers the stage's own config plus its upstream hashes, so a stage
re-run with an identical config lands in the same directory and is
skipped unless forced.  Every stage finishes by writing a run.json
(config snapshot, upstream hashes, sha256 of each output file) and a
completion marker; downstream stages locate their inputs by recomputing
the upstream hash from the shared config.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil

import numpy as np

from . import cluster as clustermod
from . import embed as embedmod
from . import metrics, report, roipool, symtab, synth, tensorio
from .config import PipelineConfig, config_hash

MARKER = ".complete"

STAGES = ("synth", "pool", "embed", "cluster", "build-cm", "predict",
          "ess", "ood", "adv", "templearn", "report")

_MISSING_HINT = {
    "pool": "missing activity vectors (run `symbolkit pool` first)",
    "embed": "missing embedding model (run `symbolkit embed` first)",
    "cluster": "missing codebook (run `symbolkit cluster` first)",
    "build-cm": "missing correlation map (run `symbolkit build-cm` first)",
}


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# hashing / addressing
# ---------------------------------------------------------------------------

def _resolved_layers(cfg: PipelineConfig) -> list[int]:
    if cfg["layers"] is not None:
        return sorted(int(l) for l in cfg["layers"])
    manifest, _, _ = tensorio.read_bundle(cfg.require_bundle())
    return sorted(li.layer_id for li in manifest.layer_catalog)

def _synth_subset(cfg):
    return {"synth": cfg.section("synth"), "bundle": cfg["bundle"]}

def _pool_subset(cfg):
    return {"bundle": cfg["bundle"], "layers": _resolved_layers(cfg)}

def _embed_subset(cfg):
    return {"upstream": config_hash(_pool_subset(cfg)), "embed": cfg.section("embed")}

def _cluster_subset(cfg):
    return {"upstream": config_hash(_embed_subset(cfg)),
            "cluster": cfg.section("cluster")}

def _build_cm_subset(cfg):
    return {"upstream": config_hash(_cluster_subset(cfg))}

def _predict_subset(cfg):
    return {"upstream": config_hash(_build_cm_subset(cfg)),
            "predict": cfg.section("predict")}

def _ess_subset(cfg):
    return {"upstream": config_hash(_build_cm_subset(cfg)), "ess": cfg.section("ess")}

def _ood_subset(cfg):
    return {"upstream": config_hash(_build_cm_subset(cfg)), "ood": cfg.section("ood")}

def _adv_subset(cfg):
    return {"upstream": config_hash(_build_cm_subset(cfg)), "adv": cfg.section("adv")}

def _templearn_subset(cfg):
    return {"upstream": config_hash(_build_cm_subset(cfg)),
            "templearn": cfg.section("templearn")}

_SUBSETS = {
    "synth": _synth_subset,
    "pool": _pool_subset,
    "embed": _embed_subset,
    "cluster": _cluster_subset,
    "build-cm": _build_cm_subset,
    "predict": _predict_subset,
    "ess": _ess_subset,
    "ood": _ood_subset,
    "adv": _adv_subset,
    "templearn": _templearn_subset,
}


def stage_dir(cfg: PipelineConfig, stage: str) -> str:
    return os.path.join(cfg["out"], stage, config_hash(_SUBSETS[stage](cfg)))


def _is_complete(d: str) -> bool:
    return os.path.exists(os.path.join(d, MARKER))


def _require(cfg: PipelineConfig, upstream: str, for_stage: str) -> str:
    d = stage_dir(cfg, upstream)
    if not _is_complete(d):
        raise StageError(for_stage, _MISSING_HINT.get(
            upstream, f"missing {upstream} output (run `symbolkit {upstream}` first)"))
    return d


def _finish(stage: str, d: str, run_hash: str, subset: dict, inputs: dict,
            summary: dict):
    outputs = {}
    for base, _, files in sorted(os.walk(d)):
        for name in sorted(files):
            p = os.path.join(base, name)
            rel = os.path.relpath(p, d)
            with open(p, "rb") as f:
                outputs[rel] = hashlib.sha256(f.read()).hexdigest()
    doc = {"stage": stage, "hash": run_hash, "config": subset,
           "inputs": inputs, "summary": summary, "outputs": outputs}
    with open(os.path.join(d, "run.json"), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(d, MARKER), "w", encoding="utf-8") as f:
        f.write("ok\n")


def _result(d: str) -> dict:
    with open(os.path.join(d, "result.json"), encoding="utf-8") as f:
        return json.load(f)


def _write_result(d: str, payload: dict):
    with open(os.path.join(d, "result.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# shared data access
# ---------------------------------------------------------------------------

def _bundle_context(cfg: PipelineConfig):
    manifest, store, rois = tensorio.read_bundle(cfg.require_bundle())
    by_id = {r.roi_id: r for r in rois}
    return manifest, store, rois, by_id


def _load_layer(pool_dir, layer_id):
    return roipool.read_vector_table(pool_dir, layer_id)


def _layer_symbols(build_dir: str, layer_id: int) -> np.ndarray:
    return np.load(os.path.join(build_dir, f"layer{layer_id}.symbols.npy"))


def _layer_cm(build_dir: str, layer_id: int) -> symtab.CorrelationMap:
    return tensorio.load_model(os.path.join(build_dir, f"layer{layer_id}.cm"))


def _split_rows(table: roipool.VectorTable, split: str) -> np.ndarray:
    idx = table.split_indices(split)
    if idx.size == 0:
        raise tensorio.BundleError(f"bundle has no ROIs in split {split!r}")
    return idx


# ---------------------------------------------------------------------------
# stage bodies
# ---------------------------------------------------------------------------

def _run_synth(cfg: PipelineConfig, d: str) -> dict:
    spec = synth.SynthSpec(**cfg.section("synth"))
    bundle = cfg.require_bundle()
    if os.path.exists(bundle):
        shutil.rmtree(bundle)
    synth.generate_bundle(spec, bundle)
    _write_result(d, {"bundle": os.path.basename(bundle)})
    return {"bundle": os.path.basename(bundle)}


def _run_pool(cfg: PipelineConfig, d: str) -> dict:
    manifest, store, rois, _ = _bundle_context(cfg)
    layers = _resolved_layers(cfg)
    counts = {}
    for layer in layers:
        table = roipool.pool_bundle_layer(manifest, store, rois, layer)
        roipool.write_vector_table(d, table)
        counts[str(layer)] = {"rows": int(table.vectors.shape[0]),
                              "retained": int(table.retained.sum()),
                              "layer_mean": table.layer_mean}
    _write_result(d, {"layers": counts})
    return {"layers": counts}


def _run_embed(cfg: PipelineConfig, d: str) -> dict:
    pool_dir = _require(cfg, "pool", "embed")
    params = dict(cfg.section("embed"))
    seed = params.pop("seed")
    summary = {}
    for layer in _resolved_layers(cfg):
        table = _load_layer(pool_dir, layer)
        train = np.repeat(np.asarray(table.split_tags) == "train",
                          roipool.N_POSITIONS)
        rows = table.vectors[train & table.retained]
        model = embedmod.fit_embedding(rows, params, seed=seed, layer_id=layer)
        tensorio.save_model(model, os.path.join(d, f"layer{layer}.embedding"))
        summary[str(layer)] = {"n_train": int(rows.shape[0]),
                               "n_epochs": model.params["n_epochs"]}
    _write_result(d, summary)
    return summary


def _run_cluster(cfg: PipelineConfig, d: str) -> dict:
    _require(cfg, "pool", "cluster")
    embed_dir = _require(cfg, "embed", "cluster")
    pool_dir = stage_dir(cfg, "pool")
    c = cfg.section("cluster")
    summary = {}
    for layer in _resolved_layers(cfg):
        model = tensorio.load_model(os.path.join(embed_dir, f"layer{layer}.embedding"))
        coords = model.low_dim_coords
        if c["mode"] == "kmeans":
            if not c["fixed_k"]:
                raise StageError("cluster", "kmeans mode needs cluster.fixed_k")
            book = clustermod.kmeans_fit(coords, int(c["fixed_k"]), seed=c["seed"],
                                         layer_id=layer, k_max=c["k_max"])
        elif c["mode"] == "xmeans":
            book = clustermod.xmeans_fit(coords, k_init=c["k_init"],
                                         k_max=c["k_max"], seed=c["seed"],
                                         layer_id=layer)
        else:
            raise StageError("cluster", f"unknown cluster.mode {c['mode']!r}")
        table = _load_layer(pool_dir, layer)
        book.layer_mean = table.layer_mean
        book.embedding_ref = f"{config_hash(_embed_subset(cfg))}/layer{layer}"
        tensorio.save_model(book, os.path.join(d, f"layer{layer}.codebook"))
        summary[str(layer)] = {"n_symbols": book.n_symbols}
    _write_result(d, summary)
    return summary


def _run_build_cm(cfg: PipelineConfig, d: str) -> dict:
    pool_dir = _require(cfg, "pool", "build-cm")
    embed_dir = _require(cfg, "embed", "build-cm")
    cluster_dir = _require(cfg, "cluster", "build-cm")
    manifest, _, _, by_id = _bundle_context(cfg)
    summary = {}
    for layer in _resolved_layers(cfg):
        table = _load_layer(pool_dir, layer)
        model = tensorio.load_model(os.path.join(embed_dir, f"layer{layer}.embedding"))
        book = tensorio.load_model(os.path.join(cluster_dir, f"layer{layer}.codebook"))

        # fitted coordinates for retained training rows, transform for the rest
        train_rows = np.repeat(np.asarray(table.split_tags) == "train",
                               roipool.N_POSITIONS)
        fitted = train_rows & table.retained
        coords = np.empty((table.vectors.shape[0],
                           model.train_coords.shape[1]))
        coords[fitted] = model.low_dim_coords
        if (~fitted).any():
            coords[~fitted] = embedmod.transform(model, table.vectors[~fitted])
        symbols = clustermod.assign_symbols(book, coords)
        symbols = symbols.reshape(table.n_rois, roipool.N_POSITIONS)
        np.save(os.path.join(d, f"layer{layer}.symbols.npy"), symbols)

        train_rois = [i for i, tag in enumerate(table.split_tags)
                      if tag == "train" and by_id[table.roi_ids[i]].true_label is not None]
        labels = [by_id[table.roi_ids[i]].true_label for i in train_rois]
        cm = symtab.build_cm(symbols[train_rois], labels, book.n_symbols,
                             manifest.n_classes, manifest.class_names, layer)
        tensorio.save_model(cm, os.path.join(d, f"layer{layer}.cm"))
        summary[str(layer)] = {"n_train_rois": len(train_rois),
                               "count_sum": int(cm.counts.sum())}
    _write_result(d, summary)
    return summary


def _maps_and_symbols(cfg):
    """Normalized maps and cached symbols for every analyzed layer."""
    pool_dir = stage_dir(cfg, "pool")
    build_dir = stage_dir(cfg, "build-cm")
    all_layers = _resolved_layers(cfg)
    maps, syms = {}, {}
    for layer in all_layers:
        maps[layer] = symtab.normalize_cm(_layer_cm(build_dir, layer))
        syms[layer] = _layer_symbols(build_dir, layer)
    table = _load_layer(pool_dir, all_layers[0])
    return maps, syms, table, all_layers


def _run_predict(cfg: PipelineConfig, d: str) -> dict:
    for upstream in ("pool", "embed", "cluster", "build-cm"):
        _require(cfg, upstream, "predict")
    manifest, _, _, by_id = _bundle_context(cfg)
    maps, syms, table, layers = _maps_and_symbols(cfg)
    split = cfg.section("predict")["split"]
    rows = _split_rows(table, split)
    labels = np.array([by_id[table.roi_ids[i]].true_label for i in rows])

    per_layer = {}
    csv_rows = []
    for layer in layers:
        preds, _ = symtab.predict_rois(maps[layer], syms[layer][rows])
        per_layer[str(layer)] = {
            "n": int(rows.size),
            "n_symbols": int(maps[layer].n_symbols),
            "accuracy": metrics.accuracy(preds, labels),
        }
        csv_rows += [(table.roi_ids[i], layer, int(l), int(p))
                     for i, l, p in zip(rows, labels, preds)]
    report.write_csv(os.path.join(d, "predictions.csv"),
                     ["roi_id", "layer", "true_label", "predicted"], csv_rows)
    payload = {"experiment": "predict", "split": split, "per_layer": per_layer}
    _write_result(d, payload)
    return payload


def _profile_inputs(table, syms, rows, by_id):
    roi_ids = [table.roi_ids[i] for i in rows]
    truths = [by_id[r].true_label for r in roi_ids]
    decisions = [by_id[r].model_prediction for r in roi_ids]
    layer_syms = {layer: s[rows] for layer, s in syms.items()}
    return roi_ids, truths, decisions, layer_syms


def _ess_csv(path, profiles: symtab.ProfileSet, split: str, layers):
    header = (["roi_id", "split_tag", "class_source", "pred"]
              + [f"ess_l{l}" for l in (1, 2, 3, 4)] + ["ess_norm"])
    rows = []
    for p in profiles.profiles:
        cells = [p.roi_id, split, p.class_source, p.resolved_class]
        cells += [p.per_layer.get(l, "") for l in (1, 2, 3, 4)]
        cells.append(p.norm)
        rows.append(cells)
    report.write_csv(path, header, rows)


def _run_ess(cfg: PipelineConfig, d: str) -> dict:
    for upstream in ("pool", "embed", "cluster", "build-cm"):
        _require(cfg, upstream, "ess")
    manifest, _, _, by_id = _bundle_context(cfg)
    maps, syms, table, all_layers = _maps_and_symbols(cfg)
    section = cfg.section("ess")
    layers = sorted(section["layers"]) if section["layers"] else all_layers
    split = section["split"]
    rows = _split_rows(table, split)
    roi_ids, truths, decisions, layer_syms = _profile_inputs(table, syms, rows, by_id)

    profiles = symtab.ess_profiles(maps, layer_syms, roi_ids,
                                   section["class_source"], truths, decisions,
                                   layers)
    _ess_csv(os.path.join(d, "esstable.csv"), profiles, split, layers)
    tensorio.save_model(symtab.EssTable.from_profiles(profiles, split, layers),
                        os.path.join(d, "esstable.bin"))

    correct_mask = {}
    for i, roi_id in enumerate(roi_ids):
        rec = by_id[roi_id]
        correct_mask[roi_id] = (rec.model_prediction is not None
                                and rec.model_prediction == rec.true_label)
    scores = {}
    for label in [f"l{l}" for l in layers] + ["norm"]:
        if label == "norm":
            values = profiles.norms()
        else:
            values = profiles.layer_scores(int(label[1:]))
        ok = np.array([correct_mask[p.roi_id] for p in profiles.profiles])
        pos, neg = values[ok], values[~ok]
        scores[label] = {
            "auroc": metrics.auroc(pos, neg) if pos.size and neg.size else None,
            "n_correct": int(pos.size), "n_incorrect": int(neg.size),
        }
    payload = {"experiment": "ess", "split": split,
               "class_source": section["class_source"],
               "layers": layers, "scores": scores,
               "n_excluded": profiles.n_excluded}
    _write_result(d, payload)
    return payload


def _run_ood(cfg: PipelineConfig, d: str) -> dict:
    for upstream in ("pool", "embed", "cluster", "build-cm"):
        _require(cfg, upstream, "ood")
    manifest, _, _, by_id = _bundle_context(cfg)
    maps, syms, table, all_layers = _maps_and_symbols(cfg)
    section = cfg.section("ood")
    if section["layers"]:
        layers = sorted(section["layers"])
    elif len(all_layers) > 1:
        layers = all_layers[:-1]  # deepest layer only resolves the class
    else:
        layers = all_layers

    groups = {}
    for condition, split in (("in_dist", "test"), ("ood", "ood")):
        rows = _split_rows(table, split)
        roi_ids, truths, decisions, layer_syms = _profile_inputs(
            table, syms, rows, by_id)
        groups[condition] = symtab.ess_profiles(
            maps, layer_syms, roi_ids, "layer4_prediction", truths, decisions,
            layers)

    scores = {}
    for label in [f"l{l}" for l in layers] + ["norm"]:
        def values(ps):
            return ps.norms() if label == "norm" else ps.layer_scores(int(label[1:]))
        scores[label] = {
            "auroc": metrics.auroc(values(groups["in_dist"]), values(groups["ood"])),
            "n_in_dist": len(groups["in_dist"].profiles),
            "n_ood": len(groups["ood"].profiles),
        }

    csv_rows = []
    for condition, ps in sorted(groups.items()):
        for p in ps.profiles:
            csv_rows.append([condition, p.roi_id]
                            + [p.per_layer[l] for l in layers] + [p.norm])
    report.write_csv(os.path.join(d, "ood_scores.csv"),
                     ["condition", "roi_id"] + [f"ess_l{l}" for l in layers]
                     + ["ess_norm"], csv_rows)
    payload = {"experiment": "ood", "layers": layers, "scores": scores}
    _write_result(d, payload)
    return payload


def _run_adv(cfg: PipelineConfig, d: str) -> dict:
    for upstream in ("pool", "embed", "cluster", "build-cm"):
        _require(cfg, upstream, "adv")
    manifest, _, _, by_id = _bundle_context(cfg)
    maps, syms, table, all_layers = _maps_and_symbols(cfg)
    deepest = all_layers[-1]

    data = {}
    for condition, split in (("clean", "test"), ("adversarial", "adversarial")):
        rows = _split_rows(table, split)
        roi_ids, truths, decisions, layer_syms = _profile_inputs(
            table, syms, rows, by_id)
        decision_ps = symtab.ess_profiles(maps, layer_syms, roi_ids,
                                          "model_decision", truths, decisions,
                                          all_layers)
        standard_ps = symtab.ess_profiles(maps, layer_syms, roi_ids,
                                          "layer4_prediction", truths, decisions,
                                          all_layers)
        preds, _ = symtab.predict_rois(maps[deepest], syms[deepest][rows])
        truths_arr = np.array([-2 if v is None else v for v in truths])
        model_preds = np.array([-1 if v is None else v for v in decisions])
        data[condition] = {
            "decision": decision_ps, "standard": standard_ps,
            "symbol_accuracy": metrics.accuracy(preds, truths_arr),
            "model_accuracy": float(np.mean(model_preds == truths_arr)),
        }

    payload = {
        "experiment": "adv",
        "layers": all_layers,
        "scores": {
            "decision_ess_norm": {
                "auroc": metrics.auroc(data["clean"]["decision"].norms(),
                                       data["adversarial"]["decision"].norms()),
                "n_clean": len(data["clean"]["decision"].profiles),
                "n_adversarial": len(data["adversarial"]["decision"].profiles),
                "n_excluded_clean": data["clean"]["decision"].n_excluded,
                "n_excluded_adversarial": data["adversarial"]["decision"].n_excluded,
            },
            "ess_norm": {
                "auroc": metrics.auroc(data["clean"]["standard"].norms(),
                                       data["adversarial"]["standard"].norms()),
                "n_clean": len(data["clean"]["standard"].profiles),
                "n_adversarial": len(data["adversarial"]["standard"].profiles),
            },
        },
        "accuracy": {
            cond: {"symbol": data[cond]["symbol_accuracy"],
                   "model": data[cond]["model_accuracy"]}
            for cond in ("clean", "adversarial")
        },
    }
    csv_rows = []
    for cond in ("clean", "adversarial"):
        for p in data[cond]["decision"].profiles:
            csv_rows.append([cond, "model_decision", p.roi_id, p.norm])
        for p in data[cond]["standard"].profiles:
            csv_rows.append([cond, "layer4_prediction", p.roi_id, p.norm])
    report.write_csv(os.path.join(d, "adv_scores.csv"),
                     ["condition", "class_source", "roi_id", "ess_norm"], csv_rows)
    _write_result(d, payload)
    return payload


def _run_templearn(cfg: PipelineConfig, d: str) -> dict:
    for upstream in ("pool", "embed", "cluster", "build-cm"):
        _require(cfg, upstream, "templearn")
    manifest, _, _, by_id = _bundle_context(cfg)
    _, syms, table, all_layers = _maps_and_symbols(cfg)
    ood_names = manifest.extra.get("ood_class_names") or []
    if not ood_names:
        raise StageError("templearn", "bundle declares no ood_class_names")
    deepest = all_layers[-1]
    rows = _split_rows(table, "ood")
    labels = np.array([by_id[table.roi_ids[i]].true_label for i in rows])
    section = cfg.section("templearn")

    accs = symtab.temporary_learning(syms[deepest][rows], labels,
                                     len(ood_names), section["resamples"],
                                     section["seed"])
    report.write_csv(os.path.join(d, "accuracies.csv"), ["trial", "accuracy"],
                     list(enumerate(accs)))
    payload = {"experiment": "templearn", "layer": deepest,
               "resamples": int(section["resamples"]),
               "n_classes": len(ood_names), "chance": 1.0 / len(ood_names),
               "mean_accuracy": float(accs.mean()), "std_accuracy": float(accs.std()),
               "n_rois": int(rows.size)}
    _write_result(d, payload)
    return payload


def _collect_sweep(cfg: PipelineConfig):
    """Fixed-k predict results sharing this config's pool hash."""
    root = os.path.join(cfg["out"], "predict")
    if not os.path.isdir(root):
        return []
    pool_h = config_hash(_pool_subset(cfg))
    runs = []
    for h in sorted(os.listdir(root)):
        run_path = os.path.join(root, h, "run.json")
        if not os.path.exists(run_path):
            continue
        with open(run_path, encoding="utf-8") as f:
            run = json.load(f)
        res_path = os.path.join(root, h, "result.json")
        if not os.path.exists(res_path):
            continue
        runs.append((h, run, _result(os.path.join(root, h))))
    return [(h, r, res) for h, r, res in runs
            if r.get("summary", {}).get("pool_hash") == pool_h
            and r.get("summary", {}).get("fixed_k")]


def _run_report(cfg: PipelineConfig, d: str) -> dict:
    fmt = cfg.section("report")["format"]
    rep = report.Reporter(d, fmt)
    consumed = {}

    def available(stage):
        sd = stage_dir(cfg, stage)
        if _is_complete(sd) and os.path.exists(os.path.join(sd, "result.json")):
            consumed[stage] = config_hash(_SUBSETS[stage](cfg))
            return _result(sd)
        return None

    res = available("predict")
    if res:
        rows = [{"layer": int(l), "split": res["split"], "n": v["n"],
                 "accuracy": v["accuracy"]}
                for l, v in sorted(res["per_layer"].items(), key=lambda kv: int(kv[0]))]
        rep.accuracy_by_layer("prediction_accuracy", rows)

    res = available("ess")
    if res:
        rows = [{"score": label, "auroc": v["auroc"],
                 "n_pos": v["n_correct"], "n_neg": v["n_incorrect"]}
                for label, v in res["scores"].items()]
        rep.auroc_by_layer("ess_correct_vs_incorrect", rows)

    res = available("ood")
    if res:
        rows = [{"score": label, "auroc": v["auroc"],
                 "n_pos": v["n_in_dist"], "n_neg": v["n_ood"]}
                for label, v in res["scores"].items()]
        rep.auroc_by_layer("ood_auroc", rows)
        ood_dir = stage_dir(cfg, "ood")
        groups = _scatter_groups(os.path.join(ood_dir, "ood_scores.csv"),
                                 res["layers"])
        rep.ess_scatter("ood_ess_scatter", groups, res["layers"])

    res = available("adv")
    if res:
        rows = [{"score": label, "auroc": v["auroc"],
                 "n_pos": v["n_clean"], "n_neg": v["n_adversarial"]}
                for label, v in res["scores"].items()]
        rep.auroc_by_layer("adv_auroc", rows)
        acc_rows = [(cond, res["accuracy"][cond]["symbol"],
                     res["accuracy"][cond]["model"])
                    for cond in ("clean", "adversarial")]
        rep.table("adv_accuracy", ["condition", "symbol_accuracy", "model_accuracy"],
                  acc_rows)

    res = available("templearn")
    if res:
        tl_dir = stage_dir(cfg, "templearn")
        accs = _read_accuracies(os.path.join(tl_dir, "accuracies.csv"))
        rep.trial_accuracies("templearn_accuracy", accs, chance=res["chance"])

    sweep = _collect_sweep(cfg)
    if sweep:
        layer_ids = sorted({int(l) for _, _, res in sweep for l in res["per_layer"]})
        k_values = sorted({r["summary"]["fixed_k"] for _, r, _ in sweep})
        grid = np.full((len(layer_ids), len(k_values)), np.nan)
        for _, run, res in sweep:
            kcol = k_values.index(run["summary"]["fixed_k"])
            for l, v in res["per_layer"].items():
                grid[layer_ids.index(int(l)), kcol] = v["accuracy"]
        rep.accuracy_grid("fixed_k_sweep", layer_ids, k_values, grid)
        consumed["sweep"] = sorted(h for h, _, _ in sweep)

    payload = {"experiment": "report", "format": fmt, "consumed": consumed,
               "written": sorted(os.path.relpath(p, d) for p in rep.written)}
    _write_result(d, payload)
    return payload


def _scatter_groups(csv_path, layers):
    import csv as _csv
    groups: dict[str, list] = {}
    with open(csv_path, encoding="utf-8") as f:
        for row in _csv.DictReader(f):
            vals = [float(row[f"ess_l{l}"]) for l in layers]
            groups.setdefault(row["condition"], []).append(vals)
    return {k: np.asarray(v) for k, v in groups.items()}


def _read_accuracies(csv_path):
    import csv as _csv
    with open(csv_path, encoding="utf-8") as f:
        return np.array([float(r["accuracy"]) for r in _csv.DictReader(f)])


_RUNNERS = {
    "synth": _run_synth,
    "pool": _run_pool,
    "embed": _run_embed,
    "cluster": _run_cluster,
    "build-cm": _run_build_cm,
    "predict": _run_predict,
    "ess": _run_ess,
    "ood": _run_ood,
    "adv": _run_adv,
    "templearn": _run_templearn,
    "report": _run_report,
}


def run_stage(cfg: PipelineConfig, stage: str, force: bool = False) -> str:
    """Run one stage (or reuse its completed output); returns its directory."""
    if stage not in _RUNNERS:
        raise StageError(stage, f"unknown stage; expected one of {STAGES}")
    if stage == "report":
        # report output depends on whatever upstream results exist now
        subset = {"report": cfg.section("report")}
        run_hash = _report_hash(cfg)
        d = os.path.join(cfg["out"], "report", run_hash)
    else:
        subset = _SUBSETS[stage](cfg)
        run_hash = config_hash(subset)
        d = stage_dir(cfg, stage)
    if _is_complete(d) and not force:
        return d
    if os.path.isdir(d):
        shutil.rmtree(d)
    os.makedirs(d, exist_ok=True)
    summary = _RUNNERS[stage](cfg, d)
    if stage == "predict":
        summary = dict(summary)
        summary["pool_hash"] = config_hash(_pool_subset(cfg))
        c = cfg.section("cluster")
        summary["fixed_k"] = c["fixed_k"] if c["mode"] == "kmeans" else None
    inputs = {up: config_hash(_SUBSETS[up](cfg))
              for up in _upstreams(stage) if _is_complete(stage_dir(cfg, up))}
    _finish(stage, d, run_hash, subset, inputs, summary)
    return d


def _upstreams(stage: str) -> tuple[str, ...]:
    chain = {
        "synth": (), "pool": (), "report": (),
        "embed": ("pool",),
        "cluster": ("pool", "embed"),
        "build-cm": ("pool", "embed", "cluster"),
    }
    return chain.get(stage, ("pool", "embed", "cluster", "build-cm"))


def _report_hash(cfg: PipelineConfig) -> str:
    consumed = []
    for stage in ("predict", "ess", "ood", "adv", "templearn"):
        try:
            sd = stage_dir(cfg, stage)
        except Exception:
            continue
        if _is_complete(sd):
            consumed.append(config_hash(_SUBSETS[stage](cfg)))
    consumed += [h for h, _, _ in _collect_sweep(cfg)]
    return config_hash({"report": cfg.section("report"),
                        "consumed": sorted(consumed)})
