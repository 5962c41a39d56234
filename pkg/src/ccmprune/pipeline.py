"""File-based pipeline stages: train -> score -> select -> prune/finetune -> report.

Every stage reads its inputs from and writes its outputs to a work directory,
so stages can be re-run, resumed or composed by hand. Layout::

    <workdir>/data/{train,test}_{images,labels}.ckt
    <workdir>/train/          checkpoint of the CCM-trained model
    <workdir>/baseline/       same recipe with the CCM term off (report contrast)
    <workdir>/score/layer<l>.csv, gini.json
    <workdir>/alpha_<a>/plan.json
    <workdir>/alpha_<a>/pruned/   finetuned checkpoint (+ provenance)
    <workdir>/alpha_<a>/report.json, widths.csv
    <workdir>/report/corr_*.csv, importance_*.csv, retained_counts.csv, summary.json

Each stage writes its completion file last (``manifest.json``, ``gini.json``,
``plan.json``, ``report.json``, ``summary.json``); :func:`run_pipeline` skips a
stage whose completion file already exists.
"""

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_alpha
from .ccm import corr_matrix, mean_offdiag_abs, write_corr_csv
from .checkpoint import MANIFEST, load_checkpoint, save_checkpoint
from .data import SynthDataset, synth_dataset
from .exceptions import ArtifactError, ConfigError
from .importance import average_scores, chip_scores, gini, read_importance_csv, write_importance_csv
from .nn import NetworkSpec, forward
from .selection import PruningPlan, build_plan, pcrr_select
from .surgery import apply_plan, compression_report, finetune
from .tensor import channel_matrix, read_tensor, write_tensor
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "load_config",
    "prepare_data",
    "scoring_batches",
    "score_model",
    "stage_train",
    "stage_score",
    "stage_select",
    "stage_prune",
    "stage_report",
    "run_pipeline",
]

DEFAULTS = {
    "workdir": "ccm_run",
    "seed": 0,
    "network": {"input_shape": [1, 16, 16], "stages": [8, 16, 16], "num_classes": 4, "ccm_layers": None},
    "data": {"n_train": 2000, "n_test": 800, "cache": None},
    "train": {"epochs": 40, "batch_size": 64, "learning_rate": 0.01, "momentum": 0.9,
              "weight_decay": 0.005, "lam": 0.01, "mode": "minus"},
    "finetune": {"epochs": 20, "keep_ccm": False},
    "scoring": {"batches": 5, "batch_size": 64},
    "alphas": [0.7],
    "report": {"baseline": True},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    """Parsed pipeline configuration (see ``DEFAULTS`` for the JSON schema)."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.raw = _merge(DEFAULTS, self.raw)
        if not str(self.raw["workdir"]):
            raise ConfigError("workdir must be a non-empty path")
        try:
            self.spec = NetworkSpec.from_dict(self.raw["network"])
            self.train_config = TrainConfig(seed=int(self.raw["seed"]), **self.raw["train"])
            self.finetune_config = self.train_config.replace(epochs=int(self.raw["finetune"]["epochs"]))
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        self.alphas = [check_alpha(a) for a in self.raw["alphas"]]
        if not self.alphas:
            raise ConfigError("alphas must list at least one value")
        sc = self.raw["scoring"]
        if int(sc["batches"]) < 1 or int(sc["batch_size"]) < 1:
            raise ConfigError("scoring batches and batch_size must be >= 1")

    @property
    def workdir(self):
        return Path(self.raw["workdir"])

    @property
    def seed(self):
        return int(self.raw["seed"])

    def alpha_dir(self, alpha):
        return self.workdir / f"alpha_{alpha:g}"

    def with_overrides(self, seed=None, alphas=None, workdir=None):
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if alphas:
            raw["alphas"] = list(alphas)
        if workdir is not None:
            raw["workdir"] = str(workdir)
        return PipelineConfig(raw)

    def to_dict(self):
        return copy.deepcopy(self.raw)


def load_config(path=None):
    if path is None:
        return PipelineConfig({})
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return PipelineConfig(raw)


# --- data -----------------------------------------------------------------

def _data_dir(cfg):
    cache = cfg.raw["data"].get("cache")
    return Path(cache) if cache else cfg.workdir / "data"


def prepare_data(cfg):
    """Train/test sets from seeds ``seed`` and ``seed + 1``; cached as ``.ckt`` files."""
    d = _data_dir(cfg)
    sizes = {"train": int(cfg.raw["data"]["n_train"]), "test": int(cfg.raw["data"]["n_test"])}
    seeds = {"train": cfg.seed, "test": cfg.seed + 1}
    out = {}
    for split in ("train", "test"):
        img_path, lab_path = d / f"{split}_images.ckt", d / f"{split}_labels.ckt"
        if img_path.is_file() and lab_path.is_file():
            _, images = read_tensor(img_path)
            _, labels = read_tensor(lab_path)
            if images.shape[0] == sizes[split]:
                out[split] = SynthDataset(images, labels.astype(np.int64), seeds[split])
                continue
        ds = synth_dataset(seeds[split], sizes[split])
        d.mkdir(parents=True, exist_ok=True)
        write_tensor(img_path, ds.images.shape, ds.images)
        write_tensor(lab_path, ds.labels.shape, ds.labels.astype(np.float64))
        out[split] = ds
    return out["train"], out["test"]


def scoring_batches(dataset, n_batches, batch_size):
    """The first ``n_batches`` consecutive slices of ``batch_size`` images."""
    images = dataset.images
    out = []
    for b in range(n_batches):
        chunk = images[b * batch_size:(b + 1) * batch_size]
        if len(chunk) == 0:
            break
        out.append(chunk)
    if not out:
        raise ConfigError("dataset too small for a single scoring batch")
    return out


def score_model(params, spec, batches):
    """Per-stage averaged CHIP scores and mean off-diagonal |r| over ``batches``.

    Returns ``(importances, offdiag)`` where ``importances[l]`` is an
    :class:`ImportanceList` and ``offdiag[l]`` a float.
    """
    per_layer = {l: [] for l in range(len(spec.stages))}
    offdiag = {l: [] for l in range(len(spec.stages))}
    for x in batches:
        feats, _ = forward(params, spec, x)
        for l, f in enumerate(feats):
            c = channel_matrix(f)
            per_layer[l].append(chip_scores(c, layer=l))
            offdiag[l].append(mean_offdiag_abs(corr_matrix(c)))
    return ([average_scores(per_layer[l]) for l in per_layer],
            {l: float(np.mean(v)) for l, v in offdiag.items()})


# --- stages ---------------------------------------------------------------

def stage_train(cfg, baseline=False):
    """Train from scratch; ``baseline=True`` trains the same recipe with CCM off."""
    train_ds, _ = prepare_data(cfg)
    tc = cfg.train_config.replace(mode="off") if baseline else cfg.train_config
    out = cfg.workdir / ("baseline" if baseline else "train")
    log.info("training %s model -> %s", "baseline" if baseline else "CCM", out)
    params, history = train(cfg.spec, train_ds, tc)
    manifest_path = out / MANIFEST
    if manifest_path.exists():
        manifest_path.unlink()
    save_checkpoint(out, cfg.spec, params, tc, history)
    return out


def stage_score(cfg, checkpoint=None, out=None):
    checkpoint = Path(checkpoint) if checkpoint else cfg.workdir / "train"
    out = Path(out) if out else cfg.workdir / "score"
    spec, params, _ = load_checkpoint(checkpoint)
    train_ds, _ = prepare_data(cfg)
    sc = cfg.raw["scoring"]
    importances, offdiag = score_model(params, spec, scoring_batches(train_ds, int(sc["batches"]), int(sc["batch_size"])))
    out.mkdir(parents=True, exist_ok=True)
    for item in importances:
        write_importance_csv(out / f"layer{item.layer}.csv", item)
    summary = {
        "checkpoint": str(checkpoint),
        "layers": [
            {"layer": item.layer, "gini": gini(item), "mean_offdiag_abs_corr": offdiag[item.layer]}
            for item in importances
        ],
    }
    with open(out / "gini.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return importances


def _read_scores(paths):
    items = []
    for p in paths:
        try:
            items.extend(read_importance_csv(p))
        except FileNotFoundError:
            raise ArtifactError(f"importance file {p} not found") from None
        except (KeyError, ValueError) as exc:
            raise ArtifactError(f"importance file {p} is malformed: {exc}") from None
    return sorted(items, key=lambda it: it.layer)


def stage_select(cfg, alpha, score_files=None, checkpoint=None, out=None):
    """One global ``alpha`` applied to every layer's scores.

    The network shape comes from ``checkpoint`` (default ``<workdir>/train``);
    when no checkpoint is named and the default one does not exist, the
    config's network is used, so plans can be built from score files alone.
    """
    alpha = check_alpha(alpha)
    if checkpoint is None and not (cfg.workdir / "train" / MANIFEST).is_file():
        spec = cfg.spec
    else:
        spec, _, _ = load_checkpoint(Path(checkpoint) if checkpoint else cfg.workdir / "train")
    if score_files is None:
        score_files = [cfg.workdir / "score" / f"layer{l}.csv" for l in range(len(spec.stages))]
    items = _read_scores(score_files)
    plan = build_plan([pcrr_select(it, alpha) for it in items], spec, alpha=alpha)
    out = Path(out) if out else cfg.alpha_dir(alpha) / "plan.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.to_json(out)
    return plan


def stage_prune(cfg, alpha=None, plan_path=None, checkpoint=None, out=None):
    """Apply a plan, finetune, and write the pruned checkpoint and report."""
    checkpoint = Path(checkpoint) if checkpoint else cfg.workdir / "train"
    spec, params, _ = load_checkpoint(checkpoint)
    if plan_path is None:
        if alpha is None:
            raise ConfigError("need an alpha or an explicit plan file")
        plan_path = cfg.alpha_dir(check_alpha(alpha)) / "plan.json"
    plan_path = Path(plan_path)
    try:
        plan = PruningPlan.from_json(plan_path, spec)
    except FileNotFoundError:
        raise ArtifactError(f"plan file {plan_path} not found") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"plan file {plan_path} is malformed: {exc!r}") from None
    out = Path(out) if out else plan_path.parent
    train_ds, test_ds = prepare_data(cfg)
    acc_before = evaluate(params, spec, test_ds)
    model = apply_plan(params, spec, plan, source=str(checkpoint))
    acc_pruned = evaluate(model.params, model.spec, test_ds)
    model, history = finetune(model, train_ds, cfg.finetune_config, keep_ccm=bool(cfg.raw["finetune"]["keep_ccm"]))
    acc_after = evaluate(model.params, model.spec, test_ds)
    save_checkpoint(out / "pruned", model.spec, model.params, cfg.finetune_config.replace(
        mode=cfg.finetune_config.mode if cfg.raw["finetune"]["keep_ccm"] else "off"), history, model.provenance)
    report = compression_report(spec, model.spec, alpha=plan.alpha, accuracy_before=acc_before,
                                accuracy_pruned=acc_pruned, accuracy_after=acc_after)
    report.to_csv(out / "widths.csv")
    report.to_json(out / "report.json")
    return report


def stage_report(cfg):
    """Figure-ready data: correlation heatmaps, importance bars, retained counts, summary."""
    out = cfg.workdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    _, test_ds = prepare_data(cfg)
    sc = cfg.raw["scoring"]
    batches = scoring_batches(test_ds, int(sc["batches"]), int(sc["batch_size"]))
    summary = {"models": {}, "alphas": []}
    for tag in ("train", "baseline"):
        ck = cfg.workdir / tag
        if not (ck / MANIFEST).is_file():
            continue
        spec, params, _ = load_checkpoint(ck)
        label = "ccm" if tag == "train" else "baseline"
        # heatmap from the first scoring batch, averaged importances from all
        feats, _ = forward(params, spec, batches[0])
        for l, f in enumerate(feats):
            write_corr_csv(out / f"corr_{label}_layer{l}.csv", corr_matrix(channel_matrix(f)))
        importances, offdiag = score_model(params, spec, batches)
        for item in importances:
            write_importance_csv(out / f"importance_{label}_layer{item.layer}.csv", item)
        summary["models"][label] = {
            "test_accuracy": evaluate(params, spec, test_ds),
            "layers": [
                {"layer": it.layer, "gini": gini(it), "mean_offdiag_abs_corr": offdiag[it.layer]}
                for it in importances
            ],
        }
    rows = []
    for alpha in cfg.alphas:
        rp = cfg.alpha_dir(alpha) / "report.json"
        if not rp.is_file():
            continue
        with open(rp) as fh:
            rep = json.load(fh)
        summary["alphas"].append(rep)
        for layer in rep["layers"]:
            rows.append([layer["layer"], f"{alpha:g}", layer["width_before"], layer["width_after"],
                         layer["width_before"] - layer["width_after"]])
    with open(out / "retained_counts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "alpha", "original_width", "retained", "removed"])
        writer.writerows(rows)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def run_pipeline(cfg, resume=True):
    """Every stage in order for each alpha; finished stages are skipped when ``resume``."""
    wd = cfg.workdir

    def done(path):
        return resume and Path(path).is_file()

    if not done(wd / "train" / MANIFEST):
        stage_train(cfg)
    if cfg.raw["report"].get("baseline") and not done(wd / "baseline" / MANIFEST):
        stage_train(cfg, baseline=True)
    if not done(wd / "score" / "gini.json"):
        stage_score(cfg)
    for alpha in cfg.alphas:
        if not done(cfg.alpha_dir(alpha) / "plan.json"):
            stage_select(cfg, alpha)
        if not done(cfg.alpha_dir(alpha) / "report.json"):
            stage_prune(cfg, alpha)
    return stage_report(cfg)
