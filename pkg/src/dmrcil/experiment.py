"""Config-driven class-incremental runs over frozen features.

A run is fully determined by its config: the stream seed drives synthetic
data, the class shuffle and the train/test holdout; the train seed drives
SGD, pseudo-feature replay, EM seeding and MMD sampling.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .baselines import fit_dstd, fit_prior
from .classifier import LinearClassifier, TrainConfig, classifier_to_bytes, predict, train_stage
from .features import (
    FeatureDataset,
    SynthSpec,
    load_embeddings,
    split_task_stream,
    synth_generate,
    train_test_split,
)
from .gmm import EmConfig
from .memory import MemoryBank, bank_to_bytes, fit_class_memory, mmd_to_truth
from .silhouette import KSelectConfig

log = logging.getLogger(__name__)

RUN_FIDELITIES = ("finetune", "prior", "d-std", "dmr-lite", "dmr")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


DEFAULTS = {
    "data": {"source": "synth", "test_fraction": 0.25},
    "stream": {"base": 4, "increment": 4, "seed": 0},
    "memory": {
        "fidelity": "dmr",
        "k_max": 5,
        "threshold": 0.1,
        "clusterer": "kmeans",
        "em": {"max_iters": 200, "rel_tol": 1e-6, "cov_jitter": None, "init": "kmeans"},
    },
    "train": {
        "epochs": 10,
        "lr": 0.001,
        "base_lr": 0.05,
        "base_epochs": None,
        "momentum": 0.9,
        "xi": 0.5,
        "beta_alpha": 0.2,
        "pseudo_per_class": None,
        "fold_lambda": True,
        "mix_partner": "nearest",
        "batch": 32,
        "seed": 0,
    },
    "eval": {"mmd_bandwidth": "median", "ci_pooling": "all", "mmd_samples": 200},
    "out": {"dir": "out"},
}

_TYPES = {
    "data.source": str,
    "data.path": str,
    "data.format": str,
    "data.test_fraction": float,
    "data.synth_spec": dict,
    "stream.base": int,
    "stream.increment": int,
    "stream.seed": int,
    "memory.fidelity": str,
    "memory.k_max": int,
    "memory.threshold": float,
    "memory.clusterer": str,
    "memory.em": dict,
    "memory.em.max_iters": int,
    "memory.em.rel_tol": float,
    "memory.em.cov_jitter": (float, type(None)),
    "memory.em.init": str,
    "train.epochs": int,
    "train.lr": float,
    "train.base_lr": (float, type(None)),
    "train.base_epochs": (int, type(None)),
    "train.momentum": float,
    "train.xi": float,
    "train.beta_alpha": float,
    "train.pseudo_per_class": (int, type(None)),
    "train.fold_lambda": bool,
    "train.mix_partner": str,
    "train.batch": int,
    "train.seed": int,
    "eval.mmd_bandwidth": (str, float),
    "eval.ci_pooling": str,
    "eval.mmd_samples": int,
    "out.dir": str,
}

_SYNTH_FIELDS = {
    "num_classes": int,
    "dim": int,
    "components_per_class": list,
    "separation": float,
    "anisotropy": float,
    "samples_per_class": int,
    "seed": int,
    "lobe_separation": float,
    "rotation_block": int,
    "component_std": float,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _check_type(path, value, expected):
    kinds = expected if isinstance(expected, tuple) else (expected,)
    if float in kinds and isinstance(value, int) and not isinstance(value, bool):
        return
    if (isinstance(value, bool) and bool not in kinds) or not isinstance(value, kinds):
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(path, f"expected {names}, got {type(value).__name__}")


def _walk(node: dict, prefix: str):
    for key, value in node.items():
        path = f"{prefix}.{key}" if prefix else key
        if path not in _TYPES and prefix != "data.synth_spec":
            if prefix == "" and key in DEFAULTS:
                if not isinstance(value, dict):
                    raise ConfigError(path, "expected an object")
                _walk(value, path)
                continue
            raise ConfigError(path, "unknown field")
        if prefix == "data.synth_spec":
            if key not in _SYNTH_FIELDS:
                raise ConfigError(path, "unknown synth field")
            _check_type(path, value, _SYNTH_FIELDS[key])
            continue
        _check_type(path, value, _TYPES[path])
        if isinstance(value, dict):
            _walk(value, path)


def validate_config(raw: dict) -> dict:
    """Type-check ``raw`` and return it merged over the defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _walk(raw, "")
    cfg = _merge(DEFAULTS, raw)
    data = cfg["data"]
    if data["source"] not in ("synth", "file"):
        raise ConfigError("data.source", "must be 'synth' or 'file'")
    if data["source"] == "file" and "path" not in data:
        raise ConfigError("data.path", "required when data.source is 'file'")
    if data["source"] == "synth" and "synth_spec" not in data:
        raise ConfigError("data.synth_spec", "required when data.source is 'synth'")
    if not 0.0 < data["test_fraction"] < 1.0:
        raise ConfigError("data.test_fraction", "must lie in (0, 1)")
    if cfg["memory"]["fidelity"] not in RUN_FIDELITIES:
        raise ConfigError("memory.fidelity", f"must be one of {', '.join(RUN_FIDELITIES)}")
    if cfg["eval"]["ci_pooling"] not in ("all", "previous"):
        raise ConfigError("eval.ci_pooling", "must be 'all' or 'previous'")
    bw = cfg["eval"]["mmd_bandwidth"]
    if isinstance(bw, str) and bw not in ("median", "median-heuristic"):
        raise ConfigError("eval.mmd_bandwidth", "must be 'median' or a positive number")
    try:
        _train_config(cfg)
        _em_config(cfg, 0)
        _select_config(cfg, 0)
        if data["source"] == "synth":
            _synth_spec(cfg)
    except ValueError as exc:
        raise ConfigError(_guess_path(str(exc)), str(exc)) from None
    return cfg


def _guess_path(message: str) -> str:
    for section in ("train", "memory", "data.synth_spec"):
        for key in _TYPES:
            if key.startswith(section) and key.rsplit(".", 1)[-1] in message:
                return key
    return "<config>"


def _synth_spec(cfg) -> SynthSpec:
    fields = dict(cfg["data"]["synth_spec"])
    fields.setdefault("seed", cfg["stream"]["seed"])
    if "components_per_class" in fields:
        fields["components_per_class"] = tuple(fields["components_per_class"])
    return SynthSpec(**fields)


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch"],
        learning_rate=float(t["lr"]),
        momentum=float(t["momentum"]),
        xi=float(t["xi"]),
        beta_alpha=float(t["beta_alpha"]),
        pseudo_per_class=t["pseudo_per_class"],
        seed=t["seed"],
        base_learning_rate=None if t["base_lr"] is None else float(t["base_lr"]),
        base_epochs=t["base_epochs"],
        fold_lambda=t["fold_lambda"],
        mix_partner=t["mix_partner"],
    )


def _em_config(cfg, seed) -> EmConfig:
    e = cfg["memory"]["em"]
    merged = _merge(DEFAULTS["memory"]["em"], e)
    return EmConfig(
        max_iters=merged["max_iters"],
        rel_tol=float(merged["rel_tol"]),
        cov_jitter=merged["cov_jitter"],
        init=merged["init"],
        seed=seed,
    )


def _select_config(cfg, seed) -> KSelectConfig:
    m = cfg["memory"]
    return KSelectConfig(k_max=m["k_max"], threshold=float(m["threshold"]),
                         candidate_clusterer=m["clusterer"], seed=seed)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return raw


def _dataset(cfg) -> FeatureDataset:
    data = cfg["data"]
    if data["source"] == "file":
        return load_embeddings(data["path"], data.get("format"))
    return synth_generate(_synth_spec(cfg)).dataset


def build_memory(features, fidelity, cfg, class_id, seed):
    if fidelity == "prior":
        return fit_prior(features, class_id)
    if fidelity == "d-std":
        return fit_dstd(features, class_id)
    return fit_class_memory(
        features, fidelity, _select_config(cfg, seed), _em_config(cfg, seed), class_id
    )


@dataclass
class RunResult:
    report: metrics.RunReport
    bank: MemoryBank
    classifier: LinearClassifier
    config: dict


class StageFailure(RuntimeError):
    def __init__(self, task_id: int, cause: Exception):
        super().__init__(f"stage {task_id}: {cause}")
        self.task_id = task_id


def run_experiment(raw_config: dict, dataset: FeatureDataset | None = None) -> RunResult:
    """Execute the stage loop: train, fit memories for the new classes, evaluate."""
    cfg = validate_config(raw_config)
    fidelity = cfg["memory"]["fidelity"]
    data = dataset if dataset is not None else _dataset(cfg)
    stream_seed, train_seed = cfg["stream"]["seed"], cfg["train"]["seed"]
    train, test = train_test_split(data, cfg["data"]["test_fraction"], stream_seed)
    stream = split_task_stream(train, cfg["stream"]["base"], cfg["stream"]["increment"], stream_seed)
    task_of_class = stream.task_of_class()
    tcfg = _train_config(cfg)
    ev = cfg["eval"]
    bandwidth = ev["mmd_bandwidth"] if isinstance(ev["mmd_bandwidth"], str) else float(ev["mmd_bandwidth"])

    clf = LinearClassifier.empty(data.dim)
    bank = MemoryBank(data.dim)
    stages = []
    for task in stream.tasks:
        t = task.task_id
        try:
            stage_cfg = TrainConfig(**{**asdict(tcfg), "seed": train_seed + 1009 * t})
            use_bank = bank if fidelity != "finetune" else None
            if fidelity == "finetune":
                stage_cfg = TrainConfig(**{**asdict(stage_cfg), "xi": 1.0, "pseudo_per_class": 0})
            clf = train_stage(clf, task.data.X, task.data.y, use_bank, stage_cfg)
            if fidelity != "finetune":
                for c in task.classes:
                    seed = train_seed * 100_003 + c
                    bank.add(build_memory(task.data.of_class(c), fidelity, cfg, c, seed))
            seen = [c for tk in stream.tasks[: t + 1] for c in tk.classes]
            evald = test.subset(seen)
            preds = predict(clf, evald.X)
            ci, m_new, m_old, n_new, n_old = metrics.confusion_index(
                preds, evald.y, task_of_class, t, ev["ci_pooling"]
            )
            old_mask = np.array([task_of_class[int(c)] < t for c in evald.y])
            mmd = {}
            if t > 0 and fidelity != "finetune":
                rng = np.random.default_rng([train_seed, t])
                for c in sorted(c for tk in stream.tasks[:t] for c in tk.classes):
                    pseudo = bank.entries[c].sample(ev["mmd_samples"], rng)
                    mmd[c] = mmd_to_truth(pseudo, test.of_class(c), bandwidth)
            stages.append(
                metrics.StageReport(
                    task_id=t,
                    accuracy=metrics.stage_accuracy(preds, evald.y),
                    per_class_accuracy=metrics.per_class_accuracy(preds, evald.y),
                    ci=ci,
                    m_new=m_new,
                    m_old=m_old,
                    n_new=n_new,
                    n_old=n_old,
                    old_accuracy=metrics.stage_accuracy(preds[old_mask], evald.y[old_mask]) if old_mask.any() else None,
                    new_accuracy=metrics.stage_accuracy(preds[~old_mask], evald.y[~old_mask]),
                    mmd_per_old_class=mmd,
                    footprint_floats=bank.footprint(),
                    footprint_with_weights=bank.footprint(include_weights=True),
                    n_classes=len(seen),
                    components_per_class={c: bank.entries[c].n_components for c in bank.classes},
                )
            )
            log.info("stage %d: acc %.2f  C_I %.4f", t, stages[-1].accuracy, ci)
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise StageFailure(t, exc) from exc
    return RunResult(metrics.run_summary(stages), bank, clf, cfg)


def report_json(result: RunResult, raw_config: dict) -> str:
    rep = result.report
    doc = {
        "config": raw_config,
        "seeds": {"stream": result.config["stream"]["seed"], "train": result.config["train"]["seed"]},
        "rng": "numpy PCG64",
        "fidelity": result.config["memory"]["fidelity"],
        "summary": {
            "avg_accuracy": round(rep.avg_accuracy, 2),
            "last_accuracy": round(rep.last_accuracy, 2),
            "pd": round(rep.pd, 2),
            "ci_total": rep.ci_total,
            "footprint_floats": rep.stages[-1].footprint_floats,
            "mean_components": _mean_k(rep),
        },
        "stages": [_stage_dict(s) for s in rep.stages],
    }
    return json.dumps(doc, indent=2) + "\n"


def _mean_k(rep):
    ks = rep.stages[-1].components_per_class
    return round(float(np.mean(list(ks.values()))), 4) if ks else None


def _stage_dict(s: metrics.StageReport) -> dict:
    d = asdict(s)
    d["accuracy"] = round(s.accuracy, 2)
    for key in ("old_accuracy", "new_accuracy"):
        if d[key] is not None:
            d[key] = round(d[key], 2)
    d["per_class_accuracy"] = {str(k): round(v, 2) for k, v in s.per_class_accuracy.items()}
    d["mmd_per_old_class"] = {str(k): v for k, v in s.mmd_per_old_class.items()}
    d["components_per_class"] = {str(k): v for k, v in s.components_per_class.items()}
    return d


def write_outputs(result: RunResult, raw_config: dict, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "stages": out / "stages.csv",
        "bank": out / "memory.bank",
        "classifier": out / "classifier.ckpt",
    }
    paths["report"].write_text(report_json(result, raw_config), encoding="utf-8")
    paths["stages"].write_text(metrics.stages_to_csv(result.report), encoding="utf-8")
    paths["bank"].write_bytes(bank_to_bytes(result.bank))
    paths["classifier"].write_bytes(classifier_to_bytes(result.classifier))
    return paths
