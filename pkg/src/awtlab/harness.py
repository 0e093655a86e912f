"""Experiment orchestration: strict config parsing, the train/attack/score
pipeline, and report emission (JSON + flat CSVs + rendered figures).

Stage seeds derive from (global_seed, stage name, stable entity key), so
adding a method or a target to a config never shifts the random streams of
the entities that were already there.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, METHODS, run_attack
from .errors import ConfigError
from .glyphs import Dataset, gen_glyphs
from .metrics import (
    TransferReport,
    attack_success_rate,
    empirical_transfer_gap,
    grad_norm_profile,
    pearson,
    per_sample_transfer_score,
    spearman,
    transfer_score,
)
from .nn import Model, input_grad, model_hash
from .seeding import derive_seed
from .zoo import (
    ARCH_TAGS,
    TrainConfig,
    build_model,
    load_checkpoint,
    prediction_disagreement,
    train_model,
)

DEFAULT_EPS_LIST = (0.001, 0.01, 0.1)
# per-sample scatter pairs carry the most signal at a coarser noise scale
# than the score curve's sweep, so it gets its own default
DEFAULT_SCATTER_EPS = 0.25
MIN_DISAGREEMENT = 0.01
MAX_SEED_REDRAWS = 3

_METHOD_OVERRIDES = (
    "eps",
    "steps",
    "alpha",
    "mu",
    "n_samples",
    "zeta",
    "omega",
    "beta",
    "lr",
)


@dataclass(frozen=True)
class DatasetSpec:
    seed: int
    n_train: int
    n_test: int


@dataclass(frozen=True)
class PopulationEntry:
    role: str
    arch: str = ""
    train_seed: int = 0
    checkpoint: str | None = None

    @property
    def label(self) -> str:
        if self.checkpoint:
            return Path(self.checkpoint).stem
        return f"{self.arch}#s{self.train_seed}"


@dataclass(frozen=True)
class MethodSpec:
    method: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MetricSpec:
    eps_list: tuple[float, ...] = DEFAULT_EPS_LIST
    n_eta: int = 10
    seed: int = 0
    scatter_eps: float = DEFAULT_SCATTER_EPS


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    population: tuple[PopulationEntry, ...]
    methods: tuple[MethodSpec, ...]
    metric: MetricSpec
    eval_samples: int
    output_dir: str
    global_seed: int
    train: TrainConfig = TrainConfig()

    @property
    def surrogates(self) -> tuple[PopulationEntry, ...]:
        return tuple(e for e in self.population if e.role == "surrogate")

    @property
    def targets(self) -> tuple[PopulationEntry, ...]:
        return tuple(e for e in self.population if e.role == "target")


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _int(obj, key, where) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    return v


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; unknown keys anywhere are errors."""
    _require_keys(
        doc,
        allowed={
            "dataset",
            "population",
            "methods",
            "metric",
            "eval_samples",
            "output_dir",
            "global_seed",
            "train",
        },
        required={"dataset", "population", "methods", "eval_samples", "output_dir", "global_seed"},
        where="config",
    )

    ds = doc["dataset"]
    _require_keys(ds, {"seed", "n_train", "n_test"}, {"seed", "n_train", "n_test"}, "dataset")
    dataset = DatasetSpec(
        seed=_int(ds, "seed", "dataset"),
        n_train=_int(ds, "n_train", "dataset"),
        n_test=_int(ds, "n_test", "dataset"),
    )
    if dataset.n_train < 4 or dataset.n_test < 4:
        raise ConfigError("dataset: n_train and n_test must be at least 4")

    if not isinstance(doc["population"], list) or not doc["population"]:
        raise ConfigError("population: expected a non-empty list")
    entries = []
    for i, item in enumerate(doc["population"]):
        where = f"population[{i}]"
        _require_keys(item, {"arch", "train_seed", "role", "checkpoint"}, {"role"}, where)
        role = item["role"]
        if role not in ("surrogate", "target"):
            raise ConfigError(f"{where}.role: expected surrogate or target, got {role!r}")
        if "checkpoint" in item:
            if "arch" in item or "train_seed" in item:
                raise ConfigError(f"{where}: checkpoint excludes arch/train_seed")
            entries.append(PopulationEntry(role=role, checkpoint=str(item["checkpoint"])))
        else:
            _require_keys(item, {"arch", "train_seed", "role"}, {"arch", "train_seed"}, where)
            if item["arch"] not in ARCH_TAGS:
                raise ConfigError(f"{where}.arch: unknown architecture {item['arch']!r}")
            entries.append(
                PopulationEntry(
                    role=role, arch=item["arch"], train_seed=_int(item, "train_seed", where)
                )
            )
    population = tuple(entries)
    labels = [e.label for e in population]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"population: duplicate entries {labels}")
    if not any(e.role == "surrogate" for e in population):
        raise ConfigError("population: need at least one surrogate")
    if not any(e.role == "target" for e in population):
        raise ConfigError("population: need at least one target")

    if not isinstance(doc["methods"], list) or not doc["methods"]:
        raise ConfigError("methods: expected a non-empty list")
    methods = []
    for i, item in enumerate(doc["methods"]):
        where = f"methods[{i}]"
        _require_keys(item, {"method", *_METHOD_OVERRIDES}, {"method"}, where)
        if item["method"] not in METHODS:
            raise ConfigError(f"{where}.method: unknown method {item['method']!r}")
        overrides = {k: item[k] for k in _METHOD_OVERRIDES if k in item}
        methods.append(MethodSpec(method=item["method"], overrides=overrides))
    if len({m.method for m in methods}) != len(methods):
        raise ConfigError("methods: duplicate method tags")

    metric = MetricSpec()
    if "metric" in doc:
        mt = doc["metric"]
        _require_keys(mt, {"eps_list", "n_eta", "seed", "scatter_eps"}, set(), "metric")
        eps_list = tuple(float(e) for e in mt.get("eps_list", DEFAULT_EPS_LIST))
        if not eps_list or any(e < 0 for e in eps_list):
            raise ConfigError("metric.eps_list: expected non-negative scales")
        metric = MetricSpec(
            eps_list=eps_list,
            n_eta=int(mt.get("n_eta", 10)),
            seed=int(mt.get("seed", 0)),
            scatter_eps=float(mt.get("scatter_eps", DEFAULT_SCATTER_EPS)),
        )
        if metric.n_eta < 1:
            raise ConfigError("metric.n_eta: must be >= 1")

    train = TrainConfig()
    if "train" in doc:
        tr = doc["train"]
        _require_keys(tr, {"epochs", "batch", "lr", "momentum"}, set(), "train")
        try:
            train = TrainConfig(
                epochs=int(tr.get("epochs", train.epochs)),
                batch=int(tr.get("batch", train.batch)),
                lr=float(tr.get("lr", train.lr)),
                momentum=float(tr.get("momentum", train.momentum)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"train: {e}") from e

    eval_samples = _int(doc, "eval_samples", "config")
    if eval_samples < 1:
        raise ConfigError("eval_samples: must be >= 1")
    if eval_samples > dataset.n_test:
        raise ConfigError(
            f"eval_samples ({eval_samples}) exceeds dataset.n_test ({dataset.n_test})"
        )

    return ExperimentConfig(
        dataset=dataset,
        population=population,
        methods=tuple(methods),
        metric=metric,
        eval_samples=eval_samples,
        output_dir=str(doc["output_dir"]),
        global_seed=_int(doc, "global_seed", "config"),
        train=train,
    )


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return parse_config(doc)


def _train_population(cfg: ExperimentConfig, train: Dataset, test: Dataset):
    """Train (or load) every population entry; retrain on degenerate twins.

    Same-architecture models must disagree on at least 1% of test points
    and have distinct content hashes; a violating entry is retrained with a
    derived replacement seed (bounded retries).
    """
    out: list[tuple[PopulationEntry, Model, dict]] = []
    for entry in cfg.population:
        if entry.checkpoint:
            ckpt = load_checkpoint(entry.checkpoint)
            model = ckpt.to_model()
            meta = dict(ckpt.meta)
            out.append((entry, model, meta))
            continue
        seed = entry.train_seed
        for attempt in range(MAX_SEED_REDRAWS + 1):
            model0 = build_model(entry.arch, seed)
            model, metrics = train_model(model0, train, replace(cfg.train, seed=seed), test)
            clash = False
            for prev_entry, prev_model, _ in out:
                if prev_model.arch_tag != model.arch_tag:
                    continue
                if (
                    model_hash(prev_model) == model_hash(model)
                    or prediction_disagreement(prev_model, model, test.images) < MIN_DISAGREEMENT
                ):
                    clash = True
                    break
            if not clash:
                break
            seed = derive_seed(entry.train_seed, "redraw", attempt)
            warnings.warn(
                f"{entry.label}: degenerate twin of an existing model, retrying with seed {seed}"
            )
        meta = {
            "seed": seed,
            "epochs": cfg.train.epochs,
            "lr": cfg.train.lr,
            "final_train_acc": metrics.final_train_acc,
            "final_test_acc": metrics.final_test_acc,
            "dataset_seed": cfg.dataset.seed,
            "content_hash": model_hash(model),
        }
        out.append((entry, model, meta))
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> TransferReport:
    """Full pipeline: data, population, attacks, scores, correlations, report."""
    train, test = gen_glyphs(cfg.dataset.seed, cfg.dataset.n_train, cfg.dataset.n_test)
    population = _train_population(cfg, train, test)

    eval_x = test.images[: cfg.eval_samples]
    eval_y = test.labels[: cfg.eval_samples]

    model_rows = []
    for entry, model, meta in population:
        model_rows.append(
            {
                "label": entry.label,
                "role": entry.role,
                "arch": model.arch_tag,
                "train_seed": entry.train_seed if not entry.checkpoint else None,
                "content_hash": model_hash(model),
                "final_test_acc": meta.get("final_test_acc"),
            }
        )

    surrogates = [(e, m) for e, m, _ in population if e.role == "surrogate"]
    targets = [(e, m) for e, m, _ in population if e.role == "target"]

    asr_rows, score_rows, flat_rows, scatter_rows, corr_rows = [], [], [], [], []

    for s_entry, s_model in surrogates:
        batches = {}
        # one attack stream per surrogate, shared by every method: paired
        # comparison under common random numbers, so method deltas measure
        # the algorithms and not independent draw noise
        for spec in cfg.methods:
            acfg = AttackConfig(
                method=spec.method,
                rng_seed=derive_seed(cfg.global_seed, "attack", s_entry.label),
                **spec.overrides,
            )
            batch = run_attack(spec.method, s_model, eval_x, eval_y, acfg)
            batches[spec.method] = batch

            for t_entry, t_model in targets:
                asr_rows.append(
                    {
                        "surrogate": s_entry.label,
                        "target": t_entry.label,
                        "method": spec.method,
                        "asr": attack_success_rate(t_model, batch),
                    }
                )

            eta_seed = derive_seed(cfg.metric.seed, "metric", s_entry.label)
            for eps in cfg.metric.eps_list:
                score_rows.append(
                    {
                        "surrogate": s_entry.label,
                        "method": spec.method,
                        "eps": eps,
                        "score": transfer_score(
                            batch, s_model, eps, cfg.metric.n_eta, eta_seed
                        ),
                    }
                )

            # flatness: per-sample input-gradient norms at the final point
            g = input_grad(s_model, batch.x_adv, batch.labels, reduction="sum")
            norms = np.sqrt((g * g).sum(axis=tuple(range(1, g.ndim))))
            flat_rows.append(
                {
                    "surrogate": s_entry.label,
                    "method": spec.method,
                    "mean_grad_norm": float(norms.mean()),
                }
            )

        # per-sample metric-vs-gap pairs on the first target, mixed methods
        if targets:
            t_entry, t_model = targets[0]
            xs, ys = [], []
            eta_seed = derive_seed(cfg.metric.seed, "metric", s_entry.label)
            for method, batch in batches.items():
                contrib = per_sample_transfer_score(
                    batch, s_model, cfg.metric.scatter_eps, cfg.metric.n_eta, eta_seed
                )
                gap = empirical_transfer_gap(t_model, batch)
                for i in range(len(batch)):
                    scatter_rows.append(
                        {
                            "surrogate": s_entry.label,
                            "target": t_entry.label,
                            "method": method,
                            "sample": i,
                            "score": float(contrib[i]),
                            "gap": float(gap[i]),
                        }
                    )
                xs.append(contrib)
                ys.append(gap)
            xs = np.concatenate(xs)
            ys = np.concatenate(ys)
            corr_rows.append(
                {
                    "analysis": "metric_vs_gap",
                    "surrogate": s_entry.label,
                    "target": t_entry.label,
                    "pearson": pearson(xs, ys),
                    "spearman": spearman(xs, ys),
                    "n": int(xs.size),
                }
            )

    for entry, model, _ in population:
        profile = grad_norm_profile(model, test, max_samples=min(cfg.eval_samples, 200))
        corr_rows.append(
            {
                "analysis": "gradnorm",
                "model": entry.label,
                "pearson": pearson(profile.raw[:, 0], profile.raw[:, 1]),
                "spearman": spearman(profile.raw[:, 0], profile.raw[:, 1]),
                "n": int(profile.raw.shape[0]),
            }
        )

    report = TransferReport(
        config=_config_snapshot(cfg),
        models=tuple(model_rows),
        asr=tuple(asr_rows),
        transfer_scores=tuple(score_rows),
        flatness=tuple(flat_rows),
        correlations=tuple(corr_rows),
        scatter=tuple(scatter_rows),
    )
    if write:
        emit_report(report, cfg.output_dir)
    return report


def _config_snapshot(cfg: ExperimentConfig) -> dict:
    return {
        "dataset": {"seed": cfg.dataset.seed, "n_train": cfg.dataset.n_train, "n_test": cfg.dataset.n_test},
        "population": [
            {
                "role": e.role,
                **({"checkpoint": e.checkpoint} if e.checkpoint else {"arch": e.arch, "train_seed": e.train_seed}),
            }
            for e in cfg.population
        ],
        "methods": [{"method": m.method, **m.overrides} for m in cfg.methods],
        "metric": {
            "eps_list": list(cfg.metric.eps_list),
            "n_eta": cfg.metric.n_eta,
            "seed": cfg.metric.seed,
            "scatter_eps": cfg.metric.scatter_eps,
        },
        "train": {
            "epochs": cfg.train.epochs,
            "batch": cfg.train.batch,
            "lr": cfg.train.lr,
            "momentum": cfg.train.momentum,
        },
        "eval_samples": cfg.eval_samples,
        "output_dir": cfg.output_dir,
        "global_seed": cfg.global_seed,
    }


def _write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def emit_report(report: TransferReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write report.json, the flat CSVs, and (by default) PNG figures.

    report.json is serialized with sorted keys so identical reports are
    byte-identical on disk.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["report.json"] = out / "report.json"
    paths["report.json"].write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )

    _write_csv(
        out / "asr.csv",
        ["surrogate", "target", "method", "asr"],
        ([r["surrogate"], r["target"], r["method"], r["asr"]] for r in report.asr),
    )
    _write_csv(
        out / "metric.csv",
        ["surrogate", "method", "eps", "score"],
        ([r["surrogate"], r["method"], r["eps"], r["score"]] for r in report.transfer_scores),
    )
    _write_csv(
        out / "correlations.csv",
        ["analysis", "subject", "target", "pearson", "spearman", "n"],
        (
            [
                r["analysis"],
                r.get("surrogate") or r.get("model") or "",
                r.get("target", ""),
                r["pearson"],
                r["spearman"],
                r["n"],
            ]
            for r in report.correlations
        ),
    )
    _write_csv(
        out / "flatness.csv",
        ["surrogate", "method", "mean_grad_norm"],
        ([r["surrogate"], r["method"], r["mean_grad_norm"]] for r in report.flatness),
    )
    _write_csv(
        out / "scatter.csv",
        ["surrogate", "target", "method", "sample", "score", "gap"],
        (
            [r["surrogate"], r["target"], r["method"], r["sample"], r["score"], r["gap"]]
            for r in report.scatter
        ),
    )
    _write_csv(
        out / "report.csv",
        ["surrogate", "target", "method", "metric", "value"],
        report.flat_rows(),
    )
    for name in ("asr.csv", "metric.csv", "correlations.csv", "flatness.csv", "scatter.csv", "report.csv"):
        paths[name] = out / name

    if figures:
        from . import figures as figmod

        figdir = out / "figures"
        figdir.mkdir(exist_ok=True)
        if report.asr:
            paths["asr.png"] = figmod.render_asr_figure(report, figdir / "asr.png")
        if report.transfer_scores:
            paths["metric.png"] = figmod.render_metric_figure(report, figdir / "metric.png")
        if report.scatter:
            paths["scatter.png"] = figmod.render_scatter_figure(report, figdir / "scatter.png")
        if report.flatness:
            paths["flatness.png"] = figmod.render_flatness_figure(report, figdir / "flatness.png")
    return paths
