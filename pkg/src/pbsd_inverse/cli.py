"""Batch command line: assess, train, explain, optimize, generate.

Every subcommand reads one YAML config, resolves relative paths against the
config's directory, writes its artifacts to an output directory and finishes
with ``manifest.json`` (input and output hashes, seed, version). Failures
print one JSON object to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .dataset import FeatureTable, load_feature_table, load_schema, save_feature_table, save_schema
from .errors import InvalidConfig, PbsdError
from .explain import ale_curve, shapley_summary
from .inverse_ga import GaConfig, problem_from_dict, run_ga
from .model_selection import write_json
from .pbe import assess_building, fit_cloud_model, load_hazard_curve, load_loss_model, load_response_pairs
from .pipeline import TrainSettings, derive_seed, train_pipeline
from .svr import load_model, save_model

EXIT_ERROR = 2


@dataclass
class PipelineConfig:
    base: Path
    raw: dict
    seed: int = 0
    out: Path = Path("out")
    schema: Optional[Path] = None
    data: Optional[Path] = None
    inputs: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, seed: Optional[int] = None, out: Optional[str] = None) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise InvalidConfig(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be a mapping")
        cfg = cls(path.parent, raw)
        cfg.seed = int(seed if seed is not None else raw.get("seed", 0))
        cfg.out = Path(out) if out is not None else cfg.resolve(raw.get("out", "out"))
        cfg.schema = cfg.resolve(raw["schema"]) if raw.get("schema") else None
        cfg.data = cfg.resolve(raw["data"]) if raw.get("data") else None
        return cfg

    def resolve(self, value) -> Path:
        p = Path(str(value))
        return p if p.is_absolute() else self.base / p

    def section(self, name: str) -> dict:
        sec = self.raw.get(name) or {}
        if not isinstance(sec, dict):
            raise InvalidConfig(f"section {name!r} must be a mapping")
        return sec

    def input(self, key: str, value) -> Path:
        """Resolve an input path, check it exists and record it for the manifest."""
        if value is None:
            raise InvalidConfig(f"missing input path {key!r}")
        path = self.resolve(value)
        if not path.is_file():
            raise InvalidConfig(f"input {key!r} not found: {path}")
        self.inputs[key] = path
        return path


class _Stage:
    """Tracks the file being processed so errors can name it."""

    def __init__(self, name: str):
        self.name = name
        self.file: Optional[Path] = None

    @contextlib.contextmanager
    def reading(self, path):
        prev, self.file = self.file, Path(path)
        yield
        self.file = prev


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(cfg: PipelineConfig, command: str, outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "inputs": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in sorted(cfg.inputs.items())},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    write_json(manifest, cfg.out / "manifest.json")


def _load_table(cfg: PipelineConfig, stage: _Stage, key: str = "data", value=None) -> FeatureTable:
    schema_path = cfg.input("schema", cfg.raw.get("schema"))
    with stage.reading(schema_path):
        schema = load_schema(schema_path)
    data_path = cfg.input(key, value if value is not None else cfg.raw.get("data"))
    with stage.reading(data_path):
        return load_feature_table(data_path, schema)


def _model_path(cfg: PipelineConfig, sec: dict) -> Path:
    if sec.get("model"):
        return cfg.input("model", sec["model"])
    return cfg.input("model", cfg.out / "model.json")


def cmd_assess(cfg: PipelineConfig, stage: _Stage) -> list[Path]:
    sec = cfg.section("assess")
    table = _load_table(cfg, stage)
    if table.ids is None:
        raise InvalidConfig("assess needs a building_id column in the feature table")
    hazard_path = cfg.input("hazard", sec.get("hazard"))
    with stage.reading(hazard_path):
        hazard = load_hazard_curve(hazard_path)
    loss_path = cfg.input("loss_model", sec.get("loss_model"))
    with stage.reading(loss_path):
        model, _ = load_loss_model(loss_path)
    responses: dict[str, dict] = {}
    for kind, rel in sorted((sec.get("responses") or {}).items()):
        path = cfg.input(f"responses.{kind}", rel)
        with stage.reading(path):
            responses[kind] = load_response_pairs(path)
    if not responses:
        raise InvalidConfig("assess.responses must map EDP kinds to CSV files")
    n_nodes = int(sec.get("n_nodes", 512))

    eal = np.empty(table.n)
    log = []
    for i, bid in enumerate(table.ids):
        per_kind = {}
        for kind, grouped in responses.items():
            if bid not in grouped:
                raise InvalidConfig(f"no {kind} responses for building {bid!r}")
            per_kind[kind] = grouped[bid]
        with stage.reading(cfg.inputs[f"responses.{sorted(per_kind)[0]}"]):
            eal[i] = assess_building(model, per_kind, hazard, n_nodes)
        fits = {k: fit_cloud_model(v, k) for k, v in per_kind.items()}
        log.append({
            "building_id": bid,
            "demand_models": {k: {"ln_a": d.ln_a, "b": d.b, "sigma_ln": d.sigma_ln, "n_pairs": len(per_kind[k])}
                              for k, d in sorted(fits.items())},
            "EAL": float(eal[i]),
        })
    out_csv = cfg.out / "assessed.csv"
    save_feature_table(table.with_target(eal), out_csv)
    out_log = cfg.out / "assess_log.json"
    write_json({"n_nodes": n_nodes, "buildings": log}, out_log)
    return [out_csv, out_log]


def cmd_train(cfg: PipelineConfig, stage: _Stage) -> list[Path]:
    from .plots import parity_plot

    table = _load_table(cfg, stage)
    if table.target is None:
        raise InvalidConfig("train needs an EAL column in the feature table")
    settings = TrainSettings.from_dict(cfg.section("train"))
    result = train_pipeline(table, settings, cfg.seed)

    paths = {name: cfg.out / name for name in
             ("model.json", "metrics.json", "tuning.json", "ranking.json", "parity.svg")}
    save_model(result.model, paths["model.json"])
    write_json(result.metrics_dict(), paths["metrics.json"])
    write_json({
        "preliminary": None if result.prelim_tuning is None else result.prelim_tuning.to_dict(),
        "final": None if result.tuning is None else result.tuning.to_dict(),
    }, paths["tuning.json"])
    write_json(None if result.ranking is None else result.ranking.to_dict(), paths["ranking.json"])
    parity_plot(result.test.target, result.model.predict(result.test), paths["parity.svg"])
    return list(paths.values())


def cmd_explain(cfg: PipelineConfig, stage: _Stage) -> list[Path]:
    from .plots import ale_plot, shapley_bar

    sec = cfg.section("explain")
    model_path = _model_path(cfg, sec)
    with stage.reading(model_path):
        model = load_model(model_path)
    table = _load_table(cfg, stage).select(model.feature_names)
    rng = np.random.default_rng(derive_seed(cfg.seed, "explain"))
    n_bg = min(int(sec.get("n_background", 100)), table.n)
    n_inst = min(int(sec.get("n_instances", 50)), table.n)
    background = table.rows[np.sort(rng.choice(table.n, n_bg, replace=False))]
    instances = table.rows[np.sort(rng.choice(table.n, n_inst, replace=False))]
    summary = shapley_summary(model.predict, instances, background, model.feature_names,
                              exact_limit=int(sec.get("exact_limit", 10)),
                              n_permutations=int(sec.get("n_permutations", 500)),
                              seed=derive_seed(cfg.seed, "shapley"))
    outputs = [cfg.out / "shapley_summary.json", cfg.out / "shapley_summary.svg"]
    write_json({"features": [{"name": n, "mean_abs_contribution": v} for n, v in summary],
                "n_instances": n_inst, "n_background": n_bg}, outputs[0])
    shapley_bar(summary, outputs[1])

    n_bins = int(sec.get("n_bins", 20))
    for j, name in enumerate(model.feature_names):
        curve = ale_curve(model.predict, table, j, n_bins)
        csv_path = cfg.out / f"ale_{name}.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([name, "ale", "count_in_bin_ending_here"])
            counts = np.concatenate([[0], curve.counts])
            for x, e, c in zip(curve.bin_edges, curve.centered_effect, counts):
                w.writerow([repr(float(x)), repr(float(e)), int(c)])
        svg_path = cfg.out / f"ale_{name}.svg"
        ale_plot(curve.bin_edges, curve.centered_effect, table.column(name), name, svg_path)
        outputs += [csv_path, svg_path]
    return outputs


def cmd_optimize(cfg: PipelineConfig, stage: _Stage) -> list[Path]:
    from .plots import convergence_plot

    sec = cfg.section("optimize")
    model_path = _model_path(cfg, sec)
    with stage.reading(model_path):
        model = load_model(model_path)
    table = None
    if cfg.raw.get("data") and cfg.raw.get("schema"):
        table = _load_table(cfg, stage).select(model.feature_names)
    problem = sec.get("problem") or {}
    if "file" in problem:
        ppath = cfg.input("problem", problem["file"])
        with stage.reading(ppath):
            problem = yaml.safe_load(ppath.read_text(encoding="utf-8")) or {}
    spec = problem_from_dict(model.schema, problem, table)
    ga_cfg = dict(sec.get("ga") or {})
    ga_cfg.setdefault("seed", derive_seed(cfg.seed, "optimize"))
    run = run_ga(spec, model.predict, GaConfig.from_dict(ga_cfg))
    report, plot = cfg.out / "ga_report.json", cfg.out / "convergence.svg"
    write_json(run.to_dict(), report)
    convergence_plot(run.history, plot)
    return [report, plot]


def cmd_generate(cfg: PipelineConfig, stage: _Stage) -> list[Path]:
    from .synthetic import PRESETS, GeneratorSpec, GroundTruth, generate

    sec = cfg.section("generate")
    preset = str(sec.get("preset", "rc"))
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    schema_fn, truth_fn = PRESETS[preset]
    if sec.get("schema"):  # top-level schema names the output consumed by later stages
        path = cfg.input("schema", sec["schema"])
        with stage.reading(path):
            schema = load_schema(path)
    else:
        schema = schema_fn()
    truth = GroundTruth.from_dict(sec["ground_truth"]) if sec.get("ground_truth") else truth_fn()
    spec = GeneratorSpec(schema, int(sec.get("n_buildings", 720)), truth,
                         float(sec.get("noise_stddev", 0.15)), derive_seed(cfg.seed, "generate"))
    table = generate(spec)
    paths = [cfg.out / "buildings.csv", cfg.out / "schema.yaml", cfg.out / "ground_truth.json"]
    save_feature_table(table, paths[0])
    save_schema(schema, paths[1])
    write_json(truth.to_dict(), paths[2])
    return paths


COMMANDS = {
    "assess": (cmd_assess, "run the loss chain and append EAL to the feature table"),
    "train": (cmd_train, "feature selection, tuning and SVR fit"),
    "explain": (cmd_explain, "Shapley summary and ALE curves for a trained model"),
    "optimize": (cmd_optimize, "genetic search for the design minimizing predicted EAL"),
    "generate": (cmd_generate, "synthetic building inventory with known EAL"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbsd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML pipeline config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    return parser


def _error_payload(exc: BaseException, stage: _Stage) -> dict:
    payload = {
        "error": type(exc).__name__,
        "stage": stage.name,
        "message": str(exc),
        "file": str(getattr(exc, "path", None) or stage.file or "") or None,
    }
    for attr in ("row", "column", "feature", "name"):
        if hasattr(exc, attr):
            value = getattr(exc, attr)
            payload[attr] = value if isinstance(value, (int, str)) else str(value)
    return payload


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = _Stage(args.command)
    try:
        with stage.reading(args.config):
            cfg = PipelineConfig.load(args.config, args.seed, args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command][0](cfg, stage)
        _write_manifest(cfg, args.command, outputs)
    except (PbsdError, OSError, ValueError, KeyError, yaml.YAMLError) as exc:
        sys.stderr.write(json.dumps(_error_payload(exc, stage), sort_keys=True) + "\n")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
