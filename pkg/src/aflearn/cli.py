"""Command-line front end: reproducible training runs, evaluation, bounds.

Configuration lives in one TOML file (documented in the README); command-line
flags override file values. Every artifact a run writes embeds the config
hash and the seed, and a (config, seed) pair fully determines the outputs.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from aflearn import bounds as bounds_mod
from aflearn import data as data_mod
from aflearn import evaluation as eval_mod
from aflearn import oracle as oracle_mod
from aflearn.model import LOSS_CAP, ModelParams, load_model, save_model
from aflearn.objective import FiniteHull, FullSimplex, LambdaDomain, agnostic_loss
from aflearn.optimizer import (
    DivergenceError,
    TrainConfig,
    TrainResult,
    optimistic_afl,
    single_domain_baseline,
    stochastic_afl,
    uniform_baseline,
)
from aflearn.projection import project_simplex


class ConfigError(ValueError):
    """Configuration file or flag problem (exit code 2)."""


def _load_toml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _config_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------


def _schema_from_config(section: dict, base_dir: Path) -> data_mod.CsvSchema:
    categorical = {}
    for col, vocab in section.get("categorical", {}).items():
        if isinstance(vocab, str):
            categorical[col] = data_mod.read_vocabulary(base_dir / vocab)
        else:
            categorical[col] = list(vocab)
    split = section.get("domain_split")
    try:
        return data_mod.CsvSchema(
            numeric_features=list(section.get("numeric_features", [])),
            categorical_features=categorical,
            label_column=section.get("label_column", "label"),
            label_values=section.get("label_values"),
            domain_column=section.get("domain_column"),
            domain_split=tuple(split) if split is not None else None,
            delimiter=section.get("delimiter", ","),
            unknown_category=section.get("unknown_category", "error"),
        )
    except (data_mod.SchemaError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad [dataset.schema]: {exc}") from exc


def _dataset_from_config(cfg: dict, base_dir: Path) -> data_mod.FederatedDataset:
    section = cfg.get("dataset")
    if not section:
        raise ConfigError("config needs a [dataset] section")
    kind = section.get("kind")
    if kind == "csv":
        if "path" not in section:
            raise ConfigError("[dataset] kind='csv' needs a path")
        schema = _schema_from_config(section.get("schema", {}), base_dir)
        path = base_dir / section["path"]
        if not path.exists():
            raise ConfigError(f"dataset file not found: {path}")
        return data_mod.load_csv(path, schema)
    if kind == "pointmass_pair":
        return data_mod.synth_pointmass_pair(int(section.get("n_per_domain", 4)))
    if kind == "gaussian":
        specs = [
            data_mod.GaussianDomainSpec(
                name=d["name"],
                count=int(d["count"]),
                mean=d["mean"],
                cov_scale=float(d["cov_scale"]),
                class_offsets=d["class_offsets"],
            )
            for d in section.get("domains", [])
        ]
        if not specs:
            raise ConfigError("[dataset] kind='gaussian' needs [[dataset.domains]] entries")
        return data_mod.synth_gaussian_domains(specs, seed=int(section.get("seed", 0)))
    raise ConfigError(f"unknown dataset kind {kind!r} (csv | pointmass_pair | gaussian)")


def _lambda_domain_from_config(cfg: dict) -> LambdaDomain | None:
    section = cfg.get("lambda_domain")
    if not section or section.get("kind", "simplex") == "simplex":
        return None
    if section["kind"] == "hull":
        try:
            return FiniteHull(np.asarray(section["vertices"], dtype=np.float64))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad [lambda_domain]: {exc}") from exc
    raise ConfigError(f"unknown lambda_domain kind {section['kind']!r}")


def _train_config_from_config(cfg: dict, args: argparse.Namespace, lambda_domain) -> TrainConfig:
    section = dict(cfg.get("optimizer", {}))
    model_section = cfg.get("model", {})
    try:
        config = TrainConfig(
            steps=int(section.get("steps", 1000)),
            step_w=section.get("step_w", "auto"),
            step_lambda=section.get("step_lambda", "auto"),
            sampler=section.get("sampler", "perdomain"),
            batch_size=int(section.get("batch_size", 1)),
            norm_penalty=float(section.get("norm_penalty", 0.0)),
            chi2_penalty=float(section.get("chi2_penalty", 0.0)),
            r_w=float(model_section.get("r_w", 10.0)),
            lambda_domain=lambda_domain,
            seed=int(section.get("seed", 0)),
            pilot_draws=int(section.get("pilot_draws", 200)),
            log_interval=int(section.get("log_interval", 0)),
            update_rule=section.get("update_rule", "sgd"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [optimizer]/[model] settings: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        config = replace(config, steps=args.steps)
    return config


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _run_mode(mode: str, config: TrainConfig, train_set) -> TrainResult:
    if mode == "afl":
        return stochastic_afl(config, train_set)
    if mode == "optimistic":
        return optimistic_afl(config, train_set)
    if mode == "uniform":
        return uniform_baseline(config, train_set)
    if mode.startswith("domain-"):
        return single_domain_baseline(config, train_set, int(mode.split("-", 1)[1]))
    raise ConfigError(f"unknown mode {mode!r}")


def _result_params(mode: str, result: TrainResult) -> ModelParams:
    return result.w_final if mode == "optimistic" else result.w_avg


def _write_trajectory(path: Path, meta: dict, result: TrainResult) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "meta", **meta}) + "\n")
        for rec in result.trajectory:
            fh.write(
                json.dumps(
                    {
                        "type": "step",
                        "t": rec.t,
                        "mixture_loss": rec.mixture_loss,
                        "agnostic_loss": rec.agnostic_loss,
                        "lambda": list(rec.lam),
                        "grad_norms": [rec.grad_norm_w, rec.grad_norm_lambda],
                        "step_sizes": [result.step_w, result.step_lambda],
                    }
                )
                + "\n"
            )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_toml(args.config)
    base_dir = Path(args.config).resolve().parent
    chash = _config_hash(args.config)
    dataset = _dataset_from_config(cfg, base_dir)
    lambda_domain = _lambda_domain_from_config(cfg)
    config = _train_config_from_config(cfg, args, lambda_domain)

    test_fraction = float(cfg.get("dataset", {}).get("test_fraction", 0.0))
    if test_fraction > 0:
        train_set, test_set = data_mod.split_train_test(
            dataset, test_fraction, int(cfg.get("dataset", {}).get("split_seed", 0))
        )
    else:
        train_set = test_set = dataset

    mode = args.mode
    if mode == "all":
        modes = [f"domain-{k}" for k in range(train_set.p)] + ["uniform", "afl"]
    else:
        modes = [mode]

    eval_weights = cfg.get("eval", {}).get("weights", "test")
    weights_arg = train_set.proportions if eval_weights == "train" else "test"

    out_dir = Path(args.out) if args.out else Path(cfg.get("output", {}).get("dir", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)

    n_seeds = max(1, args.seeds)
    table: dict[str, object] = {}
    summary: dict[str, object] = {"config_hash": chash, "base_seed": config.seed, "modes": {}}
    for mode_name in modes:
        per_seed = []
        for offset in range(n_seeds):
            run_cfg = replace(config, seed=config.seed + offset)
            result = _run_mode(mode_name, run_cfg, train_set)
            params = _result_params(mode_name, result)
            metrics = eval_mod.evaluate(params, test_set, weights=weights_arg)
            per_seed.append((run_cfg.seed, result, metrics))
            tag = f"{mode_name}_seed{run_cfg.seed}"
            meta = {
                "config_hash": chash,
                "seed": run_cfg.seed,
                "mode": mode_name,
                "steps": run_cfg.steps,
                "step_w": result.step_w,
                "step_lambda": result.step_lambda,
            }
            _write_trajectory(out_dir / f"{tag}.jsonl", meta, result)
            save_model(params, out_dir / f"{tag}.model", config_hash=chash, seed=run_cfg.seed)
        metrics_list = [m for (_, _, m) in per_seed]
        if n_seeds > 1:
            table[_row_name(mode_name, train_set)] = eval_mod.aggregate_metrics(metrics_list)
        else:
            table[_row_name(mode_name, train_set)] = metrics_list[0]
        last = per_seed[-1]
        agn, _ = agnostic_loss(_result_params(mode_name, last[1]), _full_domain(lambda_domain, train_set), train_set)
        summary["modes"][mode_name] = {
            "seeds": [s for (s, _, _) in per_seed],
            "worst_accuracy_mean": float(np.mean([m.worst_accuracy for m in metrics_list])),
            "uniform_accuracy_mean": float(np.mean([m.uniform_accuracy for m in metrics_list])),
            "train_agnostic_loss_last_seed": agn,
            "wall_clock_sec": float(np.sum([r.wall_clock_sec for (_, r, _) in per_seed])),
        }

    text, csv_text = eval_mod.render_table(table)
    (out_dir / "table.txt").write_text(f"# config_hash={chash} base_seed={config.seed}\n{text}", encoding="utf-8")
    (out_dir / "table.csv").write_text(f"# config_hash={chash} base_seed={config.seed}\n{csv_text}", encoding="utf-8")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _full_domain(lambda_domain, dataset):
    return lambda_domain if lambda_domain is not None else FullSimplex(dataset.p)


def _row_name(mode: str, dataset) -> str:
    if mode.startswith("domain-"):
        return f"L_{dataset.domain_names[int(mode.split('-', 1)[1])]}"
    return {"uniform": "L_uniform", "afl": "L_worst_case", "optimistic": "L_worst_case_opt"}[mode]


# ---------------------------------------------------------------------------
# eval / bound / synth / project / oracle
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_toml(args.config)
    base_dir = Path(args.config).resolve().parent
    params = load_model(args.model)
    dataset = _dataset_from_config(cfg, base_dir)
    if args.protected:
        section = dict(cfg.get("dataset", {}).get("schema", {}))
        section["domain_column"] = args.protected
        section.pop("domain_split", None)
        schema = _schema_from_config(section, base_dir)
        dataset = data_mod.load_csv(base_dir / cfg["dataset"]["path"], schema)
        report = eval_mod.fairness_report(params, dataset)
        sys.stdout.write("protected_class,loss\n")
        for name, loss in zip(report.class_names, report.class_losses):
            sys.stdout.write(f"{name},{loss:.6f}\n")
        sys.stdout.write(
            f"worst_class={report.class_names[report.worst_class]} "
            f"worst_loss={report.worst_loss:.6f} gap={report.gap_to_best:.6f}\n"
        )
        return 0
    metrics = eval_mod.evaluate(params, dataset)
    text, _ = eval_mod.render_table({"model": metrics})
    sys.stdout.write(text)
    return 0


def cmd_bound(args: argparse.Namespace) -> int:
    cfg = _load_toml(args.config)
    base_dir = Path(args.config).resolve().parent
    section = cfg.get("bounds")
    if not section:
        raise ConfigError("config needs a [bounds] section")
    if "sizes" in section:
        sizes = np.asarray(section["sizes"], dtype=np.int64)
    else:
        sizes = _dataset_from_config(cfg, base_dir).sizes
    lambda_domain = _lambda_domain_from_config(cfg) or FullSimplex(sizes.size)
    try:
        inputs = bounds_mod.BoundInputs(
            sizes=sizes,
            lambda_domain=lambda_domain,
            loss_bound=float(section.get("loss_bound", LOSS_CAP)),
            confidence=float(section.get("confidence", 0.05)),
            cover_radius=float(section.get("cover_radius", 1.0 / math.sqrt(sizes.sum()))),
            vc_dim=section.get("vc_dim"),
            lam=section.get("lam"),
            l1_mismatch=section.get("l1_mismatch"),
            domain_rademacher=section.get("domain_rademacher"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [bounds]: {exc}") from exc
    empirical = float(section.get("empirical_loss", 0.0))
    if inputs.l1_mismatch is not None:
        report = bounds_mod.target_shift_bound(inputs, empirical)
    else:
        report = bounds_mod.skewness_bound(inputs, empirical)
    terms = report.terms()
    sys.stdout.write(json.dumps(terms, indent=2) + "\n")
    width = max(len(k) for k in terms)
    for key, value in terms.items():
        sys.stdout.write(f"{key:<{width}}  {value:.6g}\n")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_toml(args.config)
    base_dir = Path(args.config).resolve().parent
    dataset = _dataset_from_config(cfg, base_dir)
    out = Path(args.out)
    schema = data_mod.write_csv(dataset, out)
    schema_path = out.with_suffix(out.suffix + ".schema.toml")
    lines = ["[dataset]", 'kind = "csv"', f'path = "{out.name}"', "[dataset.schema]"]
    lines.append("numeric_features = [" + ", ".join(f'"{c}"' for c in schema.numeric_features) + "]")
    lines.append(f'label_column = "{schema.label_column}"')
    lines.append(f'domain_column = "{schema.domain_column}"')
    schema_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(f"wrote {out} ({dataset.m} rows, p={dataset.p}) and {schema_path}\n")
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    try:
        vector = np.array([float(tok) for tok in args.vector.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector: {exc}") from exc
    if vector.size == 0:
        raise ConfigError("empty vector")
    projected = project_simplex(vector)
    sys.stdout.write(",".join(format(v, ".12g") for v in projected) + "\n")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.what == "pointmass":
        sys.stdout.write(json.dumps(oracle_mod.pointmass_pair_analytics(), indent=2) + "\n")
        return 0
    cfg = _load_toml(args.config)
    dataset = _dataset_from_config(cfg, Path(args.config).resolve().parent)
    result = oracle_mod.grid_minimax(dataset, resolution=args.resolution)
    sys.stdout.write(
        json.dumps(
            {
                "value": result.value,
                "probs": result.probs.tolist(),
                "vertex_index": result.vertex_index,
                "resolution": result.resolution,
            },
            indent=2,
        )
        + "\n"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aflearn", description="Worst-case mixture-of-domains training")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one or more trainers per the config file")
    p_train.add_argument("--config", required=True, help="TOML run configuration")
    p_train.add_argument(
        "--mode",
        default="afl",
        help="afl | optimistic | uniform | domain-K | all (all = every single-domain baseline + uniform + afl)",
    )
    p_train.add_argument("--seeds", type=int, default=1, help="number of seeds (base seed from config/--seed)")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--steps", type=int, default=None, help="override the iteration count")
    p_train.add_argument("--out", default=None, help="output directory (default from config)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on the configured dataset")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--config", required=True, help="TOML file with the [dataset] section")
    p_eval.add_argument("--protected", default=None, help="re-split by this column and print per-class losses")
    p_eval.set_defaults(func=cmd_eval)

    p_bound = sub.add_parser("bound", help="evaluate the generalization bound from a [bounds] config")
    p_bound.add_argument("--config", required=True)
    p_bound.set_defaults(func=cmd_bound)

    p_synth = sub.add_parser("synth", help="generate the configured dataset and write it as CSV")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--out", required=True, help="output CSV path")
    p_synth.set_defaults(func=cmd_synth)

    p_project = sub.add_parser("project", help="project a comma-separated vector onto the simplex")
    p_project.add_argument("vector")
    p_project.set_defaults(func=cmd_project)

    # debugging aid, not part of the documented surface
    p_oracle = sub.add_parser("oracle")
    p_oracle.add_argument("what", choices=["pointmass", "grid"])
    p_oracle.add_argument("--config", default=None)
    p_oracle.add_argument("--resolution", type=float, default=1e-4)
    p_oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data_mod.SchemaError, data_mod.DataError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except DivergenceError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
