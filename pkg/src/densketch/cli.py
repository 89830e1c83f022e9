"""Command-line driver tying partitioning, training and evaluation together.

Every command is deterministic given its config file and seed; artifacts
carry versioned headers and rerunning a command reproduces them byte for
byte. ``--seed`` overrides the config seed, ``--threads`` caps worker
threads (default from ``DENSKETCH_THREADS``).
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .density import nk_sweep
from .embeddings import EmbeddingError, load_embeddings
from .model import init_model, load_checkpoint, save_checkpoint, train_model
from .partition import (assign_codes, fit_dlsh, fit_random_codes, load_codes,
                        save_codes, save_partitioning)
from .pipeline import (InteractionLog, build_session_dataset, build_topk_dataset,
                       evaluate_session_task, evaluate_topk_task, layout_dim,
                       make_model_ranker, make_pure_ranker, make_static_ranker,
                       popularity_baseline, session_layout, topk_layout)
from .serialize import format_float
from .sketch import encode_items, save_sketch
from .synthetic import make_gaussian_mixture


def _env_threads() -> int | None:
    raw = os.environ.get("DENSKETCH_THREADS")
    return int(raw) if raw else None


def _load_cfg(config, seed, output_dir, threads, aggregator=None) -> ExperimentConfig:
    try:
        cfg = load_config(config, {
            "seed": seed,
            "output_dir": output_dir,
            "threads": threads if threads is not None else _env_threads(),
            "aggregator": aggregator,
        })
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    return cfg


def _codes_path(cfg, name) -> Path:
    return Path(cfg.output_dir) / f"codes_{name}.txt"


def _load_all_codes(cfg) -> dict:
    codes = {}
    for spec in cfg.modalities:
        path = _codes_path(cfg, spec.name)
        if not path.exists():
            raise click.ClickException(
                f"codes file not found: {path} (run fit-partitions first)")
        codes[spec.name] = load_codes(path)
    return codes


def _load_log(path, role) -> InteractionLog:
    if path is None:
        raise click.ClickException(f"config does not set [data] {role}")
    if not Path(path).exists():
        raise click.ClickException(f"{role} file not found: {path}")
    return InteractionLog.load(path)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    return format_float(value) if isinstance(value, float) else str(value)


def _echo_metrics(metrics: dict) -> None:
    width = max(len(name) for name in metrics)
    for name, value in metrics.items():
        click.echo(f"  {name:<{width}}  {value:.6f}")


common_options = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(), help="Experiment config file."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--output-dir", type=click.Path(), default=None,
                 help="Override config output directory."),
    click.option("--threads", type=int, default=None,
                 help="Cap worker threads (default: DENSKETCH_THREADS or config)."),
]


def with_common_options(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Density sketches over embedding manifolds: fit, train, evaluate."""


@main.command("fit-partitions")
@with_common_options
def cmd_fit_partitions(config_path, seed, output_dir, threads):
    """Fit per-modality partitionings and write codes files."""
    cfg = _load_cfg(config_path, seed, output_dir, threads)
    tables = {}
    for spec in cfg.modalities:
        if spec.kind != "dlsh":
            continue
        if not Path(spec.embeddings_path).exists():
            raise click.ClickException(
                f"embedding file not found: {spec.embeddings_path}")
        try:
            tables[spec.name] = load_embeddings(spec.embeddings_path, spec.name)
        except EmbeddingError as exc:
            raise click.ClickException(str(exc))

    universe = set()
    for table in tables.values():
        universe.update(table.ids)
    if cfg.train_interactions and Path(cfg.train_interactions).exists():
        universe.update(InteractionLog.load(cfg.train_interactions).item_ids())

    for spec in cfg.modalities:
        mod_seed = cfg.modality_seed(spec)
        if spec.kind == "dlsh":
            table = tables[spec.name]
            part = fit_dlsh(table, spec.depth, spec.bits, mod_seed, spec.width)
            part_path = Path(cfg.output_dir) / f"partitioning_{spec.name}.dsk"
            save_partitioning(part, part_path)
            codes = assign_codes(part, table)
        else:
            if not universe:
                raise click.ClickException(
                    "random-codes modality needs an item universe: configure "
                    "train_interactions or at least one embedding modality")
            codes = fit_random_codes(sorted(universe), spec.depth,
                                     spec.effective_width, mod_seed)
        codes_file = _codes_path(cfg, spec.name)
        save_codes(codes, codes_file)
        click.echo(f"{spec.name}: {len(codes)} items, depth={codes.depth}, "
                   f"width={codes.width} -> {codes_file}")


@main.command("encode")
@with_common_options
@click.option("--modality", default=None, help="Modality codes to encode with.")
@click.option("--items", "items_path", required=True, type=click.Path(),
              help="Text file: one `item_id [weight]` per line.")
@click.option("--output", "output_path", type=click.Path(), default=None,
              help="Output sketch file (default: <output_dir>/sketch_<modality>.dsk).")
def cmd_encode(config_path, seed, output_dir, threads, modality, items_path, output_path):
    """Aggregate a weighted item list into a sketch file."""
    cfg = _load_cfg(config_path, seed, output_dir, threads)
    modality = modality or cfg.resolved_output_modality()
    codes = _load_all_codes(cfg).get(modality)
    if codes is None:
        raise click.ClickException(f"unknown modality {modality!r}")
    if not Path(items_path).exists():
        raise click.ClickException(f"items file not found: {items_path}")
    items, weights = [], []
    with open(items_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            items.append(parts[0])
            weights.append(float(parts[1]) if len(parts) > 1 else 1.0)
    known = [(i, w) for i, w in zip(items, weights) if i in codes]
    dropped = len(items) - len(known)
    if dropped:
        click.echo(f"warning: dropped {dropped} items unknown to {modality!r}")
    sketch = encode_items(codes, [i for i, _ in known], [w for _, w in known])
    output_path = output_path or str(Path(cfg.output_dir) / f"sketch_{modality}.dsk")
    save_sketch(sketch, output_path)
    click.echo(f"wrote sketch depth={sketch.depth} width={sketch.width} -> {output_path}")


def _build_dataset(cfg, codes, log):
    output_modality = cfg.resolved_output_modality()
    if cfg.task == "session":
        layout = session_layout(codes)
        inputs, targets, metas, stats = build_session_dataset(
            log, codes, cfg.alpha, cfg.decay_w, output_modality)
    else:
        layout = topk_layout(codes)
        inputs, targets, metas, stats = build_topk_dataset(
            log, codes, output_modality, cfg.split_ratio, cfg.seed)
    return layout, inputs, targets, stats


@main.command("train")
@with_common_options
def cmd_train(config_path, seed, output_dir, threads):
    """Train the conditional estimator; writes checkpoint + loss history."""
    cfg = _load_cfg(config_path, seed, output_dir, threads)
    codes = _load_all_codes(cfg)
    train_log = _load_log(cfg.train_interactions, "train_interactions")
    output_modality = cfg.resolved_output_modality()
    layout, inputs, targets, stats = _build_dataset(cfg, codes, train_log)
    out_codes = codes[output_modality]

    params = init_model(layout_dim(layout), out_codes.depth, out_codes.width,
                        cfg.model, cfg.seed, input_layout=layout)
    params, history = train_model(inputs, targets, params, cfg.train)

    ckpt_path = Path(cfg.output_dir) / "model.dsk"
    save_checkpoint(params, ckpt_path, extra_meta={
        "task": cfg.task, "output_modality": output_modality,
    })
    _write_csv(Path(cfg.output_dir) / "loss_history.csv",
               ["epoch", "loss", "lr"],
               [[row["epoch"], _fmt(row["loss"]), _fmt(row["lr"])] for row in history])
    click.echo(f"trained on {inputs.shape[0]} examples "
               f"(skipped={stats['skipped']}, dropped items={stats['dropped']})")
    click.echo(f"final epoch loss {history[-1]['loss']:.6f} -> {ckpt_path}")


@main.command("evaluate")
@with_common_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None,
              help="Checkpoint to evaluate (default: <output_dir>/model.dsk).")
@click.option("--pure", is_flag=True, help="Model-free mode: decode the input density.")
@click.option("--aggregator", type=click.Choice(["gmean", "min", "mean", "hmean"]),
              default=None, help="Override the decode aggregator.")
def cmd_evaluate(config_path, seed, output_dir, threads, checkpoint_path, pure, aggregator):
    """Evaluate on the test interactions; writes metrics + predictions CSVs."""
    cfg = _load_cfg(config_path, seed, output_dir, threads, aggregator)
    codes = _load_all_codes(cfg)
    test_log = _load_log(cfg.test_interactions, "test_interactions")
    output_modality = cfg.resolved_output_modality()
    out_codes = codes[output_modality]
    layout = session_layout(codes) if cfg.task == "session" else topk_layout(codes)
    k = cfg.eval_k if cfg.task == "session" else max(cfg.cutoffs)

    if pure:
        ranker = make_pure_ranker(layout, output_modality, out_codes, k, cfg.aggregator)
    else:
        checkpoint_path = checkpoint_path or str(Path(cfg.output_dir) / "model.dsk")
        if not Path(checkpoint_path).exists():
            raise click.ClickException(
                f"checkpoint not found: {checkpoint_path} (train first or use --pure)")
        params, extra = load_checkpoint(checkpoint_path)
        if params.input_layout != [tuple(seg) for seg in layout]:
            raise click.ClickException(
                f"stale layout: checkpoint was trained with input layout "
                f"{params.input_layout}, current config yields {layout}")
        if extra.get("task") not in (None, cfg.task):
            raise click.ClickException(
                f"checkpoint was trained for task {extra['task']!r}, config says {cfg.task!r}")
        ranker = make_model_ranker(params, layout, out_codes, k, cfg.aggregator)

    if cfg.task == "session":
        metrics, rows = evaluate_session_task(
            test_log, codes, cfg.alpha, cfg.decay_w, output_modality, ranker,
            k=k, exclude_seen=cfg.exclude_seen_effective(), threads=cfg.threads)
    else:
        metrics, rows = evaluate_topk_task(
            test_log, codes, output_modality, ranker, cutoffs=cfg.cutoffs,
            split_ratio=cfg.split_ratio, seed=cfg.seed,
            exclude_seen=cfg.exclude_seen_effective(), threads=cfg.threads)

    _write_csv(Path(cfg.output_dir) / "metrics.csv", ["metric", "value"],
               [[name, _fmt(value)] for name, value in metrics.items()])
    _write_csv(Path(cfg.output_dir) / "predictions.csv",
               ["session_id", "rank", "item_id", "score"],
               [[sid, rank, item, _fmt(score)] for sid, rank, item, score in rows])
    mode = "pure" if pure else "conditional"
    click.echo(f"{cfg.task} evaluation ({mode}, aggregator={cfg.aggregator}):")
    _echo_metrics(metrics)


@main.command("density-sweep")
@with_common_options
def cmd_density_sweep(config_path, seed, output_dir, threads):
    """Sweep estimation quality over the depth/bits grid; writes CSV."""
    cfg = _load_cfg(config_path, seed, output_dir, threads)
    d = cfg.density
    if not d:
        raise click.ClickException("config has no [density] section")
    if d.get("embeddings"):
        if not Path(d["embeddings"]).exists():
            raise click.ClickException(f"embedding file not found: {d['embeddings']}")
        X = load_embeddings(d["embeddings"], "density").vectors
    else:
        X, _, _ = make_gaussian_mixture(d["n_points"], d["n_components"],
                                        d["dim"], cfg.seed, d["spread"])
    rng = np.random.default_rng(cfg.seed + 1)
    n_queries = min(d["n_queries"], X.shape[0])
    queries = X[rng.choice(X.shape[0], size=n_queries, replace=False)]

    rows = nk_sweep(X, queries, d["depth_values"], d["bits_values"],
                    d["sweep_seeds"], d["aggregator"], d["bandwidth"])
    out = Path(cfg.output_dir) / "density_sweep.csv"
    _write_csv(out, ["N", "K", "seed", "pearson"],
               [[r["N"], r["K"], r["seed"], _fmt(r["pearson"])] for r in rows])
    click.echo(f"{len(rows)} sweep rows -> {out}")


@main.command("ablate")
@with_common_options
@click.option("--studies", default="partitioning,aggregator,conditional",
              help="Comma-separated subset of: partitioning, aggregator, conditional.")
def cmd_ablate(config_path, seed, output_dir, threads, studies):
    """Desk-scale ablations: codes with/without metric prior, aggregators,
    conditional model vs. pure decode vs. popularity."""
    cfg = _load_cfg(config_path, seed, output_dir, threads)
    wanted = {s.strip() for s in studies.split(",") if s.strip()}
    unknown = wanted - {"partitioning", "aggregator", "conditional"}
    if unknown:
        raise click.ClickException(f"unknown studies: {sorted(unknown)}")
    train_log = _load_log(cfg.train_interactions, "train_interactions")
    test_log = _load_log(cfg.test_interactions, "test_interactions")
    output_modality = cfg.resolved_output_modality()
    spec = next((m for m in cfg.modalities if m.name == output_modality), None)
    if spec is None or spec.kind != "dlsh":
        raise click.ClickException("ablate needs a dlsh output modality")
    table = load_embeddings(spec.embeddings_path, spec.name)
    mod_seed = cfg.modality_seed(spec)
    part = fit_dlsh(table, spec.depth, spec.bits, mod_seed, spec.width)
    dlsh_codes = assign_codes(part, table)
    rows = []

    def eval_pure(codes, agg):
        mapping = {output_modality: codes}
        layout = (session_layout(mapping) if cfg.task == "session"
                  else topk_layout(mapping))
        k = cfg.eval_k if cfg.task == "session" else max(cfg.cutoffs)
        ranker = make_pure_ranker(layout, output_modality, codes, k, agg)
        if cfg.task == "session":
            metrics, _ = evaluate_session_task(
                test_log, mapping, cfg.alpha, cfg.decay_w, output_modality,
                ranker, k=k, exclude_seen=cfg.exclude_seen_effective(),
                threads=cfg.threads)
        else:
            metrics, _ = evaluate_topk_task(
                test_log, mapping, output_modality, ranker, cutoffs=cfg.cutoffs,
                split_ratio=cfg.split_ratio, seed=cfg.seed,
                exclude_seen=cfg.exclude_seen_effective(), threads=cfg.threads)
        return metrics

    if "partitioning" in wanted:
        random_codes = fit_random_codes(table.ids, spec.depth,
                                        spec.effective_width, mod_seed)
        for variant, codes in [("dlsh", dlsh_codes), ("random", random_codes)]:
            for name, value in eval_pure(codes, cfg.aggregator).items():
                rows.append(("partitioning", variant, name, value))
        click.echo("partitioning study done")

    if "aggregator" in wanted:
        for agg in ("gmean", "min", "mean", "hmean"):
            for name, value in eval_pure(dlsh_codes, agg).items():
                rows.append(("aggregator", agg, name, value))
        click.echo("aggregator study done")

    if "conditional" in wanted:
        codes = _load_all_codes(cfg)
        layout, inputs, targets, _ = _build_dataset(cfg, codes, train_log)
        out_codes = codes[output_modality]
        params = init_model(layout_dim(layout), out_codes.depth, out_codes.width,
                            cfg.model, cfg.seed, input_layout=layout)
        params, _ = train_model(inputs, targets, params, cfg.train)
        k = cfg.eval_k if cfg.task == "session" else max(cfg.cutoffs)
        popularity = dict(popularity_baseline(train_log))
        rankers = {
            "conditional": make_model_ranker(params, layout, out_codes, k, cfg.aggregator),
            "pure": make_pure_ranker(layout, output_modality, out_codes, k, cfg.aggregator),
            "pure+pop": make_pure_ranker(layout, output_modality, out_codes, k,
                                         cfg.aggregator, popularity=popularity),
            "toppop": make_static_ranker(popularity_baseline(train_log), k),
        }
        for variant, ranker in rankers.items():
            if cfg.task == "session":
                metrics, _ = evaluate_session_task(
                    test_log, codes, cfg.alpha, cfg.decay_w, output_modality,
                    ranker, k=k, exclude_seen=cfg.exclude_seen_effective(),
                    threads=cfg.threads)
            else:
                metrics, _ = evaluate_topk_task(
                    test_log, codes, output_modality, ranker, cutoffs=cfg.cutoffs,
                    split_ratio=cfg.split_ratio, seed=cfg.seed,
                    exclude_seen=cfg.exclude_seen_effective(), threads=cfg.threads)
            for name, value in metrics.items():
                rows.append(("conditional", variant, name, value))
        click.echo("conditional study done")

    out = Path(cfg.output_dir) / "ablation.csv"
    _write_csv(out, ["study", "variant", "metric", "value"],
               [[s, v, m, _fmt(val)] for s, v, m, val in rows])
    click.echo(f"{len(rows)} ablation rows -> {out}")


if __name__ == "__main__":
    main()
