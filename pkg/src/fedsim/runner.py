"""Drive one experiment from config to CSV metrics and an SVG chart."""
from __future__ import annotations

import os

from .common import child_seed
from .config import ExperimentConfig, resolve_mnist_paths, serialize_config
from .data import Dataset, load_idx, shard_iid, stratified_split, synth_generate
from .engine import run_federation
from .plot import write_svg

CSV_HEADER = (
    "round,global_accuracy,accuracy_excluding_source,attack_success,"
    "discarded_count,aggregate_norm,kl_value,epsilon_total,mean_hops,linkage_advantage"
)

_TAG_DATA = 5


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def metrics_row(m) -> str:
    """One fixed-schema CSV line; absent optional metrics become empty fields."""
    return ",".join(
        (
            str(m.round_idx),
            _cell(m.global_accuracy),
            _cell(m.accuracy_excluding_source),
            _cell(m.attack_success),
            str(len(m.discarded_client_ids)),
            _cell(m.aggregate_norm),
            _cell(m.kl_value),
            _cell(m.epsilon_total),
            _cell(m.mean_hops),
            _cell(m.linkage_advantage),
        )
    )


def load_experiment_data(cfg: ExperimentConfig):
    """Materialize (shards, test, validation) for a config, deterministically.

    The server-held validation set is carved out of the training data before
    sharding, so it is disjoint from every client shard.
    """
    data = cfg.data
    seed = cfg.federation.seed
    needs_validation = cfg.defense.needs_validation
    if data.source == "mnist":
        paths = resolve_mnist_paths(data)
        train = load_idx(paths["train_images"], paths["train_labels"])
        test = load_idx(paths["test_images"], paths["test_labels"])
        if data.subset:
            train, _ = stratified_split(train, data.subset, child_seed(seed, _TAG_DATA, 0))
        if data.test_subset:
            test, _ = stratified_split(test, data.test_subset, child_seed(seed, _TAG_DATA, 1))
    else:
        test_size = data.test_subset if data.test_subset else 1000
        total = data.examples + test_size + (data.validation_size if needs_validation else 0)
        full = synth_generate(data.classes, total, data.dim, child_seed(seed, _TAG_DATA, 0))
        test, train = stratified_split(full, test_size, child_seed(seed, _TAG_DATA, 1))
    validation = None
    if needs_validation:
        validation, train = stratified_split(
            train, data.validation_size, child_seed(seed, _TAG_DATA, 2)
        )
    shards = shard_iid(train, cfg.federation.client_count, child_seed(seed, _TAG_DATA, 3))
    return shards, test, validation


def run_experiment(cfg: ExperimentConfig, out_dir, *, workers: int = 1):
    """Execute the configured run; streams CSV rows per round (a crash leaves a
    flushed partial file), then writes the SVG. Returns (csv_path, svg_path)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, cfg.output.csv)
    svg_path = os.path.join(out_dir, cfg.output.svg)
    with open(os.path.join(out_dir, "config.toml"), "w", encoding="utf-8") as f:
        f.write(serialize_config(cfg))

    shards, test, validation = load_experiment_data(cfg)
    metrics = []
    with open(csv_path, "w", encoding="utf-8", newline="\n") as csv_file:
        csv_file.write(CSV_HEADER + "\n")
        csv_file.flush()

        def on_round(row):
            metrics.append(row)
            csv_file.write(metrics_row(row) + "\n")
            csv_file.flush()

        run_federation(
            cfg.federation,
            cfg.model,
            shards,
            cfg.attack,
            cfg.defense,
            test,
            validation,
            dp=cfg.dp,
            forward_policy=cfg.forwarding,
            workers=workers,
            on_round=on_round,
        )
    write_svg(svg_path, metrics)
    return csv_path, svg_path
