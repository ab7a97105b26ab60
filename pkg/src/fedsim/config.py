"""Experiment configuration: TOML-subset parsing, validation, serialization, presets.

The config grammar is deliberately small (documented in the README): top-level
`name`, the sections [data] [model] [federation] [attack] [defense] [dp]
[forwarding] [output], plus [[defense.filters]] as an array of tables. Values
are strings, integers, floats, booleans, and integer arrays.
"""
from __future__ import annotations

import dataclasses
import difflib
import os
from dataclasses import dataclass

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .attacks import ATTACK_KINDS, AttackSpec
from .defenses import DefenseSpec, FILTER_ACCURACY, FilterSpec
from .engine import FLConfig
from .forwarding import ForwardPolicy
from .model import ModelSpec, TrainSpec
from .privacy import DPSpec

DATA_DIR_ENV = "FEDSIM_DATA_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class DataConfig:
    source: str = "mnist"            # mnist | synthetic
    train_images: str = ""           # empty: resolved from FEDSIM_DATA_DIR
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    subset: int = 6000               # stratified training subset; 0 = full
    test_subset: int = 1000          # stratified test subset; 0 = full
    classes: int = 10                # synthetic blob parameters
    examples: int = 20000
    dim: int = 64
    validation_size: int = 1000      # server-held holdout for accuracy detection


@dataclass(frozen=True)
class OutputConfig:
    csv: str = "metrics.csv"
    svg: str = "metrics.svg"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: DataConfig
    model: ModelSpec
    federation: FLConfig
    defense: DefenseSpec
    attack: AttackSpec | None = None
    dp: DPSpec | None = None
    forwarding: ForwardPolicy | None = None
    output: OutputConfig = OutputConfig()


def resolve_mnist_paths(data: DataConfig) -> dict[str, str]:
    """Explicit paths win; otherwise fall back to FEDSIM_DATA_DIR + standard names."""
    base = os.environ.get(DATA_DIR_ENV, ".")
    out = {}
    for key, default_name in MNIST_FILES.items():
        explicit = getattr(data, key)
        out[key] = explicit if explicit else os.path.join(base, default_name)
    return out


_SECTION_KEYS = {
    "data": {
        "source", "train_images", "train_labels", "test_images", "test_labels",
        "subset", "test_subset", "classes", "examples", "dim", "validation_size",
    },
    "model": {"layers"},
    "federation": {
        "clients", "sample_fraction", "eta", "rounds", "learning_rate",
        "local_epochs", "batch_size", "seed", "clip_norm",
    },
    "attack": {"kind", "source", "target", "boost", "phi", "coalition_fraction",
               "aux_replication", "attacker_epochs"},
    "defense": {"rule", "krum_f", "trim_beta", "filters"},
    "filter": {"kind", "k", "centroid", "threshold", "bins"},
    "dp": {"epsilon_per_round", "clip_norm"},
    "forwarding": {"accept_base", "p_submit", "max_hops", "reputation_weight"},
    "output": {"csv", "svg"},
}


def _check_keys(section: str, table: dict, errors: list[str], schema: str | None = None):
    allowed = _SECTION_KEYS[schema or section]
    for key in table:
        if key not in allowed:
            errors.append(f"[{section}] unknown key {key!r}")


def build_config(doc: dict, *, check_files: bool = True) -> ExperimentConfig:
    """Assemble and validate an ExperimentConfig from a parsed TOML document.

    Raises ConfigError carrying the full list of problems.
    """
    errors: list[str] = []
    for key in doc:
        if key not in ("name", *(_SECTION_KEYS.keys() - {"filter"})):
            errors.append(f"unknown section or key {key!r}")

    name = doc.get("name", "experiment")
    if not isinstance(name, str):
        errors.append("name must be a string")
        name = "experiment"

    data_tbl = doc.get("data", {})
    _check_keys("data", data_tbl, errors)
    data = DataConfig(**{k: v for k, v in data_tbl.items() if k in _SECTION_KEYS["data"]})
    if data.source not in ("mnist", "synthetic"):
        errors.append(f"[data] source must be 'mnist' or 'synthetic', got {data.source!r}")
    elif data.source == "mnist":
        if check_files:
            for key, path in resolve_mnist_paths(data).items():
                if not os.path.exists(path):
                    errors.append(f"[data] {key}: file not found: {path}")
    else:
        if data.classes < 2:
            errors.append("[data] classes must be >= 2")
        if data.examples < data.classes:
            errors.append("[data] examples must be >= classes")
        if data.dim < 1:
            errors.append("[data] dim must be >= 1")
    if data.subset < 0 or data.test_subset < 0 or data.validation_size < 0:
        errors.append("[data] subset sizes must be >= 0")

    model = None
    model_tbl = doc.get("model", {})
    _check_keys("model", model_tbl, errors)
    try:
        model = ModelSpec(tuple(model_tbl.get("layers", (784, 128, 10))))
    except (TypeError, ValueError) as exc:
        errors.append(f"[model] {exc}")

    federation = None
    fed_tbl = doc.get("federation", {})
    _check_keys("federation", fed_tbl, errors)
    try:
        clip = fed_tbl.get("clip_norm", 0.0)
        train = TrainSpec(
            learning_rate=fed_tbl.get("learning_rate", 0.1),
            local_epochs=fed_tbl.get("local_epochs", 2),
            batch_size=fed_tbl.get("batch_size", 32),
            seed=0,
        )
        federation = FLConfig(
            client_count=fed_tbl.get("clients", 10),
            sample_fraction=fed_tbl.get("sample_fraction", 1.0),
            eta=fed_tbl.get("eta", 0.25),
            rounds=fed_tbl.get("rounds", 20),
            train=train,
            seed=fed_tbl.get("seed", 0),
            clip_norm=None if not clip else float(clip),
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"[federation] {exc}")

    attack = None
    if "attack" in doc:
        atk_tbl = doc["attack"]
        _check_keys("attack", atk_tbl, errors)
        try:
            attack = AttackSpec(
                kind=atk_tbl.get("kind", "explicit_boost"),
                source=atk_tbl.get("source"),
                target=atk_tbl.get("target"),
                boost=float(atk_tbl.get("boost", 1.0)),
                phi=float(atk_tbl.get("phi", 0.0)),
                coalition_fraction=float(atk_tbl.get("coalition_fraction", 0.0)),
                aux_replication=atk_tbl.get("aux_replication", 1),
                attacker_epochs=atk_tbl.get("attacker_epochs"),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"[attack] {exc}")

    defense = None
    def_tbl = doc.get("defense", {})
    _check_keys("defense", def_tbl, errors)
    filters = []
    for i, f_tbl in enumerate(def_tbl.get("filters", [])):
        _check_keys(f"defense.filters[{i}]", f_tbl, errors, schema="filter")
        try:
            filters.append(FilterSpec(**{k: v for k, v in f_tbl.items() if k in _SECTION_KEYS["filter"]}))
        except (TypeError, ValueError) as exc:
            errors.append(f"[defense.filters[{i}]] {exc}")
    try:
        defense = DefenseSpec(
            rule=def_tbl.get("rule", "fedavg"),
            krum_f=def_tbl.get("krum_f", 0),
            trim_beta=float(def_tbl.get("trim_beta", 0.0)),
            filters=tuple(filters),
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"[defense] {exc}")

    dp = None
    if "dp" in doc:
        dp_tbl = doc["dp"]
        _check_keys("dp", dp_tbl, errors)
        try:
            dp = DPSpec(
                epsilon_per_round=float(dp_tbl.get("epsilon_per_round", 0.0)),
                clip_norm=float(dp_tbl.get("clip_norm", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"[dp] {exc}")

    forwarding = None
    if "forwarding" in doc:
        fw_tbl = doc["forwarding"]
        _check_keys("forwarding", fw_tbl, errors)
        try:
            forwarding = ForwardPolicy(
                accept_base=float(fw_tbl.get("accept_base", 1.0)),
                p_submit=float(fw_tbl.get("p_submit", 0.5)),
                max_hops=fw_tbl.get("max_hops", 5),
                reputation_weight=float(fw_tbl.get("reputation_weight", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"[forwarding] {exc}")

    out_tbl = doc.get("output", {})
    _check_keys("output", out_tbl, errors)
    output = OutputConfig(**{k: v for k, v in out_tbl.items() if k in _SECTION_KEYS["output"]})

    # cross-section consistency (only where the pieces built successfully)
    if dp is not None and forwarding is not None:
        errors.append("[dp]/[forwarding] are mutually exclusive in a single run")
    if defense is not None and defense.needs_validation and data.validation_size < 1:
        errors.append("[defense] accuracy_loo filter requires data.validation_size >= 1")
    if model is not None and data.source == "synthetic":
        if model.input_dim != data.dim:
            errors.append(
                f"[model] input dim {model.input_dim} != synthetic data dim {data.dim}"
            )
        if model.class_count != data.classes:
            errors.append(
                f"[model] class count {model.class_count} != synthetic classes {data.classes}"
            )
    if model is not None and attack is not None and attack.source is not None:
        if max(attack.source, attack.target) >= model.class_count:
            errors.append("[attack] source/target class out of model range")
    if model is not None and federation is not None and defense is not None:
        if defense.rule == "krum" and not 2 * defense.krum_f + 2 < federation.sample_size:
            errors.append(
                f"[defense] krum needs 2f+2 < sampled clients "
                f"({federation.sample_size}), got f={defense.krum_f}"
            )
    if federation is not None and data.source == "synthetic":
        if federation.client_count > data.examples:
            errors.append("[federation] more clients than synthetic examples")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        name=name,
        data=data,
        model=model,
        federation=federation,
        defense=defense,
        attack=attack,
        dp=dp,
        forwarding=forwarding,
        output=output,
    )


def parse_config(path, *, check_files: bool = True) -> ExperimentConfig:
    """Parse and validate a config file; syntax errors keep tomli's line/column info."""
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return build_config(doc, check_files=check_files)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit the documented TOML subset; parse(serialize(cfg)) reproduces cfg."""
    lines = [f"name = {_fmt(cfg.name)}", ""]

    lines.append("[data]")
    for key in sorted(_SECTION_KEYS["data"]):
        lines.append(f"{key} = {_fmt(getattr(cfg.data, key))}")
    lines.append("")

    lines.append("[model]")
    lines.append(f"layers = {_fmt(cfg.model.layer_sizes)}")
    lines.append("")

    fed = cfg.federation
    lines.append("[federation]")
    lines.append(f"clients = {_fmt(fed.client_count)}")
    lines.append(f"sample_fraction = {_fmt(fed.sample_fraction)}")
    lines.append(f"eta = {_fmt(fed.eta)}")
    lines.append(f"rounds = {_fmt(fed.rounds)}")
    lines.append(f"learning_rate = {_fmt(fed.train.learning_rate)}")
    lines.append(f"local_epochs = {_fmt(fed.train.local_epochs)}")
    lines.append(f"batch_size = {_fmt(fed.train.batch_size)}")
    lines.append(f"seed = {_fmt(fed.seed)}")
    if fed.clip_norm is not None:
        lines.append(f"clip_norm = {_fmt(fed.clip_norm)}")
    lines.append("")

    if cfg.attack is not None:
        atk = cfg.attack
        lines.append("[attack]")
        lines.append(f"kind = {_fmt(atk.kind)}")
        if atk.source is not None:
            lines.append(f"source = {_fmt(atk.source)}")
            lines.append(f"target = {_fmt(atk.target)}")
        lines.append(f"boost = {_fmt(atk.boost)}")
        lines.append(f"phi = {_fmt(atk.phi)}")
        lines.append(f"coalition_fraction = {_fmt(atk.coalition_fraction)}")
        lines.append(f"aux_replication = {_fmt(atk.aux_replication)}")
        if atk.attacker_epochs is not None:
            lines.append(f"attacker_epochs = {_fmt(atk.attacker_epochs)}")
        lines.append("")

    d = cfg.defense
    lines.append("[defense]")
    lines.append(f"rule = {_fmt(d.rule)}")
    lines.append(f"krum_f = {_fmt(d.krum_f)}")
    lines.append(f"trim_beta = {_fmt(d.trim_beta)}")
    lines.append("")
    for f in d.filters:
        lines.append("[[defense.filters]]")
        lines.append(f"kind = {_fmt(f.kind)}")
        lines.append(f"k = {_fmt(f.k)}")
        lines.append(f"centroid = {_fmt(f.centroid)}")
        lines.append(f"threshold = {_fmt(f.threshold)}")
        lines.append(f"bins = {_fmt(f.bins)}")
        lines.append("")

    if cfg.dp is not None:
        lines.append("[dp]")
        lines.append(f"epsilon_per_round = {_fmt(cfg.dp.epsilon_per_round)}")
        lines.append(f"clip_norm = {_fmt(cfg.dp.clip_norm)}")
        lines.append("")

    if cfg.forwarding is not None:
        fw = cfg.forwarding
        lines.append("[forwarding]")
        lines.append(f"accept_base = {_fmt(fw.accept_base)}")
        lines.append(f"p_submit = {_fmt(fw.p_submit)}")
        lines.append(f"max_hops = {_fmt(fw.max_hops)}")
        lines.append(f"reputation_weight = {_fmt(fw.reputation_weight)}")
        lines.append("")

    lines.append("[output]")
    lines.append(f"csv = {_fmt(cfg.output.csv)}")
    lines.append(f"svg = {_fmt(cfg.output.svg)}")
    lines.append("")
    return "\n".join(lines)


def to_synthetic(cfg: ExperimentConfig) -> ExperimentConfig:
    """Swap the dataset for the synthetic blobs (and shrink the model to match)."""
    data = dataclasses.replace(
        cfg.data, source="synthetic",
        train_images="", train_labels="", test_images="", test_labels="",
    )
    model = ModelSpec((data.dim, 32, data.classes))
    return dataclasses.replace(cfg, data=data, model=model)


def to_full_mnist(cfg: ExperimentConfig) -> ExperimentConfig:
    """Disable desk-scale subsetting for paper-faithful runs."""
    return dataclasses.replace(
        cfg, data=dataclasses.replace(cfg.data, subset=0, test_subset=0)
    )


# --- preset catalog -----------------------------------------------------------

_DESK_DATA = DataConfig()
_MNIST_MODEL = ModelSpec((784, 128, 10))

_DISTANCE = FilterSpec(kind="distance_iqr", k=1.5, centroid="mean")
_ACCURACY = FilterSpec(kind=FILTER_ACCURACY, threshold=0.02)

_DEF_NONE = DefenseSpec()
_DEF_DISTANCE = DefenseSpec(filters=(_DISTANCE,))
_DEF_ACCURACY = DefenseSpec(filters=(_ACCURACY,))
_DEF_MEDIAN = DefenseSpec(rule="median")
_DEF_KRUM = DefenseSpec(rule="krum", krum_f=3)

_DEFENSE_GRID = (_DEF_DISTANCE, _DEF_ACCURACY, _DEF_MEDIAN, _DEF_KRUM)


def _fed(clients, fraction, rounds, *, eta=0.25, epochs=2, seed=7):
    return FLConfig(
        client_count=clients,
        sample_fraction=fraction,
        eta=eta,
        rounds=rounds,
        train=TrainSpec(learning_rate=0.1, local_epochs=epochs, batch_size=32, seed=0),
        seed=seed,
    )


def _poison(boost, coalition=0.0):
    return AttackSpec(
        kind="explicit_boost", source=4, target=7, boost=float(boost),
        coalition_fraction=coalition,
    )


def _catalog() -> dict[str, ExperimentConfig]:
    make = lambda name, fed, attack, defense: ExperimentConfig(
        name=name, data=_DESK_DATA, model=_MNIST_MODEL,
        federation=fed, defense=defense, attack=attack,
    )
    cat = {
        "baseline-central": make(
            "baseline-central", _fed(1, 1.0, 10, eta=1.0, epochs=1), None, _DEF_NONE
        ),
        "fig2-left": make("fig2-left", _fed(10, 1.0, 20), _poison(2), _DEF_NONE),
        "fig2-right": make("fig2-right", _fed(10, 1.0, 20), _poison(12), _DEF_NONE),
        "fig3-left": make("fig3-left", _fed(1000, 0.01, 100), _poison(10), _DEF_NONE),
        "fig3-right": make("fig3-right", _fed(1000, 0.1, 100), _poison(100), _DEF_NONE),
    }
    for i, defense in enumerate(_DEFENSE_GRID):
        cat[f"fig{4 + i}"] = make(
            f"fig{4 + i}", _fed(1000, 0.01, 100), _poison(10), defense
        )
    for i, coalition in enumerate((0.1, 0.2, 0.3, 0.4)):
        cat[f"fig{8 + i}"] = make(
            f"fig{8 + i}", _fed(1000, 0.01, 100), _poison(2, coalition), _DEF_NONE
        )
    for i, defense in enumerate(_DEFENSE_GRID):
        cat[f"fig{12 + i}"] = make(
            f"fig{12 + i}", _fed(1000, 0.01, 100), _poison(2, 0.2), defense
        )
    for i, defense in enumerate(_DEFENSE_GRID):
        cat[f"fig{16 + i}"] = make(
            f"fig{16 + i}", _fed(1000, 0.01, 100), _poison(2, 0.4), defense
        )
    return cat


def preset_names() -> list[str]:
    return sorted(_catalog())


def preset(name: str, *, synthetic: bool = False) -> ExperimentConfig:
    """Figure-preset catalog at desk scale; unknown names suggest close matches."""
    cat = _catalog()
    if name not in cat:
        hints = difflib.get_close_matches(name, cat, n=3)
        hint = f" (did you mean: {', '.join(hints)}?)" if hints else ""
        raise ConfigError([f"unknown preset {name!r}{hint}; known: {', '.join(sorted(cat))}"])
    cfg = cat[name]
    return to_synthetic(cfg) if synthetic else cfg
