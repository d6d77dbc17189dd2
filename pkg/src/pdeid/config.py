"""Run configuration: TOML file, exhaustive validation, CLI overrides.

A run config is one TOML document with a [run] table, one or more
[[dataset]] tables, and a [phases] table holding burn_in, sparsification,
and fine_tune sub-tables. All paths are resolved relative to the config
file itself so a config plus its neighbours is a relocatable, diffable
artifact. Validation collects every problem it can find and reports them
in one ConfigError; nothing is silently corrected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import ConfigError
from .losses import DEFAULT_DELTA, DEFAULT_P
from .training import DEFAULT_PRUNE_THRESHOLD, PhaseConfig

_RUN_KEYS = {"library", "out_dir", "p", "delta", "n_random_coll",
             "prune_threshold", "seed"}
_DATASET_KEYS = {"train", "test", "hidden", "net_seed", "colloc_seed"}
_PHASE_KEYS = {"epochs", "lr", "w_data", "w_coll", "w_lp", "patience",
               "metric_window", "metric_rtol"}
_PHASE_SECTIONS = (("burn_in", "burn-in"),
                   ("sparsification", "sparsification"),
                   ("fine_tune", "fine-tune"))


@dataclass(frozen=True)
class DatasetSpec:
    train: str
    test: str
    hidden: tuple
    net_seed: int
    colloc_seed: int


@dataclass(frozen=True)
class RunConfig:
    library: str
    out_dir: str
    p: float
    delta: float
    n_random_coll: int
    prune_threshold: float
    seed: int
    datasets: tuple
    phases: tuple

    def digest(self):
        doc = {"library": self.library, "p": self.p, "delta": self.delta,
               "n_random_coll": self.n_random_coll,
               "prune_threshold": self.prune_threshold, "seed": self.seed,
               "datasets": [{f: getattr(d, f)
                             for f in d.__dataclass_fields__}
                            for d in self.datasets],
               "phases": [{f: getattr(ph, f)
                           for f in ph.__dataclass_fields__}
                          for ph in self.phases]}
        blob = json.dumps(doc, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_override(text):
    """'section.key=value' with the value read as a TOML literal."""
    path, sep, raw = text.partition("=")
    if not sep or not path.strip():
        raise ConfigError(f"override {text!r} is not of the form "
                          f"key.path=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path.strip().split("."), value


def _reach(doc, keys, source):
    """Walk to the parent of keys[-1], creating tables, indexing arrays."""
    node = doc
    for key in keys[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(key)]
            except (ValueError, IndexError):
                raise ConfigError(f"override {source!r}: bad array "
                                  f"index {key!r}") from None
        else:
            node = node.setdefault(key, {})
    if isinstance(node, dict):
        return node, keys[-1]
    try:
        return node, int(keys[-1])
    except ValueError:
        raise ConfigError(f"override {source!r}: cannot index an array "
                          f"with {keys[-1]!r}") from None


def load_run_config(path, overrides=()):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None

    for text in overrides:
        keys, value = parse_override(text)
        parent, last = _reach(doc, keys, text)
        parent[last] = value
    return build_run_config(doc, base_dir=path.parent)


def build_run_config(doc, base_dir="."):
    """Validate a parsed config document; collects every failure."""
    base = Path(base_dir)
    errors = []

    def complain(message):
        errors.append(message)

    def check_keys(table, allowed, where):
        for key in table:
            if key not in allowed:
                complain(f"{where}: unknown key {key!r} (expected one of "
                         f"{', '.join(sorted(allowed))})")

    run = doc.get("run")
    if not isinstance(run, dict):
        complain("missing [run] table")
        run = {}
    check_keys(run, _RUN_KEYS, "[run]")

    def number(table, where, key, default, kind=float):
        value = table.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            complain(f"{where}: {key} must be a number, got {value!r}")
            return default
        return kind(value)

    p = number(run, "[run]", "p", DEFAULT_P)
    if not 0.0 < p < 2.0:
        complain(f"[run]: p must lie in (0, 2), got {p}")
    delta = number(run, "[run]", "delta", DEFAULT_DELTA)
    if delta <= 0:
        complain(f"[run]: delta must be positive, got {delta}")
    n_random_coll = number(run, "[run]", "n_random_coll", 1000, int)
    if n_random_coll < 1:
        complain(f"[run]: n_random_coll must be >= 1, got {n_random_coll}")
    prune_threshold = number(run, "[run]", "prune_threshold",
                             DEFAULT_PRUNE_THRESHOLD)
    if prune_threshold <= 0:
        complain(f"[run]: prune_threshold must be positive, "
                 f"got {prune_threshold}")
    seed = number(run, "[run]", "seed", 0, int)

    library = run.get("library")
    if not isinstance(library, str):
        complain("[run]: library must name a term-library file")
        library = ""
    else:
        library = str(base / library)
        if not Path(library).is_file():
            complain(f"[run]: library file {library} does not exist")
    out_dir = run.get("out_dir")
    if not isinstance(out_dir, str) or not out_dir:
        complain("[run]: out_dir must name an output directory")
        out_dir = ""
    else:
        out_dir = str(base / out_dir)

    raw_datasets = doc.get("dataset", [])
    if not isinstance(raw_datasets, list) or not raw_datasets:
        complain("need at least one [[dataset]] table")
        raw_datasets = []
    datasets = []
    for i, entry in enumerate(raw_datasets):
        where = f"[[dataset]] #{i}"
        if not isinstance(entry, dict):
            complain(f"{where}: not a table")
            continue
        check_keys(entry, _DATASET_KEYS, where)
        train = entry.get("train")
        if not isinstance(train, str):
            complain(f"{where}: train must name a points file")
            train = ""
        else:
            train = str(base / train)
            if not Path(train).is_file():
                complain(f"{where}: train file {train} does not exist")
        test = entry.get("test")
        if test is not None:
            if not isinstance(test, str):
                complain(f"{where}: test must name a points file")
                test = None
            else:
                test = str(base / test)
                if not Path(test).is_file():
                    complain(f"{where}: test file {test} does not exist")
        hidden = entry.get("hidden")
        if (not isinstance(hidden, list) or not hidden
                or not all(isinstance(w, int) and not isinstance(w, bool)
                           and w >= 1 for w in hidden)):
            complain(f"{where}: hidden must be a nonempty list of "
                     f"positive layer widths")
            hidden = [1]
        net_seed = number(entry, where, "net_seed", seed + i, int)
        colloc_seed = number(entry, where, "colloc_seed",
                             seed + 1000 + i, int)
        datasets.append(DatasetSpec(train, test, tuple(hidden),
                                    net_seed, colloc_seed))

    phases_doc = doc.get("phases")
    if not isinstance(phases_doc, dict):
        complain("missing [phases] table with burn_in, sparsification, "
                 "fine_tune")
        phases_doc = {}
    check_keys(phases_doc, {s for s, _ in _PHASE_SECTIONS}, "[phases]")
    phases = []
    for section, kind in _PHASE_SECTIONS:
        table = phases_doc.get(section)
        where = f"[phases.{section}]"
        if not isinstance(table, dict):
            complain(f"missing {where} table")
            continue
        check_keys(table, _PHASE_KEYS, where)
        epochs = number(table, where, "epochs", 0, int)
        kwargs = dict(kind=kind, epochs=epochs,
                      lr=number(table, where, "lr", 1e-3),
                      w_data=number(table, where, "w_data", 1.0),
                      w_coll=number(table, where, "w_coll", 1.0))
        if kind == "sparsification":
            kwargs["w_lp"] = number(table, where, "w_lp", 1e-4)
        else:
            kwargs["w_lp"] = number(table, where, "w_lp", 0.0)
        if kind == "fine-tune":
            kwargs["patience"] = number(table, where, "patience", 100, int)
            kwargs["metric_window"] = number(table, where, "metric_window",
                                             100, int)
            kwargs["metric_rtol"] = number(table, where, "metric_rtol",
                                           1e-3)
        else:
            kwargs["patience"] = number(table, where, "patience", 0, int)
            kwargs["metric_window"] = number(table, where,
                                             "metric_window", 0, int)
            kwargs["metric_rtol"] = number(table, where, "metric_rtol",
                                           1e-3)
        try:
            phases.append(PhaseConfig(**kwargs))
        except ConfigError as exc:
            complain(f"{where}: {exc}")

    if errors:
        raise ConfigError("invalid run config:\n  "
                          + "\n  ".join(errors))
    return RunConfig(library=library, out_dir=out_dir, p=p, delta=delta,
                     n_random_coll=n_random_coll,
                     prune_threshold=prune_threshold, seed=seed,
                     datasets=tuple(datasets), phases=tuple(phases))
