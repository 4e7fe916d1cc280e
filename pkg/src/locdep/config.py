"""JSON configuration parsing, canonical forms, and run manifests."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError
from .graph import BlockPartition
from .model import BETWEEN, WITHIN, ModelSpec, parse_term
from .studies import CASES, StudyConfig


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise DataError(f"{path}: top level must be an object")
    return obj


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


MODEL_KEYS = {"within", "between", "block_groups"}


def parse_model_config(obj, partition: BlockPartition, source: str = "model") -> tuple[ModelSpec, dict]:
    """Build a ModelSpec from a model config and return it with the
    canonical (fully expanded) config.

    ``obj`` is a dict or a path.  The optional ``block_groups`` key assigns
    a 1-based group to each block, for the transitive-by-block-group term.
    """
    if not isinstance(obj, dict):
        source = str(obj)
        obj = load_json(obj)
    extra = set(obj) - MODEL_KEYS
    if extra:
        raise DataError(f"{source}: unexpected keys {sorted(extra)}")
    if "block_groups" in obj:
        bg = obj["block_groups"]
        K = partition.n_blocks
        if (not isinstance(bg, list) or len(bg) != K
                or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in bg)):
            raise DataError(f"{source}.block_groups: expected {K} positive integers")
        if sorted(set(bg)) != list(range(1, max(bg) + 1)):
            raise DataError(f"{source}.block_groups: group ids must be contiguous from 1")
        partition = BlockPartition(partition.blocks, node_groups=partition.node_groups,
                                   block_groups=np.array(bg) - 1)
    terms = {}
    for kind in (WITHIN, BETWEEN):
        descs = obj.get(kind, [])
        if not isinstance(descs, list):
            raise DataError(f"{source}.{kind}: expected a list of term descriptors")
        terms[kind] = []
        for i, d in enumerate(descs):
            terms[kind].extend(parse_term(d, kind, partition, f"{source}.{kind}[{i}]"))
    if not terms[WITHIN] and not terms[BETWEEN]:
        raise DataError(f"{source}: the model has no terms")
    spec = ModelSpec(partition, terms[WITHIN], terms[BETWEEN])
    canon = spec.to_config()
    if partition.block_groups is not None:
        canon["block_groups"] = [int(x) + 1 for x in partition.block_groups]
    return spec, canon


STUDY_KEYS = {"case", "cases", "n_values", "block_size", "replications", "theta_transitive",
              "theta_group_range", "n_mcmc", "burnin_multiplier", "interval_multiplier",
              "max_outer", "alpha", "transitive", "seed"}


def parse_study_config(obj, source: str = "config", **overrides) -> StudyConfig:
    """StudyConfig from a dict or JSON file; ``overrides`` (non-None) win."""
    if not isinstance(obj, dict):
        source = str(obj)
        obj = load_json(obj)
    extra = set(obj) - STUDY_KEYS
    if extra:
        raise DataError(f"{source}: unexpected keys {sorted(extra)}")
    kw = dict(obj)
    if "case" in kw:
        if "cases" in kw:
            raise DataError(f"{source}: give either 'case' or 'cases'")
        kw["cases"] = [kw.pop("case")]
    for k, v in overrides.items():
        if v is not None:
            kw[k] = v
    if "cases" in kw:
        cs = kw["cases"]
        if not isinstance(cs, list) or not cs or not all(c in CASES for c in cs):
            raise DataError(f"{source}.cases: expected a list drawn from {list(CASES)}")
        kw["cases"] = tuple(cs)
    if "n_values" in kw:
        nv = kw["n_values"]
        if not isinstance(nv, list) or not nv or not all(isinstance(n, int) for n in nv):
            raise DataError(f"{source}.n_values: expected a list of integers")
        kw["n_values"] = tuple(nv)
    if "theta_group_range" in kw:
        r = kw["theta_group_range"]
        if not isinstance(r, list) or len(r) != 2:
            raise DataError(f"{source}.theta_group_range: expected [low, high]")
        kw["theta_group_range"] = (float(r[0]), float(r[1]))
    ints = ("block_size", "replications", "n_mcmc", "max_outer", "seed")
    for k in ints:
        if k in kw and (not isinstance(kw[k], int) or isinstance(kw[k], bool)):
            raise DataError(f"{source}.{k}: expected an integer")
    try:
        return StudyConfig(**kw)
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from None


@dataclass
class RunManifest:
    tool_version: str
    command: str
    config_hash: str
    config: dict
    root_seed: int
    thread_count: int
    started: str
    finished: str = ""

    @classmethod
    def start(cls, command: str, config: dict, seed: int, threads: int) -> "RunManifest":
        return cls(__version__, command, config_hash(config), config, seed, threads, _now())

    def finish(self) -> None:
        self.finished = _now()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        obj = load_json(path)
        try:
            m = cls(**obj)
        except TypeError as exc:
            raise DataError(f"{path}: not a run manifest ({exc})") from None
        if config_hash(m.config) != m.config_hash:
            raise DataError(f"{path}: config hash does not match the stored config")
        return m


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_text(path: Path | None, text: str) -> None:
    if path is None:
        print(text, end="")
    else:
        Path(path).write_text(text)
