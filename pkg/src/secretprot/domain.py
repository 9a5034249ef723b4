"""Datasets, secrets and run configuration.

A dataset is a list of examples, each tagged with the ids of the secrets it
contains. Which examples contain which secret is public; only the secret
contents are protected. Everything here is immutable once built.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset, secrets or config input."""


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    secret_ids: frozenset = frozenset()
    payload: Optional[tuple] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError("example id must be a nonempty string")
        object.__setattr__(self, "secret_ids", frozenset(self.secret_ids))
        if self.payload is not None:
            object.__setattr__(self, "payload", tuple(float(v) for v in self.payload))


@dataclass(frozen=True)
class SecretSpec:
    """A secret with its prior reconstruction probability and target posterior."""

    id: str
    prior_p: float
    posterior_r: float

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError("secret id must be a nonempty string")
        p, r = float(self.prior_p), float(self.posterior_r)
        if not (0.0 < p < 1.0):
            raise DatasetError(f"secret {self.id!r}: prior must lie in (0, 1), got {p}")
        if not r <= 1.0:
            raise DatasetError(f"secret {self.id!r}: posterior must be at most 1, got {r}")
        if not p < r:
            raise DatasetError(
                f"secret {self.id!r}: posterior must exceed prior (p={p}, r={r})"
            )
        object.__setattr__(self, "prior_p", p)
        object.__setattr__(self, "posterior_r", r)


@dataclass(frozen=True)
class SecretMap:
    """Examples, secrets and the secret -> example-index incidence.

    Build with :meth:`build`; the incidence is derived from the examples'
    ``secret_ids`` and is always consistent with them.
    """

    examples: tuple
    secrets: tuple
    incidence: Mapping[str, tuple] = field(repr=False)

    @classmethod
    def build(cls, examples: Iterable[ExampleRecord], secrets: Iterable[SecretSpec]) -> "SecretMap":
        examples = tuple(examples)
        secrets = tuple(secrets)
        seen = set()
        for ex in examples:
            if ex.id in seen:
                raise DatasetError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
        incidence: dict[str, list] = {}
        for s in secrets:
            if s.id in incidence:
                raise DatasetError(f"duplicate secret id {s.id!r}")
            incidence[s.id] = []
        for i, ex in enumerate(examples):
            for sid in ex.secret_ids:
                if sid not in incidence:
                    raise DatasetError(f"example {ex.id!r} references unknown secret {sid!r}")
                incidence[sid].append(i)
        for sid, idx in incidence.items():
            if not idx:
                logger.warning("secret %r appears in no example; its constraint is vacuous", sid)
        frozen = {sid: tuple(sorted(idx)) for sid, idx in incidence.items()}
        return cls(examples, secrets, frozen)

    @property
    def n(self) -> int:
        return len(self.examples)

    @property
    def m(self) -> int:
        return len(self.secrets)

    def secret(self, secret_id: str) -> SecretSpec:
        for s in self.secrets:
            if s.id == secret_id:
                return s
        raise KeyError(secret_id)

    def group(self, secret_id: str) -> tuple:
        """Indices of the examples containing ``secret_id``."""
        return self.incidence[secret_id]

    def payload_matrix(self) -> np.ndarray:
        """Stack example payloads into an ``(n, d)`` float array."""
        if any(ex.payload is None for ex in self.examples):
            raise DatasetError("every example needs a payload for training")
        if not self.examples:
            return np.zeros((0, 0))
        return np.array([ex.payload for ex in self.examples], dtype=np.float64)


def filter_secretless(smap: SecretMap) -> SecretMap:
    """Drop examples that contain no secret, re-indexing the incidence."""
    kept = [ex for ex in smap.examples if ex.secret_ids]
    if len(kept) == len(smap.examples):
        return smap
    return SecretMap.build(kept, smap.secrets)


@dataclass(frozen=True)
class RunConfig:
    """Calibration and training parameters.

    ``cap_scale`` sets the unit of ``lp_constant``: the LP capacity of
    secret j is ``lp_constant * cap_scale * mu_j``.
    """

    batch_target: float
    rounds: int
    clip_norm: float
    lp_constant: float
    seed: int = 0
    drop_secretless: bool = False
    cap_scale: float = 1.0

    def __post_init__(self):
        for name in ("batch_target", "clip_norm", "lp_constant", "cap_scale"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DatasetError(f"config field {name!r} must be a positive number, got {v!r}")
        if isinstance(self.rounds, bool) or not isinstance(self.rounds, int) or self.rounds < 1:
            raise DatasetError(f"config field 'rounds' must be a positive integer, got {self.rounds!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise DatasetError(f"config field 'seed' must be an integer, got {self.seed!r}")
        if not isinstance(self.drop_secretless, bool):
            raise DatasetError("config field 'drop_secretless' must be a boolean")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DatasetError(f"unknown config keys: {sorted(unknown)}")
        required = {"batch_target", "rounds", "clip_norm", "lp_constant"}
        missing = required - set(data)
        if missing:
            raise DatasetError(f"missing config keys: {sorted(missing)}")
        return cls(**data)


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse {what} {path}: {exc}") from exc


def load_secrets(path) -> list:
    data = _read_json(path, "secrets file")
    if not isinstance(data, list):
        raise DatasetError("secrets file must hold a JSON array")
    out = []
    for entry in data:
        try:
            out.append(SecretSpec(entry["id"], entry["p"], entry["r"]))
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"bad secret entry {entry!r}") from exc
    return out


def load_examples(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(ExampleRecord(obj["id"], obj.get("secrets", []), obj.get("payload")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: cannot parse example: {exc}") from exc
    return out


def load_dataset(manifest_path, secrets_path) -> SecretMap:
    """Read a JSON-lines manifest and a secrets file into a validated SecretMap."""
    return SecretMap.build(load_examples(manifest_path), load_secrets(secrets_path))


def load_config(path) -> RunConfig:
    data = _read_json(path, "config")
    if not isinstance(data, dict):
        raise DatasetError("config must be a JSON object")
    return RunConfig.from_dict(data)


def write_dataset(smap: SecretMap, manifest_path, secrets_path) -> None:
    with open(manifest_path, "w") as fh:
        for ex in smap.examples:
            obj = {"id": ex.id, "secrets": sorted(ex.secret_ids)}
            if ex.payload is not None:
                obj["payload"] = list(ex.payload)
            fh.write(json.dumps(obj) + "\n")
    Path(secrets_path).write_text(
        json.dumps([{"id": s.id, "p": s.prior_p, "r": s.posterior_r} for s in smap.secrets], indent=1)
    )

