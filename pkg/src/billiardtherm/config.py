"""Run configuration, YAML round-trip, and run manifests.

A RunConfig is one self-contained description of an experiment: geometry,
discretization, solver, sweep, two-particle, thermostat-sampling, and output
settings.  It serializes losslessly to a nested YAML document; the SHA-256 of
the canonical form identifies a run and keys its cache entries and manifest.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError
from .geometry import DomainSpec, Rectangle, SinaiElementary, TwoBox


@dataclass
class GeometryConfig:
    kind: str = "sinai"              # sinai | rectangle | twobox
    lx: float = 1.09
    ly: float = 1.00
    radius: float = 0.5
    lx_left: float = 1.1
    lx_right: float = 1.3
    box_ly: float = 1.4
    wall: float = 0.001

    def billiard_spec(self) -> DomainSpec:
        if self.kind == "sinai":
            return SinaiElementary(self.lx, self.ly, self.radius)
        if self.kind == "rectangle":
            return Rectangle(self.lx, self.ly)
        raise ConfigError(f"geometry kind '{self.kind}' is not a billiard")

    def twobox_spec(self) -> TwoBox:
        return TwoBox(self.lx_left, self.lx_right, self.box_ly, self.wall)


@dataclass
class MeshConfig:
    resolution: int = 100
    arc_points: int | None = None    # default 2 * resolution
    order: int = 2


@dataclass
class EigenConfig:
    levels: int = 800
    tol: float = 1e-8
    window: int = 150
    seed: int = 12345
    dense_cutoff: int = 3000


@dataclass
class PressureConfig:
    dlam: float = 0.01
    samples: int = 5
    smoothing_window: int = 25
    params: tuple = ("lx", "ly")


@dataclass
class TwoParticleConfig:
    # Engine coupling in units 1/L. The reference strong-coupling experiments
    # use -25.0; see the README note on the coupling-label convention.
    coupling: float = -25.0
    pair_target: int = 1500
    e_cut: float | None = None
    quad_points: int = 48
    time_max: float = 100.0
    time_points: int = 2000
    trust_fraction: float = 0.8
    balance_count: int = 1000


@dataclass
class ThermoConfig:
    pair_target: int = 3000
    initial_mismatch: float = 0.5
    final_mismatch: float = 0.1
    sample_e_min: float = 15.0
    sample_e_max_fraction: float = 0.62
    max_samples: int | None = None
    bins: int = 4


@dataclass
class OutputConfig:
    directory: str = "out"
    cache_directory: str | None = None   # default: <directory>/cache
    write_vectors: bool = False


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    pressure: PressureConfig = field(default_factory=PressureConfig)
    twoparticle: TwoParticleConfig = field(default_factory=TwoParticleConfig)
    thermo: ThermoConfig = field(default_factory=ThermoConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pressure"]["params"] = list(d["pressure"]["params"])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        sections = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for name, value in data.items():
            if name not in sections:
                raise ConfigError(f"unknown config section '{name}'")
            section_cls = {
                "geometry": GeometryConfig, "mesh": MeshConfig, "eigen": EigenConfig,
                "pressure": PressureConfig, "twoparticle": TwoParticleConfig,
                "thermo": ThermoConfig, "output": OutputConfig,
            }[name]
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{name}' must be a mapping")
            known = {f.name for f in fields(section_cls)}
            bad = set(value) - known
            if bad:
                raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")
            if name == "pressure" and "params" in value:
                value = dict(value, params=tuple(value["params"]))
            kwargs[name] = section_cls(**value)
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"),
                          default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_yaml(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc


@dataclass
class RunManifest:
    """Provenance record referenced by every CSV a run produces."""

    config_hash: str
    version: str = __version__
    created: str = ""
    stages: dict = field(default_factory=dict)     # stage name -> seconds
    warnings: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)     # full resolved RunConfig

    def __post_init__(self):
        if not self.created:
            self.created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    @property
    def filename(self) -> str:
        return f"manifest_{self.config_hash[:12]}.yaml"

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / self.filename
        path.write_text(yaml.safe_dump(asdict(self), sort_keys=False))
        return path


class StageTimer:
    """Collects per-stage wall time into a manifest."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __call__(self, name: str):
        return _StageContext(self.manifest, name)


class _StageContext:
    def __init__(self, manifest, name):
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.stages[self.name] = round(time.perf_counter() - self.t0, 3)
        return False
