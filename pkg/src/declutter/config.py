"""Aggregate configuration, loaded from and saved to JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .candidates import CandidateConfig
from .predictor import GripperSpec, PredictorConfig
from .raster import DEFAULT_CELL_SIZE, GridMeta
from .scene import DEFAULT_BASKET, WORKSPACE, SimConfig
from .setcover import SolverConfig

POLICIES = ("random", "max-height", "max-volume", "segment",
            "hybrid-height", "hybrid-volume", "consolidation")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    height_threshold: float = 0.1
    #: disc radius for max-volume; ``None`` means half the gripper length
    volume_radius: float | None = None
    pca_radius: float | None = None
    #: pixels; ``None`` derives it from the grid (see ``Config.area_threshold``)
    grasp_area_threshold: float | None = None
    staleness_window: int = 31
    staleness_tol: float = 1e-5
    depth_variant: str = "height"
    fill_kernel: int = 3

    def __post_init__(self):
        if self.staleness_window < 1 or self.staleness_window % 2 == 0:
            raise ValueError("staleness_window must be odd and positive")
        if self.depth_variant not in ("height", "volume"):
            raise ValueError(f"unknown depth variant {self.depth_variant!r}")
        for name in ("height_threshold", "staleness_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BenchConfig:
    policies: tuple[str, ...] = ("random", "segment", "consolidation")
    episodes: int = 25
    garments: int = 10
    seed: int = 0
    workers: int = 1
    #: episode step cap, as a multiple of the initial garment count
    step_factor: int = 50
    library_seed: int = 2024

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; choose from {', '.join(POLICIES)}")


@dataclass(frozen=True)
class Config:
    cell_size: float = DEFAULT_CELL_SIZE
    workspace: tuple[float, float] = WORKSPACE
    basket: tuple[float, float] = DEFAULT_BASKET
    gripper: GripperSpec = field(default_factory=GripperSpec)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def grid(self) -> GridMeta:
        return GridMeta.for_workspace(*self.workspace, cell_size=self.cell_size)

    @property
    def nearby_radius(self) -> float:
        return self.candidates.radius(self.gripper)

    @property
    def volume_radius(self) -> float:
        r = self.policy.volume_radius
        return self.gripper.d1 / 2 if r is None else r

    @property
    def pca_radius(self) -> float:
        r = self.policy.pca_radius
        return self.gripper.d1 / 2 if r is None else r

    @property
    def area_threshold(self) -> float:
        """Grasp area threshold in pixels; default is 0.09 m^2 of fabric."""
        t = self.policy.grasp_area_threshold
        return 0.09 / self.cell_size ** 2 if t is None else t

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_overrides(self, **sections) -> Config:
        """``cfg.with_overrides(policy={"staleness_tol": 1e-4}, cell_size=0.004)``"""
        return from_dict(_merge(self.to_dict(), sections))


_SECTIONS = {
    "gripper": GripperSpec, "predictor": PredictorConfig, "candidates": CandidateConfig,
    "solver": SolverConfig, "policy": PolicyConfig, "sim": SimConfig, "bench": BenchConfig,
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def from_dict(data: dict) -> Config:
    data = dict(data)
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kw[name] = _build(cls, data.pop(name), name)
    for name in ("workspace", "basket"):
        if name in data:
            kw[name] = tuple(float(v) for v in data.pop(name))
    return _build(Config, {**data, **kw}, "config")


def load_config(path) -> Config:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from None
    return from_dict(data)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
