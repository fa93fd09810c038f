"""Pipeline configuration: a sectioned ``key = value`` file plus flag overrides.

Example::

    [rgb]
    tau = 0.2
    kernel = 9
    splat_radius = 3
    k1 = 5
    k2 = 15

    [ablation]
    occlusion = true

    [remap]
    # source class = target class
    7 = 3

Every algorithm constant has a default here, so an empty file is valid.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError
from .register import IcpParams
from .render import MODALITY_PRESETS, RenderConfig

# config-file key -> RenderConfig field
_RENDER_KEYS = {
    "tau": ("occlusion_tau", float),
    "kernel": ("occlusion_kernel", int),
    "splat_radius": ("splat_radius", int),
    "k1": ("knn_pass1_k", int),
    "k2": ("knn_pass2_k", int),
}
_ABLATION_KEYS = {"occlusion": "enable_occlusion", "splat": "enable_splat", "depth_fill": "enable_depth_guided"}


@dataclass(frozen=True)
class LiftParams:
    cell_size: float = 25.0
    k_complete: int = 10
    k_denoise: int = 10
    tie_break: str = "rare"

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.k_complete < 1 or self.k_denoise < 1:
            raise ValueError("k_complete and k_denoise must be >= 1")
        if self.tie_break not in ("rare", "common"):
            raise ValueError("tie_break must be 'rare' or 'common'")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines pipeline outputs, plus the worker count (which does not)."""

    presets: dict = field(default_factory=lambda: dict(MODALITY_PRESETS))
    enable_occlusion: bool = True
    enable_splat: bool = True
    enable_depth_guided: bool = True
    lift: LiftParams = field(default_factory=LiftParams)
    icp: IcpParams = field(default_factory=IcpParams)
    remap: dict = field(default_factory=dict)
    class_names: tuple = ()
    modality: str = "rgb"
    workers: int = 1

    def __post_init__(self):
        if self.modality not in self.presets:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for k, v in self.remap.items():
            if not (0 <= k <= 255 and 0 <= v <= 255):
                raise ValueError(f"remap entry {k} = {v} is outside 0..255")

    def render_config(self, modality: str = None) -> RenderConfig:
        base = self.presets[modality or self.modality]
        return replace(
            base,
            enable_occlusion=self.enable_occlusion,
            enable_splat=self.enable_splat,
            enable_depth_guided=self.enable_depth_guided,
        )

    def remap_lut(self) -> np.ndarray:
        lut = np.arange(256, dtype=np.uint8)
        for k, v in self.remap.items():
            lut[k] = v
        return lut

    def apply_remap(self, labels: np.ndarray) -> np.ndarray:
        return self.remap_lut()[labels] if self.remap else labels

    def to_dict(self) -> dict:
        icp = asdict(self.icp)
        icp["initial_guess"] = self.icp.initial_guess.matrix.tolist()
        return {
            "presets": {m: asdict(c) for m, c in sorted(self.presets.items())},
            "ablation": {
                "occlusion": self.enable_occlusion,
                "splat": self.enable_splat,
                "depth_fill": self.enable_depth_guided,
            },
            "lift": asdict(self.lift),
            "icp": icp,
            "remap": {str(k): v for k, v in sorted(self.remap.items())},
            "classes": list(self.class_names),
            "modality": self.modality,
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; the worker count is excluded."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ParseError(str(exc).splitlines()[0], path) from None
        try:
            return cls.from_parser(parser)
        except (ValueError, KeyError) as exc:
            raise ParseError(str(exc), path) from None

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "PipelineConfig":
        known = {"rgb", "thermal", "ablation", "lift", "icp", "remap", "classes", "run"}
        unknown = set(parser.sections()) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        presets = dict(MODALITY_PRESETS)
        for modality in ("rgb", "thermal"):
            if parser.has_section(modality):
                presets[modality] = replace(presets[modality], **_render_overrides(parser[modality]))
        kw = {"presets": presets}
        if parser.has_section("ablation"):
            sec = parser["ablation"]
            _check_keys(sec, _ABLATION_KEYS)
            for key, attr in _ABLATION_KEYS.items():
                if key in sec:
                    kw[attr] = sec.getboolean(key)
        if parser.has_section("lift"):
            sec = parser["lift"]
            types = {"cell_size": float, "k_complete": int, "k_denoise": int, "tie_break": str}
            _check_keys(sec, types)
            kw["lift"] = LiftParams(**{k: types[k](sec[k]) for k in sec})
        if parser.has_section("icp"):
            sec = parser["icp"]
            types = {"max_iterations": int, "convergence_tol": float,
                     "max_correspondence_dist": float, "subsample_voxel": float}
            _check_keys(sec, types)
            kw["icp"] = IcpParams(**{k: types[k](sec[k]) for k in sec})
        if parser.has_section("remap"):
            kw["remap"] = {int(k): int(v) for k, v in parser["remap"].items()}
        if parser.has_section("classes"):
            ids = sorted(int(k) for k in parser["classes"])
            if ids != list(range(1, len(ids) + 1)):
                raise ValueError("[classes] ids must be 1..C without gaps")
            kw["class_names"] = tuple(parser["classes"][str(i)] for i in ids)
        if parser.has_section("run"):
            sec = parser["run"]
            _check_keys(sec, {"modality": str, "workers": int})
            if "modality" in sec:
                kw["modality"] = sec["modality"]
            if "workers" in sec:
                kw["workers"] = sec.getint("workers")
        return cls(**kw)

    def with_overrides(self, modality: str = None, workers: int = None, no_occlusion: bool = False,
                       no_splat: bool = False, no_depth_fill: bool = False, **render) -> "PipelineConfig":
        """Apply command-line flags; ``render`` takes the config-file keys (tau, kernel, ...)."""
        cfg = self
        if modality is not None:
            cfg = replace(cfg, modality=modality)
        if workers is not None:
            cfg = replace(cfg, workers=workers)
        render = {k: v for k, v in render.items() if v is not None}
        if render:
            presets = dict(cfg.presets)
            presets[cfg.modality] = replace(presets[cfg.modality], **_render_overrides(render))
            cfg = replace(cfg, presets=presets)
        if no_occlusion:
            cfg = replace(cfg, enable_occlusion=False)
        if no_splat:
            cfg = replace(cfg, enable_splat=False)
        if no_depth_fill:
            cfg = replace(cfg, enable_depth_guided=False)
        return cfg


def _check_keys(section, allowed) -> None:
    extra = set(section) - set(allowed)
    if extra:
        raise ValueError(f"unknown keys {sorted(extra)} in [{getattr(section, 'name', '?')}]")


def _render_overrides(section) -> dict:
    _check_keys(section, _RENDER_KEYS)
    return {_RENDER_KEYS[k][0]: _RENDER_KEYS[k][1](section[k]) for k in section}
