#!/usr/bin/env python3
""" RunConfig: every tunable of the pipeline, from a `key = value` file
plus command line overrides """

import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, NamedTuple, Optional, Tuple

from cvnuclei.decoding import DecodeParams
from cvnuclei.encoding import EncodeParams
from cvnuclei.losses import LossWeights, MSReduction
from cvnuclei.randomwalker import RWParams
from cvnuclei.raster import Connectivity, RasterShape
from cvnuclei.synth import CorruptionParams, SynthParams


LOG = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class RunConfig(NamedTuple):
    encode: EncodeParams = EncodeParams()
    decode: DecodeParams = DecodeParams()
    rw: RWParams = RWParams()
    loss: LossWeights = LossWeights()
    ms_reduction: MSReduction = MSReduction.SUM
    synth: SynthParams = SynthParams()
    corrupt: CorruptionParams = CorruptionParams()

    def validate(self) -> "RunConfig":
        for params in (
            self.encode,
            self.decode,
            self.rw,
            self.loss,
            self.synth,
            self.corrupt,
        ):
            try:
                params.validate()
            except ValueError as ve:
                raise ConfigError(str(ve))
        return self


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"{value!r} is not a boolean")


SYNTH_SHAPE_FIELDS = ("height", "width", "radius_min", "radius_max")

# key -> (section, field, parser)
KEYS: Dict[str, Tuple[str, str, Callable[[str], Any]]] = {
    "encode.erosion_radius": ("encode", "erosion_radius", int),
    "encode.center_distance_threshold": ("encode", "center_distance_threshold", float),
    "encode.connectivity": ("encode", "connectivity", Connectivity.parse),
    "decode.inside_threshold": ("decode", "inside_threshold", float),
    "decode.center_threshold": ("decode", "center_threshold", float),
    "decode.connectivity": ("decode", "connectivity", Connectivity.parse),
    "decode.min_instance_area": ("decode", "min_instance_area", int),
    "rw.beta": ("rw", "beta", float),
    "rw.cg_tolerance": ("rw", "cg_tolerance", float),
    "rw.cg_max_iters": ("rw", "cg_max_iters", int),
    "rw.connectivity": ("rw", "connectivity", Connectivity.parse),
    "loss.alpha": ("loss", "alpha", float),
    "loss.beta": ("loss", "beta", float),
    "loss.gamma": ("loss", "gamma", float),
    "loss.ms_reduction": ("ms_reduction", "", MSReduction),
    "synth.seed": ("synth", "seed", int),
    "synth.height": ("synth", "height", int),
    "synth.width": ("synth", "width", int),
    "synth.nucleus_count": ("synth", "nucleus_count", int),
    "synth.radius_min": ("synth", "radius_min", float),
    "synth.radius_max": ("synth", "radius_max", float),
    "synth.eccentricity_max": ("synth", "eccentricity_max", float),
    "synth.allow_touching": ("synth", "allow_touching", _parse_bool),
    "synth.max_overlap_fraction": ("synth", "max_overlap_fraction", float),
    "corrupt.seed": ("corrupt", "seed", int),
    "corrupt.mask_noise_sigma": ("corrupt", "mask_noise_sigma", float),
    "corrupt.vector_noise_sigma": ("corrupt", "vector_noise_sigma", float),
    "corrupt.boundary_dilation": ("corrupt", "boundary_dilation", int),
}


def parse_assignments(
    lines: Iterable[str], source: str = "<overrides>"
) -> Dict[str, str]:
    """`key = value` lines; `#` starts a comment, blank lines are skipped"""
    assignments: Dict[str, str] = {}
    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{source}:{line_number}: unknown key {key!r}")
        if key in assignments:
            raise ConfigError(f"{source}:{line_number}: duplicate key {key!r}")
        assignments[key] = value
    return assignments


def apply_assignments(config: RunConfig, assignments: Dict[str, str]) -> RunConfig:
    sections: Dict[str, Dict[str, Any]] = {}
    synth_extra: Dict[str, Any] = {}
    for key, value in assignments.items():
        section, field, parser = KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as ve:
            raise ConfigError(f"{key}: {ve}")
        if section == "ms_reduction":
            config = config._replace(ms_reduction=parsed)
        elif section == "synth" and field in SYNTH_SHAPE_FIELDS:
            synth_extra[field] = parsed
        else:
            sections.setdefault(section, {})[field] = parsed

    for section, fields in sections.items():
        updated = getattr(config, section)._replace(**fields)
        config = config._replace(**{section: updated})

    if synth_extra:
        synth = config.synth
        height, width = synth.shape
        low, high = synth.radius_range
        config = config._replace(
            synth=synth._replace(
                shape=RasterShape(
                    synth_extra.get("height", height), synth_extra.get("width", width)
                ),
                radius_range=(
                    synth_extra.get("radius_min", low),
                    synth_extra.get("radius_max", high),
                ),
            )
        )
    return config


def load_run_config(
    config_path: Optional[Path] = None, overrides: Iterable[str] = ()
) -> RunConfig:
    """Defaults, then the config file, then overrides (flags win)"""
    config = RunConfig()
    if config_path is not None:
        if not config_path.exists():
            raise ConfigError(f"{config_path} does not exist")
        with config_path.open("r") as cfp:
            config = apply_assignments(config, parse_assignments(cfp, str(config_path)))
        LOG.debug(f"Loaded run config from {config_path}")

    config = apply_assignments(config, parse_assignments(overrides))
    return config.validate()
