"""Pipeline configuration: one JSON document, four sections.

``model`` and ``train`` map onto the ModelConfig and TrainConfig
dataclasses; ``saliency`` holds the RoG and curvature parameter groups;
``selection`` fixes how many patches are kept and in what order they are
fed to the model.  Unknown keys anywhere are an error, and every CLI run
writes the fully resolved document back out so the run can be reproduced
from the snapshot alone.

Overrides use dotted keys, e.g. ``train.base_lr=0.01`` or
``saliency.rog.tau=0``.  Values are parsed as JSON when possible (numbers,
booleans, null) and fall back to plain strings.
"""

import dataclasses
import json
import typing
from dataclasses import dataclass

from .errors import ParameterError
from .model import ModelConfig
from .saliency import CurvatureParams, RogParams
from .training import TrainConfig


@dataclass(frozen=True)
class SelectionConfig:
    """How many patches to keep: an explicit count or a fraction of the grid.

    With both unset all patches are kept.  ``order`` is the feed order of
    the kept patches: "salience" (score-descending) or "raster".
    """

    m: int | None = None
    fraction: float | None = None
    order: str = "salience"

    def __post_init__(self):
        if self.m is not None and self.fraction is not None:
            raise ParameterError("selection: give m or fraction, not both")
        if self.m is not None and self.m < 1:
            raise ParameterError(f"selection.m must be >= 1, got {self.m}")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ParameterError(
                f"selection.fraction must be in (0, 1], got {self.fraction}"
            )
        if self.order not in ("salience", "raster"):
            raise ParameterError(
                f"selection.order must be 'salience' or 'raster', got {self.order!r}"
            )

    def resolve_m(self, total_patches: int) -> int:
        if self.m is not None:
            if self.m > total_patches:
                raise ParameterError(
                    f"selection.m={self.m} exceeds the {total_patches}-patch grid"
                )
            return self.m
        if self.fraction is not None:
            return max(1, round(self.fraction * total_patches))
        return total_patches


@dataclass(frozen=True)
class PipelineConfig:
    model: ModelConfig
    train: TrainConfig
    rog: RogParams
    curvature: CurvatureParams
    selection: SelectionConfig


def default_config() -> PipelineConfig:
    return PipelineConfig(
        model=ModelConfig(),
        train=TrainConfig(),
        rog=RogParams(),
        curvature=CurvatureParams(),
        selection=SelectionConfig(),
    )


_TYPE_NAMES = {int: "an integer", float: "a number", str: "a string"}


def _check_value_types(cls, data: dict, where: str) -> None:
    hints = typing.get_type_hints(cls)
    for key, value in data.items():
        want = hints[key]
        args = typing.get_args(want)
        if args:  # the only unions in the config are X | None
            if value is None:
                continue
            want = next(a for a in args if a is not type(None))
        if want is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif want is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, want)
        if not ok:
            raise ParameterError(
                f"{where}.{key}: expected {_TYPE_NAMES.get(want, want.__name__)}, got {value!r}"
            )


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ParameterError(f"config section {where!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ParameterError(f"unknown config keys under {where!r}: {unknown}")
    _check_value_types(cls, data, where)
    return cls(**data)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "saliency": {
            "rog": dataclasses.asdict(cfg.rog),
            "curvature": dataclasses.asdict(cfg.curvature),
        },
        "selection": dataclasses.asdict(cfg.selection),
    }


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ParameterError("config root must be a JSON object")
    unknown = sorted(set(data) - {"model", "train", "saliency", "selection"})
    if unknown:
        raise ParameterError(f"unknown config sections: {unknown}")
    sal = data.get("saliency", {})
    if not isinstance(sal, dict) or set(sal) - {"rog", "curvature"}:
        raise ParameterError("config section 'saliency' must hold 'rog' and 'curvature'")
    return PipelineConfig(
        model=_build(ModelConfig, data.get("model", {}), "model"),
        train=_build(TrainConfig, data.get("train", {}), "train"),
        rog=_build(RogParams, sal.get("rog", {}), "saliency.rog"),
        curvature=_build(CurvatureParams, sal.get("curvature", {}), "saliency.curvature"),
        selection=_build(SelectionConfig, data.get("selection", {}), "selection"),
    )


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_override(text: str):
    """Split 'dotted.key=value' and JSON-decode the value when possible."""
    if "=" not in text:
        raise ParameterError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ParameterError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(cfg: PipelineConfig, overrides) -> PipelineConfig:
    """Apply dotted-key overrides and rebuild (so invariants re-check)."""
    data = config_to_dict(cfg)
    for text in overrides or ():
        key, value = parse_override(text)
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ParameterError(f"override {key!r}: no such config key")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ParameterError(f"override {key!r}: no such config key")
        node[leaf] = value
    return config_from_dict(data)
