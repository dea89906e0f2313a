"""
loader.py

Loads named experiment presets for the `analyze` commands from YAML files.

A preset file holds one or more YAML documents, each of the form

    preset:
      name: dense-small
      analysis: density
      n: 8
      p: 31
      trials: 50
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    import yaml
except ImportError:
    yaml = None

from errors import ParseError, UsageError

logger = logging.getLogger("Loader")

PRESET_FILE = Path(__file__).parent / "presets.yaml"

ANALYSES = ("density", "permuted-subset", "dlog-check")

# Settings each analysis understands; anything else in a preset is rejected.
KNOWN_SETTINGS: Dict[str, frozenset] = {
    "density": frozenset({"n", "p", "trials", "seed", "workers"}),
    "permuted-subset": frozenset({"n", "modulus", "seed", "plant"}),
    "dlog-check": frozenset({"p", "g", "seed"}),
}


@dataclass(frozen=True)
class Preset:
    name: str
    analysis: str
    settings: Dict[str, Any] = field(default_factory=dict)


class PresetLoader:
    def __init__(self, preset_path: Path = PRESET_FILE):
        if not yaml:
            raise ImportError("PyYAML is required to load presets.")
        self.preset_path = Path(preset_path)
        self.presets: Dict[str, Preset] = {}
        logger.debug(f"PresetLoader initialized for path: {self.preset_path}")

    def load_all(self) -> PresetLoader:
        """Loads every preset document from the file, or from every *.yaml when given a directory."""
        if self.preset_path.is_dir():
            files = sorted(self.preset_path.glob("*.yaml"))
        elif self.preset_path.is_file():
            files = [self.preset_path]
        else:
            logger.error(f"Preset path not found: {self.preset_path}")
            return self

        for yaml_file in files:
            for doc in self._load_generic_yaml_all(yaml_file):
                if not isinstance(doc, dict) or 'preset' not in doc:
                    logger.warning(f"Skipping a document without 'preset' in {yaml_file.name}")
                    continue
                preset = create_preset_from_dict(doc['preset'], yaml_file.name)
                if preset.name in self.presets:
                    logger.warning(f"Preset '{preset.name}' in {yaml_file.name} replaces an earlier one")
                self.presets[preset.name] = preset
        logger.info(f"Loaded {len(self.presets)} presets from {self.preset_path}")
        return self

    def _load_generic_yaml_all(self, file_path: Path) -> List[Any]:
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return [doc for doc in yaml.safe_load_all(f) if doc]
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise ParseError(f"invalid YAML in {file_path.name}: {e}",
                             position=mark.index if mark is not None else None) from e
        except OSError as e:
            raise ParseError(f"cannot read {file_path}: {e}") from e

    def get_preset(self, name: str, analysis: Optional[str] = None) -> Preset:
        preset = self.presets.get(name)
        if preset is None:
            names = self.names_for(analysis) if analysis is not None else sorted(self.presets)
            raise UsageError(f"unknown preset '{name}' (known: {', '.join(names) or 'none'})")
        if analysis is not None and preset.analysis != analysis:
            known = ", ".join(self.names_for(analysis)) or "none"
            raise UsageError(f"preset '{name}' is for '{preset.analysis}', not '{analysis}' (known: {known})")
        return preset

    def names_for(self, analysis: str) -> List[str]:
        return sorted(name for name, preset in self.presets.items() if preset.analysis == analysis)


# --- Helper Functions ---

def create_preset_from_dict(data: Dict[str, Any], file_name: str = "<memory>") -> Preset:
    """Validates one preset mapping; settings must be integers or booleans."""
    if not isinstance(data, dict):
        raise ParseError(f"preset in {file_name} must be a mapping", path="$.preset")
    name = data.get('name')
    analysis = data.get('analysis')
    if not isinstance(name, str) or not name:
        raise ParseError(f"preset in {file_name} has no name", path="$.preset.name")
    if analysis not in ANALYSES:
        raise ParseError(f"preset '{name}' names unknown analysis '{analysis}'", path="$.preset.analysis")

    settings = {k: v for k, v in data.items() if k not in ('name', 'analysis', 'description')}
    unknown = sorted(set(settings) - KNOWN_SETTINGS[analysis])
    if unknown:
        raise ParseError(f"preset '{name}' has unknown settings: {', '.join(unknown)}",
                         path=f"$.preset.{unknown[0]}")
    for key, value in settings.items():
        if not isinstance(value, (int, bool)):
            raise ParseError(f"preset '{name}': {key} must be an integer", path=f"$.preset.{key}")
    return Preset(name=name, analysis=analysis, settings=settings)
