"""Runtime configuration: one JSON document plus GAZEMANIP_* env overrides.

The file is optional; every field has a default that runs the offline oracle
pipeline. Environment variables override the file, which override defaults,
so a deployment can retarget the backend or loosen gaze thresholds without
editing anything on disk.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendConfig
from .gaze import GazeConfig
from .panel import PanelLayout

DEFAULT_PORT = 8080
DEFAULT_SEGMENT_MARGIN_PX = 20

# env var -> (section, field, parser)
_ENV_OVERRIDES = {
    "GAZEMANIP_PORT": ("", "port", int),
    "GAZEMANIP_SEGMENT_MARGIN_PX": ("", "segment_margin_px", int),
    "GAZEMANIP_BACKEND_KIND": ("backend", "kind", str),
    "GAZEMANIP_BACKEND_ENDPOINT": ("backend", "endpoint", str),
    "GAZEMANIP_BACKEND_MODEL": ("backend", "model", str),
    "GAZEMANIP_BACKEND_API_KEY_ENV": ("backend", "api_key_env", str),
    "GAZEMANIP_BACKEND_TIMEOUT_S": ("backend", "timeout_s", float),
    "GAZEMANIP_DISPERSION_PX": ("gaze", "dispersion_px", float),
    "GAZEMANIP_MIN_DURATION_S": ("gaze", "min_duration_s", float),
    "GAZEMANIP_MAX_BASELINE_M": ("gaze", "max_baseline_m", float),
}


@dataclass(frozen=True)
class AppConfig:
    backend: BackendConfig = field(default_factory=lambda: BackendConfig("oracle"))
    gaze: GazeConfig = field(default_factory=GazeConfig)
    panel: PanelLayout = field(default_factory=PanelLayout)
    segment_margin_px: int = DEFAULT_SEGMENT_MARGIN_PX
    port: int = DEFAULT_PORT

    def to_dict(self) -> dict:
        return {
            "backend": self.backend.to_dict(),
            "gaze": {
                "dispersion_px": self.gaze.dispersion_px,
                "min_duration_s": self.gaze.min_duration_s,
                "projection_step": self.gaze.projection_step,
                "merge_gap_s": self.gaze.merge_gap_s,
                "max_baseline_m": self.gaze.max_baseline_m,
            },
            "panel": self.panel.to_dict(),
            "segment_margin_px": self.segment_margin_px,
            "port": self.port,
        }


def _merged_sections(doc: dict, env) -> dict:
    sections = {
        "": {k: doc[k] for k in ("port", "segment_margin_px") if k in doc},
        "backend": dict(doc.get("backend", {})),
        "gaze": dict(doc.get("gaze", {})),
    }
    for var, (section, name, parse) in _ENV_OVERRIDES.items():
        raw = env.get(var)
        if raw is None or raw == "":
            continue
        try:
            sections[section][name] = parse(raw)
        except ValueError as e:
            raise ValueError(f"bad value for {var}: {raw!r}") from e
    return sections


def load_config(path: str | Path | None = None, env=None) -> AppConfig:
    """Build an AppConfig from an optional JSON file and the environment."""
    env = os.environ if env is None else env
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValueError(f"config root must be a JSON object: {path}")
    sections = _merged_sections(doc, env)

    backend_doc = {"kind": "oracle"}
    backend_doc.update(sections["backend"])
    defaults = AppConfig()
    return AppConfig(
        backend=BackendConfig.from_dict(backend_doc),
        gaze=GazeConfig(**sections["gaze"]) if sections["gaze"] else defaults.gaze,
        panel=(PanelLayout.from_dict(doc["panel"]) if "panel" in doc
               else defaults.panel),
        segment_margin_px=sections[""].get("segment_margin_px",
                                           DEFAULT_SEGMENT_MARGIN_PX),
        port=sections[""].get("port", DEFAULT_PORT),
    )
