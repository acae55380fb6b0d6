"""Energy-based edge-preserving image smoothing.

Images are float64 numpy arrays shaped (H, W, C) with values in [0, 1].
"""

import json as _json

from ._smoothlab import (
    Network,
    SmoothlabError,
    build_targets,
    detail_magnify,
    edge_response,
    energy,
    load_image,
    load_model,
    make_network,
    preset_json,
    save_image,
    smooth,
)

PRESETS = ("flatten", "abstract", "detail", "texture", "content_bg", "content_fg")


def resolve_preset(name="flatten"):
    """Preset parameters and guidance steps as a dict (c1 may be the string "inf")."""
    return _json.loads(preset_json(name))


__all__ = [
    "PRESETS",
    "Network",
    "SmoothlabError",
    "build_targets",
    "detail_magnify",
    "edge_response",
    "energy",
    "load_image",
    "load_model",
    "make_network",
    "preset_json",
    "resolve_preset",
    "save_image",
    "smooth",
]
