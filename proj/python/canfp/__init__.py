"""Driver re-identification from CAN bus logs."""

import json as _json
from pkgutil import extend_path

# Lets an in-tree build directory supply the compiled module.
__path__ = extend_path(__path__, __name__)

from ._canfp import (  # noqa: E402
    Error,
    Frame,
    classify_channels,
    conv1d,
    extract_channels,
    format_frame,
    gradcheck,
    make_windows,
    parse_frame_line,
    parse_log,
    published_one_vs_all,
    set_progress,
    write_log,
)
from . import _canfp  # noqa: E402


def default_layout():
    return _json.loads(_canfp.default_layout_json())


def planted_layout(noise_channels, period_s=0.01):
    return _json.loads(_canfp.planted_layout_json(noise_channels, period_s))


def gen_trace(profile, duration_s, seed, layout=None):
    """Synthetic frames for one driver profile (dict) on a bus layout (dict)."""
    return _canfp.gen_trace(_json.dumps(profile), duration_s, seed, _json.dumps(layout) if layout else "")


def run_pipeline(config, commands):
    """Runs pipeline commands for a config dict and returns their outputs."""
    if isinstance(commands, str):
        commands = [commands]
    return _json.loads(_canfp.run_pipeline(_json.dumps(config, default=str), list(commands)))


__all__ = [
    "Error",
    "Frame",
    "classify_channels",
    "conv1d",
    "default_layout",
    "extract_channels",
    "format_frame",
    "gen_trace",
    "gradcheck",
    "make_windows",
    "parse_frame_line",
    "parse_log",
    "planted_layout",
    "published_one_vs_all",
    "run_pipeline",
    "set_progress",
    "write_log",
]
