"""Attention phase analysis, DPP token selection and hallucination metrics."""

import json
import os
from pathlib import Path

from . import _core
from ._core import FocusgateError, build_kernel, greedy_map, image_var, retained_count, similarity_matrix, topk_select

__all__ = [
    "FocusgateError",
    "build_kernel",
    "caption_metrics",
    "compare_conditions",
    "detect_phases",
    "greedy_map",
    "image_var",
    "main",
    "read_header",
    "retained_count",
    "similarity_matrix",
    "synth",
    "topk_select",
]

# Installed next to the compiled module; editable installs keep the sources elsewhere.
_DATA = Path(_core.__file__).resolve().parent / "data"
if _DATA.is_dir():
    os.environ.setdefault("FOCUSGATE_DATA", str(_DATA))


def read_header(path):
    return json.loads(_core.header_json(os.fspath(path)))


def detect_phases(path, lambda_=2.0, baseline_fraction=0.25, window_fraction=0.30):
    """Phase boundaries of a vision trace. window_fraction=None picks the window from the R curve."""
    return json.loads(_core.phases_json(os.fspath(path), lambda_, baseline_fraction, window_fraction))


def caption_metrics(captions, annotations, lexicon=None, pooled=False, suite="amber"):
    if lexicon is None:
        lexicon = Path(os.environ.get("FOCUSGATE_DATA", _DATA)) / "lexicon" / "coco80.json"
    return json.loads(
        _core.metrics_json(os.fspath(captions), os.fspath(annotations), os.fspath(lexicon), pooled, suite)
    )


def compare_conditions(a, b):
    return json.loads(_core.welch_json(list(a), list(b)))


def synth(spec, out):
    _core.synth(json.dumps(spec), os.fspath(out))


def main(argv=None):
    import sys

    return _core.run_cli(list(sys.argv[1:] if argv is None else argv))
