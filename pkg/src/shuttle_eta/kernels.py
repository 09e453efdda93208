"""Backend selection for the tree kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Both grow identical trees, so the choice only affects speed.
"""

from __future__ import annotations

import logging
from types import ModuleType

from . import _tree_py

logger = logging.getLogger(__name__)

try:
    from . import _tree_ext  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _tree_ext = None

SQUARED = _tree_py.SQUARED
GINI = _tree_py.GINI

_BACKENDS = {"python": _tree_py}
if _tree_ext is not None:
    _BACKENDS["compiled"] = _tree_ext

_active: ModuleType = _tree_ext if _tree_ext is not None else _tree_py


def available_backends() -> list:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return "compiled" if _active is _tree_ext and _tree_ext is not None else "python"


def use_backend(name: str) -> str:
    """Switch the active backend; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev = backend_name()
    _active = _BACKENDS[name]
    logger.debug("tree backend: %s", name)
    return prev


def build_tree(*args, **kwargs):
    return _active.build_tree(*args, **kwargs)


def predict_tree(*args, **kwargs):
    return _active.predict_tree(*args, **kwargs)


def predict_sum(X, trees, init: float = 0.0):
    return _active.predict_sum(X, trees, init)
