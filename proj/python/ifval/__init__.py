"""Influence-function validation: training, influence estimation, and
leave-one-out ground truth for small dense networks."""

try:
    from ._ifval import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _ifval import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
