"""Toolkit for two-step VLM banner-ad layout generation and evaluation.

The usual entry points:

- :mod:`adlayout.layout` for the HTML layout codec and rectangle geometry
- :mod:`adlayout.metrics` for rule-based scores and the violation checker
- :mod:`adlayout.pipeline` for generation runs
- :mod:`adlayout.cli` for the ``adlayout`` command
"""

__version__ = "0.1.0"
