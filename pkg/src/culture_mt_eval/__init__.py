"""Evaluation harness for machine translation of culture-loaded expressions.

Modules: :mod:`.corpus`, :mod:`.surface_metrics`, :mod:`.judge`,
:mod:`.acre`, :mod:`.error_taxonomy`, :mod:`.meta_eval`, :mod:`.mining`,
:mod:`.mt_runner` and the command line in :mod:`.cli`.
"""
__version__ = "0.1.0"
