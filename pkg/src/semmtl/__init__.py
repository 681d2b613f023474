"""Multi-task learning with semantic tagging as an auxiliary task.

A small numpy autodiff engine, bi-LSTM layers, three parameter-sharing
topologies (FSN, PSN, LWS), task models for tagging, dependency parsing and
NLI, a training loop and the comparison-set analysis.
"""
__version__ = "0.1.0"
