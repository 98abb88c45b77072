"""Dynamic-trace kernel extraction toolkit.

Simulates control-flow-graph programs into block/address traces, stores
them compactly, and mines the traces for recurring kernels and the
producer-consumer pipeline between kernel instances.
"""

__version__ = "0.1.0"
