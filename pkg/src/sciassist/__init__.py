"""Runtime for transparent, retrieval-grounded multi-agent assistance.

A router/planner/coordinator state graph with helper agents, hybrid
persistent memory, incremental document indexing, schema-validated tools
with provenance envelopes, declarative project bootstrap, and exportable
reasoning traces streamed live over HTTP.
"""

CORE_VERSION = "0.1.0"

__all__ = ["CORE_VERSION"]
