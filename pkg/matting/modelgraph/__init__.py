from matting.modelgraph.accounting import (
    AccountingReport,
    LayerCost,
    account,
    attention_costs,
    check_expectations,
    count_flops,
    count_params,
    infer_shapes,
)
from matting.modelgraph.schema import LayerSpec, ModelGraph, load_graph, parse_graph
from matting.modelgraph.search import SearchResult, search_attention_config

__all__ = [
    "AccountingReport",
    "LayerCost",
    "LayerSpec",
    "ModelGraph",
    "SearchResult",
    "account",
    "attention_costs",
    "check_expectations",
    "count_flops",
    "count_params",
    "infer_shapes",
    "load_graph",
    "parse_graph",
    "search_attention_config",
]
