"""
Exhaustive search for the attention configuration behind a parameter/GFLOP target.

The space covers embedding width, the kernel of the strided key/value convs,
a bias flag per conv, the output width of the value conv and whether a FLOP
means one MAC or two.
"""
from dataclasses import dataclass, field
import itertools
from typing import List, Optional, Sequence

from matting.attention import AttentionConfig
from matting.modelgraph.accounting import ATTENTION_COMPONENTS, GIGA, attention_costs
from matting.shared.errors import MattingError

EMBED_WIDTHS = (32, 64, 128)
CONVENTIONS = {"macs": 1, "2macs": 2}
# knobs that can change the cost of each component
_RELEVANT = {
    "theta": ("e", "bias_theta"),
    "phi": ("e", "kernel", "bias_phi"),
    "g": ("kernel", "g_out", "bias_g"),
    "w": ("g_out", "bias_w"),
    "qk": ("e",),
    "av": ("g_out",),
}
_KNOB_ORDER = ("e", "kernel", "g_out", "bias_theta", "bias_phi", "bias_g", "bias_w")


@dataclass
class SearchResult:
    target_params: int
    target_gflops: Optional[float]
    input_shape: tuple
    r: int
    components: List[str]
    exact: bool
    evaluated: int
    candidates: List[dict] = field(default_factory=list)

    @property
    def best(self) -> Optional[dict]:
        return self.candidates[0] if self.candidates else None

    def resolved_config(self) -> AttentionConfig:
        """AttentionConfig of the best candidate for the searched input."""
        if not self.candidates:
            raise MattingError("search produced no candidates")
        height, width, channels = self.input_shape
        knobs = self.best["config"]
        return AttentionConfig(d=channels, c_a=channels, r=self.r, **knobs)

    def to_dict(self):
        return {
            "target_params": self.target_params,
            "target_gflops": self.target_gflops,
            "input_shape": list(self.input_shape),
            "r": self.r,
            "components": self.components,
            "exact": self.exact,
            "evaluated": self.evaluated,
            "candidates": self.candidates,
        }


def _space(channels: int, r: int, components: Sequence[str], conventions):
    relevant = [k for k in _KNOB_ORDER if any(k in _RELEVANT[c] for c in components)]
    seen = set()
    for e, kernel, g_choice, biases, convention in itertools.product(
            EMBED_WIDTHS, (1, 2, r), ("c_a", "e"), itertools.product((False, True), repeat=4), conventions):
        knobs = {
            "e": e,
            "kernel": kernel,
            "g_out": channels if g_choice == "c_a" else e,
            "bias_theta": biases[0],
            "bias_phi": biases[1],
            "bias_g": biases[2],
            "bias_w": biases[3],
        }
        signature = tuple(knobs[k] for k in relevant) + (convention,)
        if signature in seen:
            continue
        seen.add(signature)
        yield {k: knobs[k] for k in relevant}, knobs, convention


def search_attention_config(target_params: int = 25984, target_gflops: Optional[float] = 0.1416,
                            input_shape=(64, 64, 128), r: int = 4, components: Sequence[str] = None,
                            limit: int = 10) -> SearchResult:
    """
    Enumerate the space and rank it against the targets.

    Configurations hitting ``target_params`` exactly are all returned, ordered by
    GFLOP distance. When none hits it, the list holds the ``limit`` closest
    parameter counts with their signed discrepancies. Without a GFLOP target the FLOP
    convention is not enumerated.
    """
    components = list(components or ATTENTION_COMPONENTS)
    unknown = [c for c in components if c not in _RELEVANT]
    if unknown:
        raise MattingError(f"unknown attention components {unknown}; expected a subset of {list(_RELEVANT)}")
    height, width, channels = (int(v) for v in input_shape)
    conventions = list(CONVENTIONS) if target_gflops is not None else ["macs"]

    candidates = []
    for index, (config, knobs, convention) in enumerate(_space(channels, r, components, conventions)):
        costs = attention_costs(channels, channels, height, width, r=r, **knobs)
        params = sum(costs[c][0] for c in components)
        macs = sum(costs[c][1] for c in components)
        gflops = CONVENTIONS[convention] * macs * GIGA
        gflops_delta = gflops - target_gflops if target_gflops is not None else None
        candidates.append({
            "config": config,
            "convention": convention,
            "params": params,
            "macs": macs,
            "gflops": gflops,
            "param_delta": params - target_params,
            "gflops_delta": gflops_delta,
            "gflops_rel_error": abs(gflops_delta) / target_gflops if target_gflops else None,
            "_order": index,
        })

    def gflop_distance(c):
        return abs(c["gflops_delta"]) if c["gflops_delta"] is not None else 0.0

    exact = [c for c in candidates if c["param_delta"] == 0]
    if exact:
        ranked = sorted(exact, key=lambda c: (gflop_distance(c), c["_order"]))
    else:
        ranked = sorted(candidates, key=lambda c: (abs(c["param_delta"]), gflop_distance(c), c["_order"]))
    for c in candidates:
        del c["_order"]
    return SearchResult(
        target_params=target_params,
        target_gflops=target_gflops,
        input_shape=(height, width, channels),
        r=r,
        components=components,
        exact=bool(exact),
        evaluated=len(candidates),
        candidates=ranked if exact or not limit else ranked[:limit],
    )
