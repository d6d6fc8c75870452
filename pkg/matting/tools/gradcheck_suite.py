"""
Gradient check sweep over every differentiable primitive and the attention block.

Each case builds random inputs from a per-(case, seed) generator and reduces
the primitive's output to a scalar with a fixed positive weighting, so the
weighting ops (mul, sum) are exercised by every case as well.
"""
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from matting import numerics as nx
from matting.attention import AttentionConfig, AttentionParams, attention_forward
from matting.numerics import Tensor, current_tape, gradcheck

DEFAULT_SEEDS = 20
DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-4
# coordinates whose gradient is this small carry no relative precision under central differences
GRADIENT_FLOOR = 1e-5
CORRUPTION_FACTOR = 1.5


def _away_from_zero(rng, shape, margin=0.1):
    u = rng.normal(size=shape)
    return np.sign(u) * (np.abs(u) + margin)


def _positive(rng, shape):
    return rng.uniform(0.5, 1.5, size=shape)


def _attention_case(rng):
    config = AttentionConfig(d=2, c_a=2, e=2, r=2, kernel=2, dropout_rate=0.0)
    unknown = rng.random((4, 4)) < 0.4
    shapes = config.weight_shapes()

    def op(image, alpha, theta, phi, g, w):
        params = AttentionParams(theta=theta, phi=phi, g=g, w=w)
        out, _ = attention_forward(image, alpha, unknown, params, config, mode="eval")
        return out

    inputs = [rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))]
    inputs += [rng.normal(scale=0.7, size=shapes[name]) for name in ("theta", "phi", "g", "w")]
    return op, inputs


# name -> builder(rng) returning (op, inputs)
CASES: Dict[str, Callable] = {
    "add": lambda rng: (nx.add, [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
    "sub": lambda rng: (nx.sub, [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))]),
    "mul": lambda rng: (nx.mul, [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))]),
    "scale": lambda rng: (lambda x: nx.scale(x, 1.7), [rng.normal(size=(3, 4))]),
    "relu": lambda rng: (nx.relu, [_away_from_zero(rng, (3, 4))]),
    "leaky_relu": lambda rng: (nx.leaky_relu, [_away_from_zero(rng, (3, 4))]),
    "absolute": lambda rng: (nx.absolute, [_away_from_zero(rng, (3, 4))]),
    "square": lambda rng: (nx.square, [rng.normal(size=(3, 4))]),
    "sum": lambda rng: (lambda x: nx.sum(x, axis=1), [rng.normal(size=(3, 4))]),
    "mean": lambda rng: (lambda x: nx.mean(x, axis=0), [rng.normal(size=(3, 4))]),
    "reshape": lambda rng: (lambda x: nx.reshape(x, (2, 6)), [rng.normal(size=(3, 4))]),
    "transpose": lambda rng: (nx.transpose, [rng.normal(size=(3, 4))]),
    "take": lambda rng: (lambda x: nx.take(x, [0, 5, 5, 11, 2]), [rng.normal(size=(3, 4))]),
    "concat": lambda rng: (lambda a, b: nx.concat([a, b], axis=0),
                           [rng.normal(size=(2, 3, 3)), rng.normal(size=(1, 3, 3))]),
    "matmul": lambda rng: (nx.matmul, [_positive(rng, (3, 4)), _positive(rng, (4, 2))]),
    "row_softmax": lambda rng: (nx.row_softmax, [rng.normal(size=(4, 6))]),
    "log_softmax": lambda rng: (lambda x: nx.log_softmax(x, axis=0), [rng.normal(size=(3, 2, 2))]),
    "conv2d": lambda rng: (lambda x, w, b: nx.conv2d(x, w, b, stride=2, padding=1),
                           [_positive(rng, (2, 5, 5)), _positive(rng, (3, 2, 3, 3)), rng.normal(size=(3,))]),
    "upsample_bilinear2x": lambda rng: (nx.upsample_bilinear2x, [rng.normal(size=(2, 3, 3))]),
    "upsample_nearest2x": lambda rng: (nx.upsample_nearest2x, [rng.normal(size=(2, 3, 3))]),
    "avg_pool2x2": lambda rng: (nx.avg_pool2x2, [rng.normal(size=(2, 4, 4))]),
    "max_pool2x2": lambda rng: (nx.max_pool2x2, [rng.normal(size=(2, 4, 4))]),
    "dropout": lambda rng: (lambda x: nx.dropout(x, 0.3, mode="train", seed=7), [rng.normal(size=(3, 4))]),
    "attention": _attention_case,
}


def corrupted(op: Callable, factor: float = CORRUPTION_FACTOR) -> Callable:
    """Wrap ``op`` so the gradient its last tape record returns is scaled by ``factor``."""

    def wrapped(*args, **kwargs):
        out = op(*args, **kwargs)
        tape = current_tape()
        if tape is not None and tape.records and tape.records[-1].output is out:
            record = tape.records[-1]
            original = record.backward
            record.backward = lambda g: tuple(None if x is None else factor * x for x in original(g))
        return out

    return wrapped


def _scalarized(op: Callable, weights: np.ndarray) -> Callable:
    return lambda *xs: nx.sum(nx.mul(op(*xs), weights))


def check_case(name: str, seed: int, h: float = DEFAULT_STEP, corrupt: bool = False) -> Tuple[float, int]:
    """(max relative error over well-conditioned coordinates, number of coordinates compared)."""
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    op, inputs = CASES[name](rng)
    if corrupt:
        op = corrupted(op)
    probe = op(*[Tensor(x) for x in inputs])
    weights = rng.uniform(0.5, 1.5, size=probe.shape)
    report = gradcheck(_scalarized(op, weights), inputs, h=h)
    worst, checked = 0.0, 0
    for analytic, numeric in zip(report.analytic, report.numeric):
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        keep = scale >= GRADIENT_FLOOR
        if not keep.any():
            continue
        rel = np.abs(analytic - numeric)[keep] / scale[keep]
        worst = max(worst, float(rel.max()))
        checked += int(keep.sum())
    return worst, checked


def run_gradcheck_suite(seeds: int = DEFAULT_SEEDS, h: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
                        primitives: Optional[List[str]] = None, corrupt: Optional[str] = None,
                        verbose: bool = False) -> dict:
    """
    Check every primitive for ``seeds`` seeds. ``corrupt`` names one primitive
    whose backward is deliberately scaled, which the suite must report as failing.
    """
    names = list(primitives) if primitives else sorted(CASES)
    unknown = [n for n in names + ([corrupt] if corrupt else []) if n not in CASES]
    if unknown:
        return {
            "status": "error",
            "message": f"unknown primitives {unknown}; available: {sorted(CASES)}"
        }
    if seeds < 1:
        return {"status": "error", "message": f"seeds must be at least 1, got {seeds}"}

    results = []
    for name in names:
        errors = [check_case(name, seed, h=h, corrupt=(name == corrupt)) for seed in range(seeds)]
        worst_seed = int(np.argmax([e for e, _ in errors]))
        max_error = errors[worst_seed][0]
        passed = max_error < tolerance
        results.append({
            "primitive": name,
            "seeds": seeds,
            "max_rel_error": max_error,
            "worst_seed": worst_seed,
            "coordinates": int(sum(c for _, c in errors)),
            "passed": passed,
        })
        if verbose:
            marker = "✅" if passed else "❌"
            print(f"{marker} [Gradcheck] {name}: max rel err {max_error:.2e} over {seeds} seeds")

    failed = [r["primitive"] for r in results if not r["passed"]]
    if failed:
        return {
            "status": "error",
            "message": f"{len(failed)} of {len(results)} primitives failed gradient check: {', '.join(failed)}",
            "failed": failed,
            "results": results,
            "h": h,
            "tolerance": tolerance,
        }
    return {
        "status": "success",
        "message": f"{len(results)} primitives passed gradient check over {seeds} seeds",
        "failed": [],
        "results": results,
        "h": h,
        "tolerance": tolerance,
    }
