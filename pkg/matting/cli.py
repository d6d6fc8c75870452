"""
Command-line surface: `python -m matting <subcommand> [flags]`.

Every flag has a JSON config-file equivalent (`--config run.json`, keys named
like the flags with dashes turned into underscores). Explicit flags win over
file values, which win over built-in defaults.
"""
import argparse
import json
import sys
import time

from pydantic import ValidationError

from matting.modelgraph.schema import field_path
from matting.run_ledger import RunLedger
from matting.shared.settings import TOOL_VERSION, get_ledger_url
from matting.shared.utils import load_json, to_json_primitive
from matting.tools.commands import run_command
from matting.tools.options import OPTIONS, RunConfig


def _shape(text: str):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W,C integers, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected H,W,C, got {text!r}")
    return values


def _pair(text: str):
    try:
        y, x = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected y,x integers, got {text!r}")
    return y, x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--seed", type=int, help="run seed (default 0)")

    parser = argparse.ArgumentParser(prog="matting", description="Matting data, evaluation and accounting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def command(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS)

    p = command("synth", "composite foregrounds over backgrounds")
    p.add_argument("--fg-dir", dest="fg_dir")
    p.add_argument("--alpha-dir", dest="alpha_dir")
    p.add_argument("--bg-dir", dest="bg_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--per-fg", dest="per_fg", type=int)
    p.add_argument("--crop-mode", dest="crop_mode", choices=["center", "random"])
    p.add_argument("--threads", type=int)

    p = command("trimap", "trimaps and soft segmentations")
    p.add_argument("--input-dir", dest="input_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--mode", choices=["gt", "random", "softseg", "softseg-infer", "pseudo"])
    p.add_argument("--erosion", type=int, help="erosion width for gt (15) and softseg-infer / pseudo --softseg (20)")
    p.add_argument("--sequence", choices=["open", "either"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--fg-px", dest="fg_px", type=int)
    p.add_argument("--bg-px", dest="bg_px", type=int)
    p.add_argument("--softseg", action="store_true")
    p.add_argument("--threads", type=int)

    p = command("eval", "matting or trimap scores")
    p.add_argument("--pred-dir", dest="pred_dir")
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--trimap-dir", dest="trimap_dir")
    p.add_argument("--whole-image", dest="whole_image", action="store_true")
    p.add_argument("--kind", choices=["alpha", "trimap"])
    p.add_argument("--out", help="JSON report; the CSV is written next to it")

    p = command("fuse", "fuse predicted alphas with trimaps or trimap probabilities")
    p.add_argument("--alpha-dir", dest="alpha_dir")
    p.add_argument("--guide-dir", dest="guide_dir")
    p.add_argument("--mode", choices=["soft-a", "soft-b", "hard"])
    p.add_argument("--out-dir", dest="out_dir")

    p = command("account", "shape inference, parameter and MAC counts of a graph file")
    p.add_argument("--graph")
    p.add_argument("--input-shape", dest="input_shape", type=_shape, help="H,W,C of the first graph input")
    p.add_argument("--out")
    p.add_argument("--csv")

    p = command("search", "search attention configurations against parameter/GFLOP targets")
    p.add_argument("--target-params", dest="target_params", type=int)
    p.add_argument("--target-gflops", dest="target_gflops", type=float)
    p.add_argument("--input-shape", dest="input_shape", type=_shape)
    p.add_argument("--r", type=int)
    p.add_argument("--components", nargs="+")
    p.add_argument("--limit", type=int)
    p.add_argument("--out")

    p = command("attend", "export the attention map of one query pixel")
    p.add_argument("--image-feature", dest="image_feature")
    p.add_argument("--alpha-feature", dest="alpha_feature")
    p.add_argument("--unknown")
    p.add_argument("--query", type=_pair, help="y,x")
    p.add_argument("--out")
    p.add_argument("--out-feature", dest="out_feature")
    p.add_argument("--weights-dir", dest="weights_dir")
    p.add_argument("--r", type=int)
    p.add_argument("--e", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--g-out", dest="g_out", type=int)

    p = command("gradcheck", "gradient check sweep over every differentiable primitive")
    p.add_argument("--seeds", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--primitives", nargs="+")
    p.add_argument("--corrupt", help="primitive whose gradient is deliberately scaled (suite self-test)")
    p.add_argument("--out")

    p = command("train-toy", "train the toy attention network")
    p.add_argument("--iterations", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--warmup-iters", dest="warmup_iters", type=int)
    p.add_argument("--hard-percent", dest="hard_percent", type=float)
    p.add_argument("--r", type=int)
    p.add_argument("--out", help="CSV training curve")
    p.add_argument("--log-every", dest="log_every", type=int)
    return parser


def _invalid(e: ValidationError, where: str) -> dict:
    first = e.errors()[0]
    field = field_path(first["loc"]) or "<root>"
    extra = f" (+{e.error_count() - 1} more)" if e.error_count() > 1 else ""
    return {"status": "error", "message": f"{where}: field {field}: {first['msg']}{extra}"}


def resolve_config(args: dict):
    """Merge config-file values under explicit flags; returns (RunConfig, options) or an error dict."""
    args = dict(args)
    subcommand = args.pop("subcommand")
    config_path = args.pop("config", None)
    values = {}
    if config_path:
        try:
            values = load_json(config_path)
        except (OSError, json.JSONDecodeError) as e:
            return {"status": "error", "message": f"config file {config_path}: {e}"}, None
        if not isinstance(values, dict):
            return {"status": "error", "message": f"config file {config_path}: expected a JSON object"}, None
        declared = values.pop("subcommand", subcommand)
        if declared != subcommand:
            return {"status": "error",
                    "message": f"config file {config_path}: written for {declared!r}, not {subcommand!r}"}, None
    values.update(args)
    seed = values.pop("seed", 0)
    where = f"config file {config_path}" if config_path else subcommand
    try:
        run = RunConfig(subcommand=subcommand, seed=seed, tool_version=TOOL_VERSION, options=values)
        options = OPTIONS[subcommand].model_validate(values)
    except ValidationError as e:
        return _invalid(e, where), None
    return run, options


def _record(run: RunConfig, result: dict, duration_ms: int):
    url = get_ledger_url()
    if not url:
        return
    try:
        ledger = RunLedger(url)
        run_id = ledger.record_run(run.subcommand, run.seed, run.tool_version, run.options,
                                   result["status"], result.get("message"), duration_ms)
        count = ledger.record_artifacts(run_id, [(a["path"], a["kind"]) for a in result.get("artifacts", [])])
        print(f"[RunLedger] recorded {run_id} with {count} artifacts", file=sys.stderr)
    except Exception as e:
        print(f"⚠️  [RunLedger] could not record run: {e}", file=sys.stderr)


def execute(argv=None) -> dict:
    """Parse, validate and run one subcommand; always returns a result dict."""
    args = vars(build_parser().parse_args(argv))
    run, options = resolve_config(args)
    if options is None:
        return {**run, "subcommand": args["subcommand"], "tool_version": TOOL_VERSION}

    start = time.time()
    try:
        result = run_command(run.subcommand, options, run.seed)
    except Exception as e:
        result = {"status": "error", "message": f"Error: {e}"}
    duration_ms = int((time.time() - start) * 1000)
    result["artifacts"] = [{"path": str(path), "kind": kind} for path, kind in result.get("artifacts", [])]
    result = {**result, "subcommand": run.subcommand, "seed": run.seed, "tool_version": TOOL_VERSION}
    _record(run, result, duration_ms)
    return result


def main(argv=None) -> int:
    result = execute(argv)
    print(json.dumps(to_json_primitive(result), indent=2))
    if result["status"] != "success":
        print(f"❌ [{result.get('subcommand', 'matting')}] {result['message']}", file=sys.stderr)
        return 1
    return 0
