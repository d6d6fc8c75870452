"""
Batch subcommands - file-level plumbing around the library modules.

Every command takes its typed options plus the run seed and returns a
JSON-ready dict with "status" ("success" | "error"), "message" and an
"artifacts" list of the files it wrote.
"""
from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np
from tqdm import tqdm

from matting.attention import AttentionConfig, AttentionParams, attention_forward, attention_map, init_params, query_weights
from matting.fusion import hard_fusion, soft_fusion
from matting.metrics import batch_report, matting_scores, trimap_scores
from matting.modelgraph import account, check_expectations, load_graph, search_attention_config
from matting.numerics import Tensor
from matting.shared.errors import MattingError, ShapeError
from matting.shared.imageio import (
    PROBABILITY_TOLERANCE,
    is_color,
    list_images,
    read_gray,
    read_gray_u8,
    read_probs,
    read_rgb,
    write_gray,
    write_gray_u8,
    write_rgb,
)
from matting.shared.settings import TOOL_VERSION, get_num_threads
from matting.shared.tensorfile import read_tensor, write_tensor
from matting.shared.utils import derive_seed, dump_json
from matting.synth import synthesize_set
from matting.tools.gradcheck_suite import run_gradcheck_suite
from matting.trainkit import write_curve, train_toy
from matting.trimap import (
    UNK,
    gt_trimap,
    inference_segmentation,
    label_counts,
    probs_to_trimap,
    pseudo_trimap_real,
    random_trimap,
    real_soft_segmentation,
    soft_segmentation_from_trimap,
    trimap_decode,
    trimap_encode,
    trimap_to_probs,
)

GT_EROSION_PX = 15
INFERENCE_EROSION_PX = 20
INFERENCE_SIGMA = 2.0
SEGMENTATION_THRESHOLD = 0.5


def _stem(name: str) -> str:
    return os.path.splitext(name)[0]


def _aligned(reference_dir, other_dirs) -> list:
    """Sorted names present in ``reference_dir``; every other directory must hold exactly the same names."""
    names = list_images(reference_dir)
    for other in other_dirs:
        other_names = list_images(other)
        missing = sorted(set(names) - set(other_names))
        extra = sorted(set(other_names) - set(names))
        if missing:
            raise MattingError(f"{os.path.join(other, missing[0])} is missing ({len(missing)} unmatched files in {other})")
        if extra:
            raise MattingError(f"{os.path.join(other, extra[0])} has no counterpart in {reference_dir}")
    if not names:
        raise MattingError(f"no images found in {reference_dir}")
    return names


def _progress(desc: str):
    def wrap(iterable, total=None):
        return tqdm(iterable, total=total, desc=desc, unit="img", leave=False)
    return wrap


def _parallel(work, items, threads: int, desc: str) -> list:
    """Ordered map over ``items``; results keep input order whatever the thread count."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(_progress(desc)(pool.map(work, items), total=len(items)))


def _write_report(path, payload: dict, seed: int) -> str:
    """JSON report stamped with the run seed and tool version."""
    return dump_json(path, {"seed": seed, "tool_version": TOOL_VERSION, **payload})


def _read_mask(path) -> np.ndarray:
    if str(path).lower().endswith(".png"):
        return read_gray(path) >= SEGMENTATION_THRESHOLD
    return read_tensor(path) >= SEGMENTATION_THRESHOLD


def _read_trimap(path) -> np.ndarray:
    try:
        return trimap_decode(read_gray_u8(path))
    except MattingError as e:
        raise type(e)(f"{path}: {e}") from e


class MattingCommands:
    """Batch entry points behind the command-line surface."""

    def __init__(self, num_threads: int = None):
        self.num_threads = num_threads or get_num_threads()

    def _threads(self, requested):
        return requested or self.num_threads

    def synth(self, opts, seed: int) -> dict:
        fg_names = list_images(opts.fg_dir)
        alpha_names = list_images(opts.alpha_dir)
        bg_names = list_images(opts.bg_dir)
        if not fg_names:
            raise MattingError(f"no foreground images in {opts.fg_dir}")
        if not bg_names:
            raise MattingError(f"no background images in {opts.bg_dir}")
        for name in fg_names:
            if name not in alpha_names:
                raise MattingError(f"missing alpha for foreground {name}: expected {os.path.join(opts.alpha_dir, name)}")
        for name in alpha_names:
            if name not in fg_names:
                raise MattingError(f"alpha {os.path.join(opts.alpha_dir, name)} has no matching foreground")

        fgs, alphas = [], []
        for name in fg_names:
            fg = read_rgb(os.path.join(opts.fg_dir, name))
            alpha = read_gray(os.path.join(opts.alpha_dir, name))
            if fg.shape[:2] != alpha.shape:
                raise ShapeError(f"{name}: foreground is {fg.shape[:2]} but its alpha is {alpha.shape}")
            fgs.append(fg)
            alphas.append(alpha)
        bgs = [read_rgb(os.path.join(opts.bg_dir, name)) for name in bg_names]

        results = synthesize_set(fgs, alphas, bgs, per_fg=opts.per_fg, seed=seed,
                                 num_threads=self._threads(opts.threads), crop_mode=opts.crop_mode,
                                 names=(fg_names, alpha_names, bg_names), progress=_progress("Synth"))

        image_dir = os.path.join(opts.out_dir, "image")
        alpha_dir = os.path.join(opts.out_dir, "alpha")
        os.makedirs(image_dir, exist_ok=True)
        os.makedirs(alpha_dir, exist_ok=True)
        records, artifacts = [], []
        for index, (image, alpha, record) in enumerate(results):
            name = f"{_stem(fg_names[index // opts.per_fg])}_{index % opts.per_fg:04d}.png"
            artifacts.append((write_rgb(os.path.join(image_dir, name), image), "composite"))
            artifacts.append((write_gray(os.path.join(alpha_dir, name), alpha), "alpha"))
            records.append({"name": name, **record})
        provenance_path = dump_json(os.path.join(opts.out_dir, "provenance.json"), records)
        artifacts.append((provenance_path, "provenance"))
        print(f"✅ [Synth] {len(records)} composites from {len(fgs)} foregrounds x {opts.per_fg} backgrounds")
        return {
            "status": "success",
            "message": f"{len(records)} composites written to {opts.out_dir}",
            "composites": len(records),
            "foregrounds": len(fgs),
            "backgrounds": len(bgs),
            "per_fg": opts.per_fg,
            "provenance": provenance_path,
            "artifacts": artifacts,
        }

    def trimap(self, opts, seed: int) -> dict:
        names = list_images(opts.input_dir)
        if not names:
            raise MattingError(f"no images found in {opts.input_dir}")
        os.makedirs(opts.out_dir, exist_ok=True)
        writes_softseg = opts.mode in ("softseg", "softseg-infer") or (opts.mode == "pseudo" and opts.softseg)

        def work(item):
            index, name = item
            path = os.path.join(opts.input_dir, name)
            item_seed = derive_seed(seed, index)
            if opts.mode == "gt":
                out = gt_trimap(read_gray(path), GT_EROSION_PX if opts.erosion is None else opts.erosion)
            elif opts.mode == "random":
                out = random_trimap(read_gray(path), item_seed)
            elif opts.mode == "softseg":
                out = soft_segmentation_from_trimap(_read_trimap(path), item_seed, sequence=opts.sequence, sigma=opts.sigma)
            elif opts.mode == "softseg-infer":
                out = inference_segmentation(_read_trimap(path),
                                             px=INFERENCE_EROSION_PX if opts.erosion is None else opts.erosion,
                                             sigma=opts.sigma or INFERENCE_SIGMA)
            else:
                seg = read_gray(path) >= SEGMENTATION_THRESHOLD
                if opts.softseg:
                    out = real_soft_segmentation(seg, opts.fg_px, opts.bg_px,
                                                 px=INFERENCE_EROSION_PX if opts.erosion is None else opts.erosion,
                                                 sigma=opts.sigma or INFERENCE_SIGMA)
                else:
                    out = pseudo_trimap_real(seg, opts.fg_px, opts.bg_px)
            target = os.path.join(opts.out_dir, f"{_stem(name)}.png")
            if writes_softseg:
                # the background channel is 1 - fg, so only the fg probability is stored
                write_gray(target, out[..., 0])
                return target, None
            write_gray_u8(target, trimap_encode(out))
            return target, label_counts(out)

        results = _parallel(work, list(enumerate(names)), self._threads(opts.threads), "Trimap")
        totals = None
        if not writes_softseg:
            totals = {key: sum(counts[key] for _, counts in results) for key in ("bg", "unknown", "fg")}
        kind = "softseg" if writes_softseg else "trimap"
        print(f"✅ [Trimap] {len(results)} {kind} maps written ({opts.mode})")
        return {
            "status": "success",
            "message": f"{len(results)} {kind} maps written to {opts.out_dir}",
            "mode": opts.mode,
            "written": len(results),
            "label_totals": totals,
            "artifacts": [(path, kind) for path, _ in results],
        }

    def eval(self, opts, seed: int) -> dict:
        if opts.kind == "trimap":
            return self._eval_trimaps(opts, seed)
        if not opts.whole_image and opts.trimap_dir is None:
            raise MattingError("eval needs --trimap-dir for unknown-region scores, or --whole-image")
        others = [opts.gt_dir] + ([] if opts.whole_image else [opts.trimap_dir])
        names = _aligned(opts.pred_dir, others)

        def work(name):
            pred = read_gray(os.path.join(opts.pred_dir, name))
            gt = read_gray(os.path.join(opts.gt_dir, name))
            if pred.shape != gt.shape:
                raise ShapeError(f"{name}: prediction is {pred.shape} but ground truth is {gt.shape}")
            if opts.whole_image:
                mask = None
            else:
                mask = _read_trimap(os.path.join(opts.trimap_dir, name)) == UNK
                if mask.shape != gt.shape:
                    raise ShapeError(f"{name}: trimap is {mask.shape} but ground truth is {gt.shape}")
            return {"name": name, **matting_scores(pred, gt, mask).to_dict()}

        rows = _parallel(work, names, self.num_threads, "Eval")
        return self._score_report(opts.out, rows, {"mask": "whole_image" if opts.whole_image else "unknown"}, seed)

    def _eval_trimaps(self, opts, seed: int) -> dict:
        names = _aligned(opts.pred_dir, [opts.gt_dir])
        rows = []
        for name in names:
            pred = _read_trimap(os.path.join(opts.pred_dir, name))
            gt = _read_trimap(os.path.join(opts.gt_dir, name))
            rows.append({"name": name, **trimap_scores(pred, gt).to_dict()})
        return self._score_report(opts.out, rows, {"kind": "trimap"}, seed)

    def _score_report(self, out, rows, extra, seed: int) -> dict:
        frame, aggregate = batch_report(rows)
        report_path = _write_report(out, {**extra, "images": len(rows), "aggregate": aggregate, "rows": rows}, seed)
        csv_path = f"{os.path.splitext(str(out))[0]}.csv"
        frame.to_csv(csv_path, index=False)
        print(f"✅ [Eval] {len(rows)} images scored, report at {report_path}")
        return {
            "status": "success",
            "message": f"{len(rows)} images scored",
            **extra,
            "images": len(rows),
            "aggregate": aggregate,
            "report": report_path,
            "csv": csv_path,
            "artifacts": [(report_path, "report"), (csv_path, "report_csv")],
        }

    def fuse(self, opts, seed: int) -> dict:
        names = _aligned(opts.alpha_dir, [opts.guide_dir])
        os.makedirs(opts.out_dir, exist_ok=True)

        def work(name):
            alpha = read_gray(os.path.join(opts.alpha_dir, name))
            guide_path = os.path.join(opts.guide_dir, name)
            if is_color(guide_path):
                probs = read_probs(guide_path)
                trimap = None
            else:
                trimap = _read_trimap(guide_path)
                probs = None
            guide_extent = (trimap if trimap is not None else probs).shape[:2]
            if alpha.shape != guide_extent:
                raise ShapeError(f"{name}: alpha is {alpha.shape} but its guide is {guide_extent}")
            if opts.mode == "hard":
                fused = hard_fusion(alpha, trimap if trimap is not None else probs_to_trimap(probs))
            else:
                probs = probs if probs is not None else trimap_to_probs(trimap)
                fused = soft_fusion(alpha, probs, variant="A" if opts.mode == "soft-a" else "B",
                                    tolerance=PROBABILITY_TOLERANCE)
            return write_gray(os.path.join(opts.out_dir, f"{_stem(name)}.png"), fused)

        paths = _parallel(work, names, self.num_threads, "Fuse")
        print(f"✅ [Fuse] {len(paths)} alphas fused ({opts.mode})")
        return {
            "status": "success",
            "message": f"{len(paths)} fused alphas written to {opts.out_dir}",
            "mode": opts.mode,
            "written": len(paths),
            "artifacts": [(p, "alpha") for p in paths],
        }

    def account(self, opts, seed: int) -> dict:
        graph = load_graph(opts.graph)
        input_shapes = None
        if opts.input_shape is not None:
            input_shapes = {next(iter(graph.inputs)): tuple(opts.input_shape)}
        report = account(graph, input_shapes)
        shapes = {cost.id: tuple(cost.output_shape) for cost in report.per_layer}
        shapes.update({name: tuple(shape) for name, shape in graph.inputs.items()})
        mismatches = [] if input_shapes else check_expectations(graph, shapes)
        result = {
            "status": "success",
            "message": f"{graph.name}: {report.total_params} parameters, {report.gflops_macs:.4f} GMACs",
            **report.to_dict(),
            "outputs": {name: shapes[name] for name in graph.outputs},
            "expectations": "skipped" if input_shapes else ("ok" if not mismatches else mismatches),
            "artifacts": [],
        }
        if mismatches:
            result["status"] = "error"
            result["message"] = (f"{opts.graph}: {len(mismatches)} layers differ from their expected shape, "
                                 f"first {mismatches[0]['id']!r}")
        if opts.out:
            result["artifacts"].append((_write_report(opts.out, {k: v for k, v in result.items() if k != "artifacts"}, seed), "report"))
        if opts.csv:
            report.frame().to_csv(opts.csv, index=False)
            result["artifacts"].append((str(opts.csv), "report_csv"))
        return result

    def search(self, opts, seed: int) -> dict:
        result = search_attention_config(target_params=opts.target_params, target_gflops=opts.target_gflops,
                                         input_shape=opts.input_shape, r=opts.r, components=opts.components,
                                         limit=opts.limit)
        best = result.best
        if result.exact:
            message = f"{len(result.candidates)} configurations reproduce {opts.target_params} parameters"
        else:
            message = (f"no configuration reproduces {opts.target_params} parameters; closest has "
                       f"{best['params']} ({best['param_delta']:+d})")
        payload = result.to_dict()
        artifacts = []
        if opts.out:
            artifacts.append((_write_report(opts.out, payload, seed), "search"))
        print(f"{'✅' if result.exact else '⚠️ '} [Search] {message}")
        return {"status": "success", "message": message, **payload, "artifacts": artifacts}

    def attend(self, opts, seed: int) -> dict:
        image_feature = read_tensor(opts.image_feature)
        alpha_feature = read_tensor(opts.alpha_feature)
        unknown = _read_mask(opts.unknown)
        if image_feature.ndim != 3 or alpha_feature.ndim != 3:
            raise ShapeError(f"{opts.image_feature} and {opts.alpha_feature} must hold [C, H, W] tensors")
        _, height, width = image_feature.shape
        y, x = opts.query
        if not (0 <= y < height and 0 <= x < width):
            raise ShapeError(f"query ({y}, {x}) is outside the {height}x{width} feature")

        d, c_a = image_feature.shape[0], alpha_feature.shape[0]
        if opts.weights_dir:
            params, config = self._load_attention_weights(opts, d, c_a, seed)
        else:
            config = AttentionConfig(d=d, c_a=c_a, e=opts.e, r=opts.r, kernel=opts.kernel, g_out=opts.g_out, seed=seed)
            params = init_params(config, seed=seed)

        attended, attn = attention_forward(image_feature, alpha_feature, unknown, params, config, mode="eval")
        query = y * width + x
        key_shape = (height // config.r, width // config.r)
        write_gray_u8(opts.out, attention_map(attn, query, key_shape))
        artifacts = [(str(opts.out), "attention_map")]
        if opts.out_feature:
            artifacts.append((write_tensor(opts.out_feature, attended.data), "feature"))
        _, w_unknown, w_known = query_weights(unknown, config.r)
        row = attn.data[query]
        peak = np.unravel_index(int(np.argmax(row)), key_shape)
        return {
            "status": "success",
            "message": f"attention map of query ({y}, {x}) written to {opts.out}",
            "query": [y, x],
            "query_region": "unknown" if unknown[y, x] else "known",
            "w_unknown": w_unknown,
            "w_known": w_known,
            "key_grid": list(key_shape),
            "peak_key": [int(peak[0]), int(peak[1])],
            "row_sum": float(row.sum()),
            "config": config.model_dump(),
            "artifacts": artifacts,
        }

    def _load_attention_weights(self, opts, d: int, c_a: int, seed: int):
        tensors = {}
        for name in ("theta", "phi", "g", "w", "theta_bias", "phi_bias", "g_bias", "w_bias"):
            path = os.path.join(opts.weights_dir, f"{name}.mtf")
            if os.path.exists(path):
                tensors[name] = Tensor(read_tensor(path), name=name)
            elif not name.endswith("_bias"):
                raise MattingError(f"attention weights missing: {path}")
        config = AttentionConfig(
            d=d, c_a=c_a, r=opts.r,
            e=tensors["theta"].shape[0],
            kernel=tensors["phi"].shape[2],
            g_out=tensors["g"].shape[0],
            bias_theta="theta_bias" in tensors,
            bias_phi="phi_bias" in tensors,
            bias_g="g_bias" in tensors,
            bias_w="w_bias" in tensors,
            seed=seed,
        )
        biases = {k: v for k, v in tensors.items() if k.endswith("_bias")}
        params = AttentionParams(tensors["theta"], tensors["phi"], tensors["g"], tensors["w"], biases)
        params.check(config)
        return params, config

    def gradcheck(self, opts, seed: int) -> dict:
        result = run_gradcheck_suite(seeds=opts.seeds, h=opts.h, tolerance=opts.tolerance,
                                     primitives=opts.primitives, corrupt=opts.corrupt, verbose=True)
        result["artifacts"] = []
        if opts.out:
            result["artifacts"].append((_write_report(opts.out, {k: v for k, v in result.items() if k != "artifacts"}, seed), "report"))
        return result

    def train_toy(self, opts, seed: int) -> dict:
        config = opts.task_config(seed)
        curve = train_toy(config, log_every=opts.log_every)
        artifacts = []
        if opts.out:
            artifacts.append((str(write_curve(opts.out, curve)), "curve"))
        if not curve:
            return {"status": "success", "message": "0 iterations requested, empty curve", "iterations": 0,
                    "artifacts": artifacts}
        initial, final = curve[0]["total"], curve[-1]["total"]
        return {
            "status": "success",
            "message": f"{len(curve)} iterations, loss {initial:.5f} -> {final:.5f}",
            "iterations": len(curve),
            "initial_total": initial,
            "final_total": final,
            "ratio": final / initial if initial else None,
            "artifacts": artifacts,
        }


COMMANDS = {
    "synth": "synth",
    "trimap": "trimap",
    "eval": "eval",
    "fuse": "fuse",
    "account": "account",
    "search": "search",
    "attend": "attend",
    "gradcheck": "gradcheck",
    "train-toy": "train_toy",
}


def run_command(subcommand: str, opts, seed: int, commands: MattingCommands = None) -> dict:
    """Dispatch one subcommand; library errors come back as an error dict naming the offending file or field."""
    commands = commands or MattingCommands()
    if subcommand not in COMMANDS:
        return {
            "status": "error",
            "message": f"Unknown subcommand: {subcommand}. Use one of {', '.join(COMMANDS)}"
        }
    try:
        return getattr(commands, COMMANDS[subcommand])(opts, seed)
    except (MattingError, OSError) as e:
        return {
            "status": "error",
            "message": f"{type(e).__name__}: {e}"
        }
