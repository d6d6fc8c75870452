import json
import os

import pytest

from matting.attention import AttentionConfig, init_params
from matting.modelgraph import (
    account,
    attention_costs,
    check_expectations,
    count_flops,
    count_params,
    infer_shapes,
    load_graph,
    parse_graph,
    search_attention_config,
)
from matting.shared.errors import GraphSchemaError, MattingError, ShapeError
from matting.shared.utils import load_json

ARTIFACTS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "graph_artifacts")


def artifact(name):
    return os.path.join(ARTIFACTS, name)


def single_layer(layer, input_shape=(64, 64, 128)):
    return parse_graph(json.dumps({
        "name": "single",
        "inputs": {"x": list(input_shape)},
        "outputs": [layer["id"]],
        "layers": [{"inputs": ["x"], **layer}],
    }))


class TestGoldenShapes:
    @pytest.mark.parametrize("name", ["net_t.json", "refinement.json", "non_local_matting.json", "attention_block.json"])
    def test_every_pinned_shape_is_reproduced(self, name):
        graph = load_graph(artifact(name))
        assert check_expectations(graph, infer_shapes(graph)) == []

    def test_trimap_network_output(self):
        shapes = infer_shapes(load_graph(artifact("net_t.json")))
        assert shapes["output_conv"] == (512, 512, 3)

    def test_matting_encoder_bottom(self):
        shapes = infer_shapes(load_graph(artifact("non_local_matting.json")))
        assert shapes["down3"] == (16, 16, 512)
        assert shapes["output_conv"] == (512, 512, 1)

    def test_refinement_output(self):
        shapes = infer_shapes(load_graph(artifact("refinement.json")))
        assert shapes["residual"] == (512, 512, 1)

    def test_input_override_propagates(self):
        graph = load_graph(artifact("refinement.json"))
        shapes = infer_shapes(graph, {"coarse_alpha": (256, 256, 1)})
        assert shapes["residual"] == (256, 256, 1)
        assert check_expectations(graph, shapes) != []


class TestCounting:
    def test_conv_parameter_formulas(self):
        assert count_params(single_layer({"id": "c", "kind": "conv", "out_channels": 64, "kernel": 3})).total_params == 73728
        assert count_params(single_layer({"id": "c", "kind": "conv", "out_channels": 64})).total_params == 8192
        with_bias = single_layer({"id": "c", "kind": "conv", "out_channels": 64, "bias": True})
        assert count_params(with_bias).total_params == 8192 + 64

    def test_conv_mac_formula(self):
        report = count_flops(single_layer({"id": "c", "kind": "conv", "out_channels": 64}))
        assert report.total_macs == 33554432

    def test_query_key_product(self):
        costs = attention_costs(128, 128, 64, 64, e=64, r=4, kernel=4, g_out=128)
        assert costs["qk"] == (0, 67108864)
        assert costs["av"] == (0, 4096 * 256 * 128)

    def test_attention_layer_matches_block_parameters(self):
        report = account(load_graph(artifact("attention_block.json")))
        config = AttentionConfig(d=128, c_a=128, e=64, r=4, kernel=1, g_out=64)
        assert report.total_params == init_params(config).num_parameters() == 32768

    def test_norm_layers_carry_scale_and_shift(self):
        graph = single_layer({"id": "n", "kind": "norm"}, input_shape=(8, 8, 16))
        assert count_params(graph).total_params == 32

    def test_block_totals_cover_every_layer(self):
        report = account(load_graph(artifact("net_t.json")))
        totals = report.block_totals()
        assert sum(b["params"] for b in totals.values()) == report.total_params
        assert sum(b["macs"] for b in totals.values()) == report.total_macs
        assert len(report.frame()) == len(report.per_layer)

    def test_non_positive_extent(self):
        graph = single_layer({"id": "c", "kind": "conv", "out_channels": 4, "kernel": 5, "padding": 0},
                             input_shape=(2, 2, 3))
        with pytest.raises(ShapeError):
            infer_shapes(graph)


class TestSchema:
    BAD_REFERENCE = (
        '{\n'
        '  "name": "bad",\n'
        '  "inputs": {"x": [8, 8, 3]},\n'
        '  "layers": [\n'
        '    {"id": "a", "kind": "conv", "inputs": ["x"], "out_channels": 4},\n'
        '    {"id": "b", "kind": "conv", "inputs": ["missing"], "out_channels": 4}\n'
        '  ]\n'
        '}\n'
    )

    def test_unknown_reference_names_line_and_field(self):
        with pytest.raises(GraphSchemaError) as info:
            parse_graph(self.BAD_REFERENCE)
        assert info.value.line == 6
        assert info.value.field == "layers[1].inputs"

    def test_bad_kind_names_line_and_field(self):
        text = self.BAD_REFERENCE.replace('"kind": "conv", "inputs": ["x"]', '"kind": "convolution", "inputs": ["x"]')
        with pytest.raises(GraphSchemaError) as info:
            parse_graph(text)
        assert info.value.line == 5
        assert info.value.field == "layers[0].kind"

    def test_missing_out_channels(self):
        text = self.BAD_REFERENCE.replace(', "out_channels": 4}', "}", 1)
        with pytest.raises(GraphSchemaError) as info:
            parse_graph(text)
        assert info.value.field == "layers[0].out_channels"

    def test_invalid_json_reports_line(self):
        with pytest.raises(GraphSchemaError) as info:
            parse_graph('{\n  "name": "x",\n  "inputs": \n}')
        assert info.value.line == 4

    def test_unknown_output(self):
        graph = json.loads(self.BAD_REFERENCE.replace('"missing"', '"a"'))
        graph["outputs"] = ["nowhere"]
        with pytest.raises(GraphSchemaError) as info:
            parse_graph(json.dumps(graph))
        assert info.value.field == "outputs[0]"


class TestSearch:
    def test_constructed_target_has_a_unique_match(self):
        result = search_attention_config(target_params=8192, target_gflops=None, components=["theta"])
        assert result.exact
        assert len(result.candidates) == 1
        assert result.best["config"] == {"e": 64, "bias_theta": False}

    def test_every_exact_match_survives_the_limit(self):
        # 32 x 128 x 2 x 2 == 128 x 128 x 1 x 1
        result = search_attention_config(target_params=16384, target_gflops=None, components=["phi"], limit=1)
        assert result.exact
        assert sorted((c["config"]["e"], c["config"]["kernel"]) for c in result.candidates) == [(32, 2), (128, 1)]

    def test_unreachable_target_reports_closest(self):
        result = search_attention_config(target_params=0, limit=3)
        assert not result.exact
        assert len(result.candidates) == 3
        deltas = [abs(c["param_delta"]) for c in result.candidates]
        assert deltas == sorted(deltas)

    def test_published_targets_match_recorded_artifact(self):
        recorded = load_json(artifact("attention_search.json"))
        result = search_attention_config(limit=len(recorded["candidates"]))
        assert result.exact == recorded["exact"]
        assert result.evaluated == recorded["evaluated"]
        for live, saved in zip(result.candidates, recorded["candidates"]):
            assert live["config"] == saved["config"]
            assert live["convention"] == saved["convention"]
            assert (live["params"], live["macs"], live["param_delta"]) == (saved["params"], saved["macs"], saved["param_delta"])
            assert live["gflops"] == pytest.approx(saved["gflops"])

    def test_best_configuration_matches_attention_artifact(self):
        result = search_attention_config(limit=1)
        report = account(load_graph(artifact("attention_block.json")))
        assert report.total_params == result.best["params"]
        assert report.gflops_macs == pytest.approx(result.best["gflops"])
        config = result.resolved_config()
        assert (config.e, config.kernel, config.g_out) == (64, 1, 64)

    def test_unknown_component(self):
        with pytest.raises(MattingError):
            search_attention_config(components=["softmax"])
