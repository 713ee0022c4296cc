import numpy as np
import pytest

from mmea import autodiff as ad
from mmea.aggregation import EdgeList
from mmea.data import MultiModalKG, SyntheticConfig, generate_synthetic
from mmea.errors import CheckpointError, ContractError
from mmea.model import (
    ModelConfig,
    PairInputs,
    build_pair_inputs,
    embed_pair,
    forward,
    init_params,
    load_checkpoint,
    model_config_dict,
    params_from_arrays,
    save_checkpoint,
)


def tiny_pair():
    rng = np.random.default_rng(7)
    kg1 = MultiModalKG(
        num_entities=4,
        num_relations=2,
        triples=[[0, 0, 1], [1, 1, 2], [2, 0, 3]],
        attr_items=[["a0"], ["a1"], ["a0", "a1"], []],
        rel_items=[["r0"], [], ["r1"], ["r0"]],
        visual=rng.standard_normal((4, 5)),
        has_image=[True, True, True, True],
    )
    kg2 = MultiModalKG(
        num_entities=3,
        num_relations=1,
        triples=[[0, 0, 1], [1, 0, 2]],
        attr_items=[["a0"], ["a1"], ["a0"]],
        rel_items=[["r0"], ["r1"], []],
        visual=rng.standard_normal((3, 5)),
        has_image=[True, True, True],
    )
    return kg1, kg2


def tiny_inputs():
    return build_pair_inputs(*tiny_pair())


def small_cfg(variant="full"):
    return ModelConfig(emb_dim=3, hidden_dim=4, layers=2, rank=2, variant=variant)


class TestModelConfig:
    def test_defaults_are_valid(self):
        cfg = ModelConfig()
        assert (cfg.emb_dim, cfg.hidden_dim, cfg.layers, cfg.rank) == (100, 300, 3, 4)
        assert cfg.variant == "full"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"variant": "bogus"},
            {"rank": 0},
            {"rank": 17},
            {"layers": 0},
            {"emb_dim": 0},
            {"hidden_dim": -1},
        ],
    )
    def test_bad_config_rejected(self, kwargs):
        with pytest.raises(ContractError):
            ModelConfig(**kwargs)


class TestPairInputs:
    def test_shapes_and_counts(self):
        kg1, kg2 = tiny_pair()
        inputs = build_pair_inputs(kg1, kg2)
        n = kg1.num_entities + kg2.num_entities
        assert inputs.visual.shape == (n, 5)
        assert inputs.attr.shape[0] == n and inputs.rel.shape[0] == n
        assert (inputs.n1, inputs.n2) == (4, 3)
        # two message edges per triple plus one self-loop per entity
        assert inputs.edges.num_edges == 2 * (3 + 2) + n
        assert inputs.edges.num_relations == 2 * (2 + 1) + 1

    def test_second_graph_offsets(self):
        kg1, kg2 = tiny_pair()
        inputs = build_pair_inputs(kg1, kg2)
        edges = set(zip(inputs.edges.src.tolist(), inputs.edges.rel.tolist(), inputs.edges.dst.tolist()))
        # kg2 triple (0, 0, 1): entities shift by n1=4, relation by r1=2
        assert (1 + 4, 0 + 2, 0 + 4) in edges  # forward: head gathers from tail
        assert (0 + 4, 0 + 2 + 3, 1 + 4) in edges  # inverse adds total relation count 3
        assert (5, 6, 5) in edges  # self-loop with shared id 2*(2+1)

    def test_visual_rows_stack_in_order(self):
        kg1, kg2 = tiny_pair()
        inputs = build_pair_inputs(kg1, kg2)
        np.testing.assert_array_equal(inputs.visual[:4], kg1.visual)
        np.testing.assert_array_equal(inputs.visual[4:], kg2.visual)

    def test_shared_vocabulary_width(self):
        kg1, kg2 = tiny_pair()
        inputs = build_pair_inputs(kg1, kg2)
        # both graphs mention only a0, a1 and r0, r1
        assert inputs.attr.shape[1] == 2
        assert inputs.rel.shape[1] == 2
        assert set(np.unique(inputs.attr)) <= {0.0, 1.0}

    def test_visual_dim_mismatch_rejected(self):
        kg1, kg2 = tiny_pair()
        kg2.visual = np.zeros((3, 6))
        with pytest.raises(ContractError):
            build_pair_inputs(kg1, kg2)

    def test_missing_image_fill_is_deterministic(self):
        kg1, kg2 = tiny_pair()
        kg1.has_image = np.array([True, False, True, False])
        a = build_pair_inputs(kg1, kg2, fill_seed=3)
        b = build_pair_inputs(kg1, kg2, fill_seed=3)
        np.testing.assert_array_equal(a.visual, b.visual)
        assert not np.array_equal(a.visual[1], kg1.visual[1])
        c = build_pair_inputs(kg1, kg2, fill_seed=4)
        assert not np.array_equal(a.visual[1], c.visual[1])


EXPECTED_FULL_NAMES = {
    "encoder.visual.weight",
    "encoder.visual.bias",
    "encoder.attr.weight",
    "encoder.attr.bias",
    "encoder.rel.weight",
    "encoder.rel.bias",
    "fusion.attention.visual",
    "fusion.attention.attr",
    "fusion.attention.rel",
    "fusion.factor.visual.0",
    "fusion.factor.visual.1",
    "fusion.factor.attr.0",
    "fusion.factor.attr.1",
    "fusion.factor.rel.0",
    "fusion.factor.rel.1",
    "fusion.bias",
    "aggregator.relations",
    "aggregator.query",
}


class TestInitParams:
    def test_full_variant_names(self):
        params = init_params(small_cfg(), tiny_inputs(), seed=0)
        assert set(params.names()) == EXPECTED_FULL_NAMES

    def test_no_adaptive_drops_attention(self):
        params = init_params(small_cfg("no-adaptive"), tiny_inputs(), seed=0)
        assert set(params.names()) == {n for n in EXPECTED_FULL_NAMES if "attention" not in n}

    def test_no_lowrank_shares_full_names(self):
        params = init_params(small_cfg("no-lowrank"), tiny_inputs(), seed=0)
        assert set(params.names()) == EXPECTED_FULL_NAMES

    def test_concat_variant_names(self):
        params = init_params(small_cfg("concat-fusion"), tiny_inputs(), seed=0)
        assert set(params.names()) == {
            "encoder.visual.weight",
            "encoder.visual.bias",
            "encoder.attr.weight",
            "encoder.attr.bias",
            "encoder.rel.weight",
            "encoder.rel.bias",
            "fusion.projection",
            "aggregator.relations",
            "aggregator.query",
        }

    def test_shapes(self):
        inputs = tiny_inputs()
        params = init_params(small_cfg(), inputs, seed=0)
        assert params["encoder.visual.weight"].shape == (3, 5)
        assert params["encoder.attr.weight"].shape == (3, inputs.attr.shape[1])
        assert params["encoder.visual.bias"].shape == (3,)
        assert params["fusion.attention.visual"].shape == (3, 1)
        assert params["fusion.factor.attr.1"].shape == (4, 4)
        assert params["fusion.bias"].shape == (4,)
        assert params["aggregator.relations"].shape == (inputs.edges.num_relations, 4)
        assert params["aggregator.query"].shape == (4, 1)

    def test_biases_start_at_zero(self):
        params = init_params(small_cfg(), tiny_inputs(), seed=0)
        assert np.all(params["encoder.rel.bias"].data == 0.0)
        assert np.all(params["fusion.bias"].data == 0.0)

    def test_seed_determinism(self):
        inputs = tiny_inputs()
        a = init_params(small_cfg(), inputs, seed=11)
        b = init_params(small_cfg(), inputs, seed=11)
        c = init_params(small_cfg(), inputs, seed=12)
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)
        assert any(not np.array_equal(a[n].data, c[n].data) for n in a.names())

    def test_all_marked_learnable(self):
        params = init_params(small_cfg(), tiny_inputs(), seed=0)
        assert all(t.requires_grad for _, t in params.items())


class TestForward:
    @pytest.mark.parametrize("variant", ["full", "no-lowrank", "no-adaptive", "concat-fusion"])
    def test_output_shape_and_finite(self, variant):
        inputs = tiny_inputs()
        cfg = small_cfg(variant)
        params = init_params(cfg, inputs, seed=1)
        out = forward(params, inputs, cfg)
        assert out.shape == (7, (cfg.layers + 1) * cfg.hidden_dim)
        assert np.isfinite(out.data).all()

    def test_layer_blocks_after_first_are_bounded(self):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=2)
        out = forward(params, inputs, cfg).data
        assert np.all(np.abs(out[:, cfg.hidden_dim :]) <= 1.0)

    def test_first_block_is_the_fused_input(self):
        inputs = tiny_inputs()
        cfg = small_cfg("concat-fusion")
        params = init_params(cfg, inputs, seed=3)
        out = forward(params, inputs, cfg).data

        def enc(x, mod):
            return x @ params[f"encoder.{mod}.weight"].data.T + params[f"encoder.{mod}.bias"].data

        cat = np.hstack([enc(inputs.visual, "visual"), enc(inputs.attr, "attr"), enc(inputs.rel, "rel")])
        np.testing.assert_allclose(out[:, : cfg.hidden_dim], cat @ params["fusion.projection"].data, atol=1e-12)

    def test_zero_attention_equals_uniform_variant(self):
        inputs = tiny_inputs()
        cfg_full = small_cfg("full")
        params_full = init_params(cfg_full, inputs, seed=5)
        for mod in ("visual", "attr", "rel"):
            params_full[f"fusion.attention.{mod}"].data[:] = 0.0
        arrays = {n: t.data.copy() for n, t in params_full.items() if "attention" not in n}
        cfg_na = small_cfg("no-adaptive")
        params_na = params_from_arrays(arrays, cfg_na, inputs)
        np.testing.assert_allclose(
            forward(params_full, inputs, cfg_full).data,
            forward(params_na, inputs, cfg_na).data,
            atol=1e-12,
        )

    def test_variants_differ_in_general(self):
        inputs = tiny_inputs()
        outs = {}
        for variant in ("full", "no-lowrank", "concat-fusion"):
            cfg = small_cfg(variant)
            outs[variant] = forward(init_params(cfg, inputs, seed=6), inputs, cfg).data
        assert not np.allclose(outs["full"], outs["no-lowrank"])
        assert not np.allclose(outs["full"], outs["concat-fusion"])

    def test_forward_is_deterministic(self):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=8)
        np.testing.assert_array_equal(forward(params, inputs, cfg).data, forward(params, inputs, cfg).data)

    def test_gradient_reaches_every_parameter(self):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=9)
        with ad.Tape() as tape:
            loss = ad.tensor_sum(forward(params, inputs, cfg))
            tape.backward(loss)
        for name, tensor in params.items():
            assert tensor.grad is not None, name
            assert np.any(tensor.grad != 0.0), name

    def test_gradcheck_through_whole_model(self):
        # three entities, one relation per graph, every parameter
        rng = np.random.default_rng(10)
        kg1 = MultiModalKG(
            num_entities=3,
            num_relations=1,
            triples=[[0, 0, 1], [1, 0, 2]],
            attr_items=[["a0"], ["a1"], ["a0"]],
            rel_items=[["r0"], ["r0"], ["r1"]],
            visual=rng.standard_normal((3, 2)),
            has_image=[True] * 3,
        )
        kg2 = MultiModalKG(
            num_entities=3,
            num_relations=1,
            triples=[[2, 0, 0]],
            attr_items=[["a0"], ["a0", "a1"], []],
            rel_items=[["r1"], [], ["r0"]],
            visual=rng.standard_normal((3, 2)),
            has_image=[True] * 3,
        )
        inputs = build_pair_inputs(kg1, kg2)
        cfg = ModelConfig(emb_dim=2, hidden_dim=2, layers=1, rank=1, variant="full")
        params = init_params(cfg, inputs, seed=11)

        def build():
            return ad.tensor_sum(ad.tanh(forward(params, inputs, cfg)))

        params.zero_grad()
        with ad.Tape() as tape:
            tape.backward(build())
        h = 1e-6
        for name, tensor in params.items():
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            flat = tensor.data.reshape(-1)
            aflat = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = build().item()
                flat[i] = orig - h
                down = build().item()
                flat[i] = orig
                num = (up - down) / (2 * h)
                denom = max(abs(num), abs(aflat[i]), 1e-2)
                assert abs(num - aflat[i]) / denom < 1e-4, name


class TestEmbedPair:
    def test_split_matches_forward(self):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=12)
        emb1, emb2 = embed_pair(params, inputs, cfg)
        full = forward(params, inputs, cfg).data
        assert emb1.shape[0] == 4 and emb2.shape[0] == 3
        np.testing.assert_array_equal(np.vstack([emb1, emb2]), full)

    def test_synthetic_pair_runs(self):
        kg1, kg2, seeds = generate_synthetic(SyntheticConfig(num_entities=12, num_relations=3, seed=4))
        inputs = build_pair_inputs(kg1, kg2)
        cfg = ModelConfig(emb_dim=8, hidden_dim=10, layers=2, rank=2)
        params = init_params(cfg, inputs, seed=0)
        emb1, emb2 = embed_pair(params, inputs, cfg)
        assert emb1.shape == (12, 30) and emb2.shape == (12, 30)
        assert len(seeds) == 12


class TestCheckpoint:
    def test_round_trip_values_and_config(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=13)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"model": model_config_dict(cfg), "note": 1})
        arrays, config = load_checkpoint(path)
        assert config["note"] == 1
        assert config["model"]["variant"] == "full"
        assert set(arrays) == set(params.names())
        for name, tensor in params.items():
            # stored as float32, so expect exactly the f32 cast back in f64
            np.testing.assert_array_equal(arrays[name], tensor.data.astype("<f4").astype(np.float64))

    def test_save_load_save_is_byte_stable(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=14)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, {"model": model_config_dict(cfg)})
        arrays, config = load_checkpoint(p1)
        save_checkpoint(p2, params_from_arrays(arrays, cfg, inputs), config)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_params_reproduce_embeddings(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=15)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"model": model_config_dict(cfg)})
        arrays, _ = load_checkpoint(path)
        restored = params_from_arrays(arrays, cfg, inputs)
        a = forward(params, inputs, cfg).data
        b = forward(restored, inputs, cfg).data
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_missing_and_extra_and_misshapen_tensors(self):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=16)
        arrays = {n: t.data.copy() for n, t in params.items()}
        missing = dict(arrays)
        del missing["fusion.bias"]
        with pytest.raises(CheckpointError, match="fusion.bias"):
            params_from_arrays(missing, cfg, inputs)
        extra = dict(arrays)
        extra["mystery"] = np.zeros(3)
        with pytest.raises(CheckpointError, match="mystery"):
            params_from_arrays(extra, cfg, inputs)
        bad = dict(arrays)
        bad["aggregator.query"] = np.zeros((5, 1))
        with pytest.raises(CheckpointError, match="aggregator.query"):
            params_from_arrays(bad, cfg, inputs)

    def test_variant_mismatch_is_caught(self):
        inputs = tiny_inputs()
        params = init_params(small_cfg("full"), inputs, seed=17)
        arrays = {n: t.data.copy() for n, t in params.items()}
        with pytest.raises(CheckpointError):
            params_from_arrays(arrays, small_cfg("concat-fusion"), inputs)

    def test_corrupted_block_names_tensor(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=18)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        raw = bytearray(path.read_bytes())
        first_block = raw.find(b"MMEAF32")
        raw[first_block] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="encoder.visual.weight"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=19)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 7])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        inputs = tiny_inputs()
        cfg = small_cfg()
        params = init_params(cfg, inputs, seed=20)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_bad_manifest_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"not json\n" + b"\x00" * 8)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
