import math

import numpy as np
import pytest

from tm2tf.fpcore import EXACT, FloatFormat, Precision
from tm2tf.gadgets import ModelBuilder, RegisterLayout, bin_pm1, selector_head, sub_pow2
from tm2tf.netcore import (
    BinaryAbsolute,
    Dims,
    EvalConfig,
    Evaluator,
    NoPositional,
    TransformerParams,
    forward,
    hardmax_weights,
    next_token,
    params_from_json,
    params_to_json,
    rope_rotate,
    separation,
    softmax_weights,
)


def test_hardmax_weights_examples():
    assert hardmax_weights([3]).tolist() == [1.0]
    assert hardmax_weights([1, 2, 2]).tolist() == [0.0, 0.5, 0.5]
    assert hardmax_weights([0, 1, 0.5]).tolist() == [0.0, 1.0, 0.0]


def test_softmax_weights_examples():
    assert softmax_weights([0.0, 0.0]).tolist() == [0.5, 0.5]
    got = softmax_weights([0.0, math.log(3)])
    assert abs(got[0] - 0.25) < 1e-15 and abs(got[1] - 0.75) < 1e-15
    assert abs(softmax_weights(np.arange(10.0)).sum() - 1.0) < 1e-12


def test_softmax_hardmax_distance_bound():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = rng.integers(1, 30)
        scores = rng.integers(-5, 6, n).astype(float) * rng.uniform(0.5, 4.0)
        beta = separation(scores)
        dist = np.abs(softmax_weights(scores) - hardmax_weights(scores)).sum()
        assert dist <= 2 * n * math.exp(-beta) + 1e-12


def test_separation():
    assert separation([1.0, 3.0, 2.0]) == 1.0
    assert separation([2.0, 2.0]) == math.inf


def test_rope_rotate():
    v = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert np.array_equal(rope_rotate(v, 0, (0.3, 0.7)), v)
    rot = rope_rotate(v, 5, (0.3, 0.7))
    assert abs(np.linalg.norm(rot) - np.linalg.norm(v)) < 1e-12
    assert rot[4] == 5.0  # unrotated tail
    got = rope_rotate(np.array([1.0, 0.0]), 1, (math.pi,))
    assert abs(got[0] + 1.0) < 1e-15 and abs(got[1]) < 1e-15


def _zero_model(d=4, vocab=("a", "b")):
    dims = Dims(d=d, d_k=2, d_v=2, d_ff=3, n_heads=1, n_layers=2)
    emb = np.zeros((len(vocab), d), dtype=np.int8)
    emb[0, 0] = 1
    emb[1, 1] = 1
    unemb = np.zeros((len(vocab), d), dtype=np.int8)
    layers = []
    for _ in range(dims.n_layers):
        from tm2tf.netcore import HeadParams, LayerParams

        layers.append(
            LayerParams(
                heads=[
                    HeadParams(
                        np.zeros((2, d), np.int8),
                        np.zeros((2, d), np.int8),
                        np.zeros((2, d), np.int8),
                        np.zeros((d, 2), np.int8),
                    )
                ],
                w1=np.zeros((3, d), np.int8),
                bias4=np.zeros(3, np.int32),
                w2=np.zeros((d, 3), np.int8),
            )
        )
    return TransformerParams(
        dims=dims,
        vocab=list(vocab),
        emb=emb,
        unemb=unemb,
        positional=NoPositional(),
        layers=layers,
    )


def test_zero_model_is_residual_identity():
    params = _zero_model()
    cfg = EvalConfig(capture_trace=True)
    reps, trace = forward(params, ["a", "b", "a"], cfg)
    for i, x0 in enumerate(trace.x0):
        assert np.array_equal(reps[i], x0)


def test_hardmax_config_rejects_finite_precision():
    with pytest.raises(ValueError):
        EvalConfig(attention="hardmax", act_precision=Precision(FloatFormat(7, 8)))
    with pytest.raises(ValueError):
        EvalConfig(attention="nonsense")


def test_selector_head_copies_k_back():
    """A head with decremented-position queries copies a register from k back."""
    r = 3
    k_back = 2
    layout = RegisterLayout()
    pos = layout.register("pos", r)
    pos_ex = layout.register("pos_ex", r)
    payload = layout.register("payload", 2)
    target = layout.register("target", 2)

    builder = ModelBuilder(layout, n_layers=2)
    builder.add_neurons(1, sub_pow2(pos, pos_ex, 1, []), "pos-2")  # 2^1 = k_back
    builder.add_head(
        2,
        selector_head("fetch", [pos_ex], [pos], [payload], target),
    )
    vocab = ["t0", "t1", "t2", "t3"]
    for i, tok in enumerate(vocab):
        builder.set_embedding(tok, {payload.coords[0]: 1 if i % 2 else -1, payload.coords[1]: 1})
    dims = Dims(d=layout.d, d_k=r, d_v=2, d_ff=4 * r, n_heads=1, n_layers=2)
    params = builder.finalize(vocab, dims, BinaryAbsolute(r, pos.coords), "test")

    reps, trace = forward(params, vocab, EvalConfig(capture_trace=True))
    for i in range(len(vocab)):
        src = max(0, i - k_back)
        want = np.zeros(2)
        want[0] = 1 if src % 2 else -1
        want[1] = 1
        assert np.array_equal(reps[i][list(target.coords)], want), i

    # All traced activations stay ternary.
    for name, arr in trace.representation_arrays():
        assert np.all(np.isin(arr, (-1.0, 0.0, 1.0))), name


def test_context_length_guard():
    layout = RegisterLayout()
    pos = layout.register("pos", 2)
    builder = ModelBuilder(layout, n_layers=1)
    dims = Dims(d=2, d_k=2, d_v=1, d_ff=1, n_heads=1, n_layers=1)
    params = builder.finalize(["x"], dims, BinaryAbsolute(2, pos.coords), "test")
    ev = Evaluator(params, EvalConfig())
    ev.extend(["x"] * 4)
    from tm2tf.netcore import EvalError

    with pytest.raises(EvalError):
        ev.extend(["x"])
    with pytest.raises(EvalError):
        ev.extend(["y"])  # unknown token


def test_params_json_roundtrip():
    params = _zero_model()
    params.qk_scale = 2.0 ** 7
    doc = params_to_json(params)
    back = params_from_json(doc)
    assert back.dims == params.dims
    assert back.vocab == params.vocab
    assert back.qk_scale == params.qk_scale
    assert np.array_equal(back.emb, params.emb)
    for l1, l2 in zip(back.layers, params.layers):
        assert np.array_equal(l1.w1, l2.w1)
        assert np.array_equal(l1.bias4, l2.bias4)
        for h1, h2 in zip(l1.heads, l2.heads):
            assert np.array_equal(h1.wq, h2.wq)
            assert np.array_equal(h1.wo, h2.wo)

    import json

    assert json.loads(json.dumps(doc)) == doc


def test_rounded_softmax_with_exact_precisions_matches_plain_softmax():
    params = _zero_model()
    cfg1 = EvalConfig(attention="softmax", capture_trace=True)
    cfg2 = EvalConfig(
        attention="softmax",
        act_precision=EXACT,
        att_precision=EXACT,
        capture_trace=True,
    )
    reps1, _ = forward(params, ["a", "b", "a"], cfg1)
    reps2, _ = forward(params, ["a", "b", "a"], cfg2)
    assert np.array_equal(reps1, reps2)


def test_incremental_matches_batch():
    """Processing tokens one by one equals processing them all at once."""
    params = _zero_model()
    cfg = EvalConfig(attention="softmax")
    ev1 = Evaluator(params, cfg)
    for tok in ["a", "b", "b", "a"]:
        ev1.extend([tok])
    ev2 = Evaluator(params, cfg)
    ev2.extend(["a", "b", "b", "a"])
    assert np.array_equal(ev1.final_representations(), ev2.final_representations())


def test_next_token_tie_diagnostic():
    params = _zero_model()
    ev = Evaluator(params, EvalConfig())
    ev.extend(["a"])
    tok = ev.next_token()  # all unembeddings zero: tie, lowest index wins
    assert tok == "a"
    assert ev.trace.tie_warnings == 1


def test_forward_trace_bit_identical():
    params = _zero_model()
    cfg = EvalConfig(attention="softmax", capture_trace=True)
    r1, t1 = forward(params, ["a", "b", "b"], cfg)
    r2, t2 = forward(params, ["a", "b", "b"], cfg)
    assert np.array_equal(r1, r2)
    for (n1, a1), (n2, a2) in zip(t1.representation_arrays(), t2.representation_arrays()):
        assert n1 == n2 and np.array_equal(a1, a2)
