import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from skillcalc.nn import (
    CheckpointVersionMismatch, EmptySequence, IdOutOfRange, NonFiniteError,
    ParamStore, ShapeMismatch, SubstrateConfig, birnn_encode, dumps_checkpoint,
    embed, ffn, gru_step, init_birnn, init_embedding, init_gru, init_linear,
    init_pointer, load_checkpoint, loads_checkpoint, pointer_attention,
    positional_encoding, save_checkpoint, softmax_head,
)
from skillcalc.nn.gradcheck import (
    SUBSTRATE_CASES, check_substrate, finite_difference_check,
)


def small_store(seed=0, dtype="float64"):
    return ParamStore(SubstrateConfig(hidden_size=6, embedding_size=5, seed=seed, dtype=dtype))


def test_embedding_positions():
    store = small_store()
    init_embedding(store, "emb", 17, 5)
    ids = [3, 1, 1, 1, 1, 3]
    plain = embed(store, "emb", ids)
    assert torch.equal(plain[0], plain[5])
    pos = embed(store, "emb", ids, with_position=True)
    assert not torch.allclose(pos[0], pos[5])
    assert positional_encoding(4, 5, torch.float64)[0, 0] == 0.0
    with pytest.raises(IdOutOfRange):
        embed(store, "emb", [17])


def test_gru_zero_weights_halves_state():
    store = small_store()
    init_gru(store, "g", 5, 6)
    with torch.no_grad():
        for name in store.names():
            store[name].zero_()
    h = torch.linspace(-1, 1, 6, dtype=torch.float64)
    out = gru_step(store, "g", torch.ones(5, dtype=torch.float64), h)
    assert torch.allclose(out, 0.5 * h, atol=1e-15)


def _numpy_gru(x, h, w_ih, w_hh, b_ih, b_hh):
    sig = lambda v: 1 / (1 + np.exp(-v))
    gi, gh = w_ih @ x + b_ih, w_hh @ h + b_hh
    H = h.shape[0]
    r = sig(gi[:H] + gh[:H])
    z = sig(gi[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
    return (1 - z) * n + z * h


def test_gru_matches_reference_equations():
    store = small_store(3)
    init_gru(store, "g", 5, 6)
    rng = np.random.default_rng(1)
    with torch.no_grad():
        for name in store.names():
            store[name].copy_(torch.as_tensor(rng.normal(size=store[name].shape)))
    x, h = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 6)
    got = gru_step(store, "g", torch.as_tensor(x), torch.as_tensor(h)).detach().numpy()
    ref = _numpy_gru(x, h, *(store[f"g.{k}"].detach().numpy() for k in ("w_ih", "w_hh", "b_ih", "b_hh")))
    np.testing.assert_allclose(got, ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.integers(0, 100))
def test_gru_output_stays_bounded(h, seed):
    store = small_store(seed)
    init_gru(store, "g", 5, 6)
    x = torch.as_tensor(np.random.default_rng(seed).uniform(-10, 10, 5))
    out = gru_step(store, "g", x, torch.tensor(h, dtype=torch.float64))
    assert bool((out.abs() < 1).all())


def test_gru_shape_mismatch():
    store = small_store()
    init_gru(store, "g", 5, 6)
    with pytest.raises(ShapeMismatch):
        gru_step(store, "g", torch.zeros(4, dtype=torch.float64), torch.zeros(6, dtype=torch.float64))


def test_birnn_single_step_and_empty():
    store = small_store()
    init_birnn(store, "r", 5, 4)
    x = torch.as_tensor(np.random.default_rng(0).uniform(-1, 1, (1, 5)))
    out = birnn_encode(store, "r", x)
    zero = torch.zeros(4, dtype=torch.float64)
    assert torch.allclose(out[0, :4], gru_step(store, "r.fwd", x[0], zero))
    assert torch.allclose(out[0, 4:], gru_step(store, "r.bwd", x[0], zero))
    with pytest.raises(EmptySequence):
        birnn_encode(store, "r", x[:0])


def test_birnn_reversal_symmetry():
    store = small_store(4)
    init_birnn(store, "r", 5, 4)
    swapped = small_store(4)
    for name in store.names():
        mirror = name.replace(".fwd.", ".tmp.").replace(".bwd.", ".fwd.").replace(".tmp.", ".bwd.")
        swapped.set(mirror, store[name].detach().numpy())
    x = torch.as_tensor(np.random.default_rng(2).uniform(-1, 1, (6, 5)))
    out = birnn_encode(store, "r", x)
    rev = birnn_encode(swapped, "r", torch.flip(x, [0]))
    expected = torch.cat([out[:, 4:], out[:, :4]], -1).flip(0)
    assert torch.allclose(rev, expected, atol=1e-14)


def test_birnn_padding_matches_unpadded():
    store = small_store(5)
    init_birnn(store, "r", 5, 4)
    rng = np.random.default_rng(0)
    a = torch.as_tensor(rng.uniform(-1, 1, (3, 5)))
    padded = torch.cat([a, torch.as_tensor(rng.uniform(-1, 1, (2, 5)))])[None]
    mask = torch.tensor([[True, True, True, False, False]])
    out = birnn_encode(store, "r", padded, mask)[0, :3]
    assert torch.allclose(out, birnn_encode(store, "r", a), atol=1e-14)


def test_softmax_head_properties():
    store = small_store()
    init_linear(store, "h", 6, 5)
    with torch.no_grad():
        store["h.w"].zero_()
    p = softmax_head(store, "h", torch.ones(6, dtype=torch.float64), 5)
    assert torch.allclose(p, torch.full((5,), 0.2, dtype=torch.float64))
    with pytest.raises(ShapeMismatch):
        softmax_head(store, "h", torch.ones(6, dtype=torch.float64), 4)
    with pytest.raises(ShapeMismatch):
        ffn(store, "h", torch.ones(3, dtype=torch.float64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_normalised(seed):
    store = small_store(seed)
    init_linear(store, "h", 6, 7)
    x = torch.as_tensor(np.random.default_rng(seed).uniform(-10, 10, (4, 6)))
    p = softmax_head(store, "h", x, 7)
    assert torch.allclose(p.sum(-1), torch.ones(4, dtype=torch.float64), atol=1e-12)
    assert bool((p > 0).all())


def test_pointer_attention_symmetry():
    store = small_store()
    init_pointer(store, "p", key_dim=4, query_dim=6, attn_dim=5)
    q = torch.as_tensor(np.random.default_rng(0).uniform(-1, 1, 6))
    keys = torch.ones(5, 4, dtype=torch.float64) * 0.3
    assert torch.allclose(pointer_attention(store, "p", q, keys), torch.full((5,), 0.2, dtype=torch.float64))
    assert pointer_attention(store, "p", q, keys[:1]).item() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(EmptySequence):
        pointer_attention(store, "p", q, keys[:0])


def test_pointer_mask_excludes_padding():
    store = small_store()
    init_pointer(store, "p", key_dim=4, query_dim=6, attn_dim=5, heads=2)
    rng = np.random.default_rng(1)
    q = torch.as_tensor(rng.uniform(-1, 1, (1, 6)))
    keys = torch.as_tensor(rng.uniform(-1, 1, (1, 4, 4)))
    mask = torch.tensor([[True, True, False, False]])
    p = pointer_attention(store, "p", q, keys, mask)
    assert p.shape == (1, 2, 4)
    assert bool((p[..., 2:] == 0).all())
    assert torch.allclose(p.sum(-1), torch.ones(1, 2, dtype=torch.float64))


def test_adam_zero_gradient_is_a_no_op():
    store = small_store()
    init_linear(store, "h", 3, 2)
    before = store.checksum()
    store.adam_step({n: torch.zeros_like(p) for n, p in store})
    assert store.checksum() == before


def test_adam_descends_on_square():
    store = ParamStore(SubstrateConfig(hidden_size=1, learning_rate=0.1, dtype="float64"))
    store.set("w", np.array([1.0]))
    (store["w"] ** 2).sum().backward()
    store.adam_step()
    assert store["w"].item() < 1.0


def test_adam_rejects_non_finite_and_frozen():
    store = small_store()
    store.set("w", np.array([1.0]))
    with pytest.raises(NonFiniteError):
        store.adam_step({"w": torch.tensor([float("nan")], dtype=torch.float64)})
    store.freeze()
    with pytest.raises(RuntimeError):
        store.adam_step()


def test_shapes_are_fixed():
    store = small_store()
    store.create("w", (2, 3))
    with pytest.raises(KeyError):
        store.create("w", (2, 3))
    with pytest.raises(ValueError):
        store.set("w", np.zeros((3, 2)))


def _trained_store():
    store = ParamStore(SubstrateConfig(hidden_size=4, embedding_size=3, seed=7))
    init_embedding(store, "emb", 17, 3)
    init_birnn(store, "r", 3, 4)
    loss = birnn_encode(store, "r", embed(store, "emb", [1, 2, 3], True)).pow(2).sum()
    loss.backward()
    store.adam_step()
    store.meta["task"] = "S+S"
    return store


def test_checkpoint_round_trip(tmp_path):
    store = _trained_store()
    path = tmp_path / "m.ckpt"
    save_checkpoint(store, path)
    loaded = load_checkpoint(path)
    assert loaded.checksum() == store.checksum()
    assert loaded.adam_t == store.adam_t and loaded.meta == {"task": "S+S"}
    for name in store.names():
        assert torch.equal(loaded.adam_m[name], store.adam_m[name])
    x = embed(store, "emb", [4, 5], True)
    assert torch.equal(birnn_encode(store, "r", x), birnn_encode(loaded, "r", embed(loaded, "emb", [4, 5], True)))
    assert loaded.rng.integers(1 << 30) == store.rng.integers(1 << 30)
    assert dumps_checkpoint(loaded) != b""


def test_checkpoint_bytes_deterministic():
    a, b = _trained_store(), _trained_store()
    assert dumps_checkpoint(a) == dumps_checkpoint(b)
    assert dumps_checkpoint(loads_checkpoint(dumps_checkpoint(a))) == dumps_checkpoint(a)


def test_checkpoint_version_mismatch():
    data = bytearray(dumps_checkpoint(_trained_store()))
    data[6] = 99
    with pytest.raises(CheckpointVersionMismatch):
        loads_checkpoint(bytes(data))
    with pytest.raises(CheckpointVersionMismatch):
        loads_checkpoint(b"garbage")


def test_gradcheck_all_ops_pass():
    results = check_substrate(seed=0)
    assert [r.op for r in results] == list(SUBSTRATE_CASES)
    for r in results:
        assert r.passed, (r.op, r.max_rel_error)


def test_gradcheck_catches_corrupted_gradient():
    def corrupted(seed):
        store = small_store(seed)
        store.set("w", np.random.default_rng(seed).uniform(-1, 1, 4))

        class Leaky(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return torch.tanh(x)

            @staticmethod
            def backward(ctx, g):
                return g * 0.5  # wrong on purpose

        return store, lambda: Leaky.apply(store["w"]).sum()

    (result,) = check_substrate(0, {"broken": corrupted})
    assert not result.passed


def test_finite_difference_zero_gradient_for_unused_params():
    store = small_store()
    store.set("used", np.array([0.5, -0.2]))
    store.set("unused", np.array([1.0]))
    err, n = finite_difference_check(lambda: (store["used"] ** 3).sum(), store)
    assert err < 1e-6 and n == 3
