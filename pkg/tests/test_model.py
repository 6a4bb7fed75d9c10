import dataclasses

import numpy as np
import pytest

from rpcate import model as M
from rpcate.data import Dataset, MinMaxScaler
from rpcate.model import (
    HyperParams,
    build_ablation,
    channel_attention,
    ffm_forward,
    init_params,
    load_checkpoint,
    model_forward,
    predict_head,
    rp_forward,
    save_checkpoint,
    zero_params,
)
from rpcate.tensor import Tensor


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _p(**arrays):
    return {k: Tensor(np.atleast_2d(np.asarray(v, dtype=float))) for k, v in arrays.items()}


def test_rp_zero_params_gives_half():
    hp = HyperParams(w=9, N=1)
    p = zero_params(3, hp).rep(1)
    out = rp_forward(Tensor(np.random.default_rng(0).normal(size=(12, 3))), p)
    np.testing.assert_array_equal(out.data, 0.5)


def test_rp_bias_only():
    p = _p(U=[[0.0]], W=[[0.0]], b_HL1=[[0.0]], V=[[0.0]], b_HL2=[[0.0]], W_HL2=[[0.0]], b=[[1.3]])
    assert rp_forward(Tensor([[0.7]]), p).item() == pytest.approx(sig(1.3), abs=1e-15)


def test_rp_two_step_hand_unroll():
    p = _p(U=[[1.0]], W=[[1.0]], b_HL1=[[0.0]], V=[[1.0]], b_HL2=[[0.0]], W_HL2=[[1.0]], b=[[0.0]])
    x1, x2 = 0.3, -0.8
    h1 = sig(x1)
    h2 = sig(x2 + h1)
    expected = [sig(sig(h1)), sig(sig(h2))]
    out = rp_forward(Tensor([[x1], [x2]]), p)
    np.testing.assert_allclose(out.data[:, 0], expected, rtol=1e-14)


def test_rp_is_causal(rng):
    hp = HyperParams(w=9, N=1, seed=3)
    p = init_params(3, hp).rep(1)
    x = rng.normal(size=(10, 3))
    base = rp_forward(Tensor(x), p).data
    x[6] += 1.0
    moved = rp_forward(Tensor(x), p).data
    np.testing.assert_array_equal(base[:6], moved[:6])
    assert not np.allclose(base[6:], moved[6:])


def test_attention_uniform_for_zero_ffn(rng):
    p = zero_params(3, HyperParams(w=9, N=1)).rep(1)
    att = channel_attention(Tensor(rng.normal(size=(12, 3))), 9, p)
    np.testing.assert_allclose(att.data, 1.0 / 3.0, rtol=1e-15)


def test_attention_rows_normalized(rng):
    p = init_params(4, HyperParams(w=25, N=1, seed=5)).rep(1)
    for t in p.values():
        t.data *= 5.0
    att = channel_attention(Tensor(rng.normal(size=(30, 4))), 25, p).data
    np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((att > 0) & (att < 1))


def test_ffm_zero_weights():
    p = zero_params(2, HyperParams(w=1, N=1)).rep(1)
    np.testing.assert_array_equal(ffm_forward(Tensor(np.ones((3, 2))), p).data, 0.5)


def test_ffm_one_by_two_hand_case():
    W1 = np.array([[1.0, -1.0, 0.5], [2.0, 0.0, -0.5]])
    W2 = np.array([[0.1, 0.2, 0.3], [0.0, -0.4, 0.2], [1.0, 0.0, 0.0]])
    W3 = np.array([[1.0, -1.0], [0.5, 0.5], [-2.0, 0.0]])
    b1, b2, b3 = np.array([[0.1, 0.0, -0.1]]), np.zeros((1, 3)), np.array([[0.2, -0.3]])
    p = _p(**{"FFN3.W1": W1, "FFN3.b1": b1, "FFN3.W2": W2, "FFN3.b2": b2, "FFN3.W3": W3, "FFN3.b3": b3})
    x = np.array([[0.4, -0.2]])
    # first layer by hand: pre = [0.4 - 0.4 + 0.1, -0.4 + 0, 0.2 + 0.1 - 0.1] = [0.1, -0.4, 0.2]
    l1 = sig(np.array([0.1, -0.4, 0.2]))
    l2 = sig(np.array([l1[0] * 0.1 + l1[2] * 1.0, l1[0] * 0.2 - l1[1] * 0.4, l1[0] * 0.3 + l1[1] * 0.2]))
    l3 = sig(np.array([l2[0] + 0.5 * l2[1] - 2.0 * l2[2] + 0.2, -l2[0] + 0.5 * l2[1] - 0.3]))
    np.testing.assert_allclose(ffm_forward(Tensor(x), p).data[0], l3, rtol=1e-14)


def test_ffm_input_under_uniform_attention():
    y_rp = Tensor(np.ones((4, 3)))
    att = Tensor(np.full((4, 3), 1 / 3))
    np.testing.assert_allclose((y_rp * att).data, 1 / 3)


def _head_params(W_L, b_L):
    params = zero_params(len(W_L), HyperParams(w=1, N=1))
    params.tensors["W_L"].data[:, 0] = W_L
    params.tensors["b_L"].data[...] = b_L
    return params


def test_head_examples(rng):
    assert predict_head(Tensor([[0.5]]), _head_params([2.0], 1.0)).item() == 2.0
    out = predict_head(Tensor(rng.normal(size=(5, 3))), _head_params([0.0, 0.0, 0.0], 0.7))
    np.testing.assert_array_equal(out.data, 0.7)
    y = rng.normal(size=(6, 3))
    out = predict_head(Tensor(y), _head_params([1.0, -2.0, 0.5], 0.3))
    np.testing.assert_allclose(out.data[:, 0], y @ np.array([1.0, -2.0, 0.5]) + 0.3, rtol=1e-14)


@pytest.mark.parametrize("m,n,w,N", [(9, 1, 9, 1), (12, 3, 9, 2), (30, 4, 25, 3), (5, 2, 4, 1)])
def test_forward_shape(rng, m, n, w, N):
    hp = HyperParams(w=w, N=N, batch_size=None)
    res = model_forward(rng.uniform(size=(m, n)), hp, init_params(n, hp))
    assert res.y_hat.shape == (m, 1)
    assert len(res.attentions) == N


def test_forward_rejects_too_few_rows(rng):
    hp = HyperParams(w=9, N=1)
    with pytest.raises(ValueError, match="w=9"):
        model_forward(rng.uniform(size=(8, 3)), hp, init_params(3, hp))


def _spy_inputs(monkeypatch):
    seen = []
    real = M.rp_forward

    def spy(x, p):
        seen.append(x.data.copy())
        return real(x, p)

    monkeypatch.setattr(M, "rp_forward", spy)
    return seen


def test_n1_single_pass(monkeypatch, rng):
    seen = _spy_inputs(monkeypatch)
    hp = HyperParams(w=9, N=1)
    model_forward(rng.uniform(size=(12, 3)), hp, init_params(3, hp))
    assert len(seen) == 1


@pytest.mark.parametrize("residual", ["text", "literal"])
def test_second_repetition_input(monkeypatch, rng, residual):
    seen = _spy_inputs(monkeypatch)
    hp = HyperParams(w=9, N=2, residual=residual, seed=1)
    params = init_params(3, hp)
    # force y_FFM of repetition 1 to exactly zero
    params.tensors["FFN3.W3.1"].data[...] = 0.0
    params.tensors["FFN3.b3.1"].data[...] = -800.0
    X = rng.uniform(size=(12, 3))
    model_forward(X, hp, params)
    I = X[np.argsort(X[:, 0], kind="stable")]
    expected = I if residual == "text" else 2 * I
    np.testing.assert_array_equal(seen[1], expected)


def test_forward_invariant_to_row_shuffle(rng):
    hp = HyperParams(w=9, N=2, seed=2)
    params = init_params(3, hp)
    X = rng.uniform(size=(15, 3))
    a = model_forward(X, hp, params).y_hat.data
    b = model_forward(X[rng.permutation(15)], hp, params).y_hat.data
    np.testing.assert_array_equal(a, b)


def test_ablation_variants(rng):
    hp = HyperParams(w=9, N=2, seed=4)
    X = rng.uniform(size=(12, 3))
    no_ca = build_ablation(hp, 3, "no_ca")
    res = no_ca.forward(X)
    for a in res.attentions:
        np.testing.assert_array_equal(a, 1 / 3)
    assert not any(k.startswith("FFN1") for k in no_ca.params.tensors)
    no_rp = build_ablation(hp, 3, "no_rp")
    assert not any(k.startswith("U.") for k in no_rp.params.tensors)
    full = build_ablation(hp, 3, "full")
    np.testing.assert_array_equal(full.forward(X).y_hat.data, model_forward(X, full.hp, full.params).y_hat.data)
    with pytest.raises(ValueError):
        build_ablation(hp, 3, "no_ffm")


def test_shared_parameters(rng):
    hp = HyperParams(w=9, N=3, share_params=True)
    params = init_params(3, hp)
    assert params.rep(1)["U"] is params.rep(3)["U"]
    assert not any(k.endswith(".2") for k in params.tensors)


@pytest.mark.parametrize("kw", [{"w": 8}, {"N": 0}, {"lam": -1.0}, {"residual": "both"},
                                {"ablation": "none"}, {"batch_size": 4}, {"epochs": 0}])
def test_hyperparams_validation(kw):
    with pytest.raises(ValueError):
        HyperParams(**kw)


def test_width_constraints():
    with pytest.raises(ValueError, match="n1 = n2"):
        HyperParams(n1=3, n2=3).widths(3)
    with pytest.raises(ValueError):
        HyperParams(n3=3).widths(3)
    assert HyperParams().widths(3) == {"d_h": 12, "d_m": 12, "n1": 6, "n2": 6, "n3": 6, "n4": 6}


def test_predict_returns_original_order(rng):
    hp = HyperParams(w=9, N=1, seed=6)
    model = build_ablation(hp, 3)
    X = rng.uniform(size=(12, 3))
    d = Dataset(X, np.zeros(12), np.zeros(12))
    y_hat, atts = model.predict(d)
    res = model.forward(X)
    np.testing.assert_array_equal(y_hat[res.perm], res.y_hat.data[:, 0])
    np.testing.assert_array_equal(atts[0][res.perm], res.attentions[0])
    with pytest.raises(ValueError, match="2 features.*expects 3"):
        model.prepare(np.zeros((12, 2)))


def test_checkpoint_round_trip(tmp_path, rng):
    hp = HyperParams(w=9, N=2, seed=8, ablation="no_rp")
    X = rng.uniform(size=(12, 3))
    model = build_ablation(hp, 3, scaler=MinMaxScaler.fit(X))
    path = tmp_path / "ck.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.variant == "no_rp"
    assert back.hp == model.hp
    for k, t in model.params.tensors.items():
        np.testing.assert_array_equal(back.params.tensors[k].data, t.data)
    np.testing.assert_array_equal(back.forward(X).y_hat.data, model.forward(X).y_hat.data)


def test_checkpoint_rejects_other_formats(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not an RP-CATE checkpoint"):
        load_checkpoint(p)


def test_hyperparams_dict_round_trip():
    hp = HyperParams(w=9, N=3, lr=0.01, lam=1e-3)
    assert HyperParams.from_dict(hp.to_dict()) == hp
    with pytest.raises(ValueError, match="unknown"):
        HyperParams.from_dict({**hp.to_dict(), "dropout": 0.1})
    assert dataclasses.replace(hp, N=1).N == 1
