import numpy as np
import pytest

from _oracles import freeze_ode_cell, gru
from ctsynth import tensor as T
from ctsynth.data import normalized_grid
from ctsynth.decoder import Decoder, decode_at, reconstruct
from ctsynth.ode import SolverConfig

CFG = SolverConfig("rk4", step_size=0.005)


def hidden_seq(seed, n=5, dim_h=4, times=None):
    rng = np.random.default_rng(seed)
    times = normalized_grid(n) if times is None else times
    return [(float(t), rng.standard_normal(dim_h)) for t in times]


def softplus(x):
    return np.logaddexp(0.0, x)


def test_zero_field_matches_discrete_gru():
    dec = Decoder(4, 3, np.random.default_rng(0))
    freeze_ode_cell(dec.g)
    hs = hidden_seq(1)
    out = reconstruct(dec, hs, CFG)
    d = hs[0][1] @ dec.fc_init.weight.data + dec.fc_init.bias.data
    for i, (t, h) in enumerate(hs):
        if i > 0:
            d = gru(h[None], d[None], dec.jump)[0]
        ref = softplus(d @ dec.fc_out.weight.data + dec.fc_out.bias.data)
        assert out[i][0] == t
        assert np.max(np.abs(out[i][1] - ref)) <= 1e-9


def test_single_query_at_start_reads_initial_state():
    dec = Decoder(4, 2, np.random.default_rng(2))
    hs = hidden_seq(3)
    (t, x), = decode_at(dec, hs, [hs[0][0]], CFG)
    d0 = hs[0][1] @ dec.fc_init.weight.data + dec.fc_init.bias.data
    assert t == hs[0][0]
    assert np.allclose(x, softplus(d0 @ dec.fc_out.weight.data + dec.fc_out.bias.data), atol=1e-12)


def test_constant_hidden_single_query():
    dec = Decoder(3, 2, np.random.default_rng(4))
    v = np.array([0.5, -0.2, 1.0])
    hs = [(float(t), v) for t in normalized_grid(6)]
    a = decode_at(dec, hs, [hs[0][0]], CFG)
    b = decode_at(dec, hs[:1] + hs[1:], [hs[0][0]], CFG)
    assert np.array_equal(a[0][1], b[0][1])


def test_upsampled_query_and_empty_query():
    dec = Decoder(4, 3, np.random.default_rng(5))
    hs = hidden_seq(6, n=24)
    q = np.linspace(hs[0][0], 1.0, 48)
    out = decode_at(dec, hs, q, CFG)
    assert len(out) == 48 and all(x.shape == (3,) for _, x in out)
    assert [t for t, _ in out] == list(q)
    assert decode_at(dec, hs, [], CFG) == []
    h = T.Tensor(np.stack([v for _, v in hs])[None])
    empty = dec.decode_batch(h, np.array([[t for t, _ in hs]]), np.zeros((1, 0)), CFG)
    assert empty.shape == (1, 0, 3)


def test_query_grid_independence():
    dec = Decoder(4, 2, np.random.default_rng(7))
    hs = hidden_seq(8, n=6)
    rng = np.random.default_rng(9)
    a = np.sort(rng.uniform(hs[0][0], 1.0, 7))
    b = np.sort(rng.uniform(hs[0][0], 1.0, 11))
    only_a = decode_at(dec, hs, a, CFG)
    both = dict((t, x) for t, x in decode_at(dec, hs, np.sort(np.concatenate([a, b])), CFG))
    for t, x in only_a:
        assert np.max(np.abs(x - both[t])) <= 1e-5


def test_output_continuous_in_query_time():
    dec = Decoder(4, 2, np.random.default_rng(10))
    hs = hidden_seq(11, n=6)
    for t in np.linspace(0.1, 0.9, 9):
        x0, x1 = (v for _, v in decode_at(dec, hs, [t, t + 1e-4], CFG))
        assert np.max(np.abs(x1 - x0)) <= 1e-2


def test_out_of_range_and_unsorted_queries_rejected():
    dec = Decoder(2, 1, np.random.default_rng(0))
    hs = hidden_seq(1, n=3, dim_h=2)
    with pytest.raises(ValueError):
        decode_at(dec, hs, [0.0], CFG)
    with pytest.raises(ValueError):
        decode_at(dec, hs, [0.9, 0.5], CFG)


def test_batch_rows_are_independent():
    dec = Decoder(3, 2, np.random.default_rng(12))
    rng = np.random.default_rng(13)
    h = rng.standard_normal((3, 5, 3))
    times = np.tile(normalized_grid(5), (3, 1))
    times[1, 2] = 0.45  # row 1 has its own grid
    q = np.sort(rng.uniform(0.02, 1.0, (3, 4)), axis=1)
    with T.no_grad():
        full = dec.decode_batch(T.Tensor(h), times, q, CFG).data
        perm = np.array([2, 0, 1])
        shuffled = dec.decode_batch(T.Tensor(h[perm]), times[perm], q[perm], CFG).data
    assert np.allclose(shuffled, full[perm], atol=1e-6)


def test_decoder_gradient_check():
    rng = np.random.default_rng(14)
    dec = Decoder(3, 2, rng)
    h = T.Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    times = np.tile(normalized_grid(4), (2, 1))
    q = np.array([[0.1, 0.5, 0.7], [0.02, 0.4, 1.0]])
    cfg = SolverConfig("rk4", step_size=0.1)
    y = rng.uniform(0, 1, (2, 3, 2))

    def loss():
        d = dec.decode_batch(h, times, q, cfg) - y
        return (d * d).mean()

    assert T.gradient_check(loss, dec.parameters() + [h], eps=1e-6) <= 1e-3
