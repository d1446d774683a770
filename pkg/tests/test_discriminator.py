import numpy as np
import pytest

from _oracles import freeze_ode_cell, gru
from ctsynth import tensor as T
from ctsynth.data import SeriesSample, normalized_grid
from ctsynth.discriminator import Discriminator, bce_fake, bce_real, classify
from ctsynth.ode import SolverConfig

CFG = SolverConfig("rk4", step_size=0.01)


def batch(seed, B=4, L=6, dim=3):
    rng = np.random.default_rng(seed)
    return np.tile(normalized_grid(L), (B, 1)), rng.uniform(0, 1, (B, L, dim))


def test_zero_classifier_head_gives_half():
    disc = Discriminator(3, np.random.default_rng(0))
    disc.fc_cls.weight.data[:] = 0.0
    disc.fc_cls.bias.data[:] = 0.0
    t, x = batch(1)
    assert np.array_equal(disc.prob_real(t, x, CFG), np.full(4, 0.5))


@pytest.mark.parametrize("layers", [1, 2])
def test_zero_field_matches_stacked_gru(layers):
    disc = Discriminator(3, np.random.default_rng(2), layers=layers)
    freeze_ode_cell(disc.q)
    t, x = batch(3)
    c = x[:, 0] @ disc.fc_init.weight.data + disc.fc_init.bias.data
    for i in range(1, x.shape[1]):
        for cell in disc.jumps:
            c = gru(x[:, i], c, cell)
    logits = c @ disc.fc_cls.weight.data + disc.fc_cls.bias.data
    p = np.exp(logits[:, 0]) / np.exp(logits).sum(axis=1)
    assert np.allclose(disc.prob_real(t, x, CFG), p, atol=1e-12)


def test_probabilities_are_a_distribution():
    disc = Discriminator(3, np.random.default_rng(4))
    t, x = batch(5, B=8)
    with T.no_grad():
        lp = T.log_softmax(disc.logits(t, x, CFG)).data
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
    assert np.all((np.exp(lp) >= 0) & (np.exp(lp) <= 1))


def test_batch_permutation_invariance():
    disc = Discriminator(3, np.random.default_rng(6))
    t, x = batch(7, B=5)
    t[2, 3] = 0.5  # an irregular row
    p = disc.prob_real(t, x, CFG)
    perm = np.array([4, 2, 0, 1, 3])
    assert np.allclose(disc.prob_real(t[perm], x[perm], CFG), p[perm], atol=1e-12)
    one = classify(disc, SeriesSample(t[2], x[2]), CFG)
    assert one == pytest.approx(p[2], abs=1e-6)


def test_bce_values():
    logits = T.Tensor(np.zeros((3, 2)))
    assert bce_real(logits).item() == pytest.approx(np.log(2.0), abs=1e-12)
    assert bce_fake(logits).item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_bce_gradient_check():
    rng = np.random.default_rng(8)
    disc = Discriminator(2, rng, dim_c=4)
    t, x = batch(9, B=3, L=4, dim=2)
    xt = T.Tensor(x, requires_grad=True)
    cfg = SolverConfig("rk4", step_size=0.1)

    def loss():
        lg = disc.logits(t, xt, cfg)
        return bce_real(lg) + bce_fake(lg) * 0.5

    assert T.gradient_check(loss, disc.parameters() + [xt], eps=1e-6) <= 1e-3
