import math
import os

import numpy as np
import pytest

from ctsynth import data as D
from ctsynth import tensor as T
from ctsynth.config import NEVER, TrainConfig
from ctsynth.discriminator import Discriminator, bce_fake, bce_real
from ctsynth.errors import DataError, TrainingAbort
from ctsynth.optim import Adam
from ctsynth.trainer import METRIC_COLUMNS, Trainer

SMALL = dict(batch_size=8, ode_substeps=1, K_AE=2, K_JOINT=2, P_MLE=2)


def tiny(n=16, dim=2, length=6, seed=0):
    return D.gen_sines(n, np.random.default_rng(seed), dim=dim, length=length)


def params(tr):
    return {n: p.data.copy() for n, p in tr.model.named_parameters()}


def test_zero_iterations_leave_parameters_unchanged():
    tr = Trainer(TrainConfig(**{**SMALL, "K_AE": 0, "K_JOINT": 0}), tiny())
    before = params(tr)
    assert tr.train() == []
    assert all(np.array_equal(before[k], v) for k, v in params(tr).items())


def test_zero_learning_rates_are_bit_identical():
    cfg = TrainConfig(**SMALL, lr_ae=0.0, lr_gen=0.0, lr_disc=0.0)
    tr = Trainer(cfg, tiny())
    before = params(tr)
    tr.pretrain_step()
    tr.joint_step()
    assert all(np.array_equal(before[k], v) for k, v in params(tr).items())


def test_trace_order(tmp_path):
    tr = Trainer(TrainConfig(**SMALL), tiny(), out_dir=str(tmp_path))
    tr.train()
    expected = ["pre:0:ae", "pre:1:ae",
                "0:ae", "0:mle", "0:disc", "0:gen", "0:assist",
                "1:ae", "1:disc", "1:gen", "1:assist"]
    assert tr.trace == expected
    assert (tmp_path / "trace.log").read_text().split() == expected
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS) == "iter,recon,disc,gen,mle,kinetic,jac,dir"


def test_no_mle_and_no_pretraining_ablations():
    tr = Trainer(TrainConfig(**{**SMALL, "K_AE": 0, "P_MLE": NEVER}), tiny())
    rows = tr.train()
    assert not any(t.startswith("pre:") or t.endswith(":mle") for t in tr.trace)
    assert all("mle" not in r for r in rows)
    assert [t.split(":")[1] for t in tr.trace] == ["ae", "disc", "gen", "assist"] * 2


def test_k_joint_zero_equals_pretraining_alone():
    cfg = TrainConfig(**{**SMALL, "K_JOINT": 0})
    a = Trainer(cfg, tiny()).train()
    b = Trainer(cfg, tiny())
    assert [r["recon"] for r in a] == b.pretrain()


def test_seeded_runs_are_bit_identical(tmp_path):
    for name in ("a", "b"):
        Trainer(TrainConfig(**SMALL, seed=3), tiny(), out_dir=str(tmp_path / name)).train()
    for f in ("metrics.csv", "trace.log", "checkpoint/params.bin", "checkpoint/optim.bin", "checkpoint/rng.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    Trainer(TrainConfig(**SMALL, seed=4), tiny(), out_dir=str(tmp_path / "c")).train()
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_checkpoint_round_trip_and_resume(tmp_path):
    cfg = TrainConfig(**{**SMALL, "K_JOINT": 3})
    straight = Trainer(cfg, tiny())
    straight.train()

    tr = Trainer(cfg, tiny())
    tr.pretrain()
    tr.joint_step()
    tr.save(str(tmp_path / "ck"))
    back = Trainer.load(str(tmp_path / "ck"), data=tiny())
    back.save(str(tmp_path / "ck2"))
    for f in ("manifest.json", "params.bin", "optim.bin", "rng.json", "state.json"):
        assert (tmp_path / "ck" / f).read_bytes() == (tmp_path / "ck2" / f).read_bytes()
    back.train()
    assert all(np.array_equal(params(straight)[k], v) for k, v in params(back).items())


def test_restored_trainer_without_data_can_sample_but_not_train(tmp_path):
    tr = Trainer(TrainConfig(**SMALL), tiny())
    tr.save(str(tmp_path / "ck"))
    back = Trainer.load(str(tmp_path / "ck"))
    assert len(back.sample(3)) == 3
    with pytest.raises(DataError):
        back.train()


def test_constant_dataset_reconstruction_goes_to_zero():
    s = [D.SeriesSample(D.normalized_grid(6), np.full((6, 2), 0.5)) for _ in range(8)]
    tr = Trainer(TrainConfig(batch_size=8, ode_substeps=1, lr_ae=1e-2), D.Dataset(s))
    losses = tr.pretrain(200)
    assert losses[-1] <= 1e-3 and losses[-1] < losses[0] / 10


def test_discriminator_on_indistinguishable_data_tends_to_log2():
    # generator frozen to emit real data verbatim: fake batches are real batches
    ds = tiny(n=64, dim=2, length=6)
    t, x = ds.arrays()
    tr = Trainer(TrainConfig(batch_size=16, ode_substeps=1), ds)
    disc = Discriminator(2, np.random.default_rng(1))
    opt = Adam(disc.parameters(), lr=1e-3)
    rng = np.random.default_rng(2)
    per_side = []
    for _ in range(150):
        a, b = rng.choice(64, 16, replace=False), rng.choice(64, 16, replace=False)
        loss = bce_real(disc.logits(t[a], x[a], tr.net_cfg)) + bce_fake(disc.logits(t[b], x[b], tr.net_cfg))
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        per_side.append(loss.item() / 2)
    assert abs(np.mean(per_side[-30:]) - math.log(2.0)) <= 0.1


def test_sampling_contract():
    tr = Trainer(TrainConfig(**SMALL), tiny(length=24))
    assert len(tr.sample(0)) == 0
    a = tr.sample(4, seed=9)
    assert a.lengths == {24} and not a.irregular
    b = tr.sample(4, seed=9)
    assert all(np.array_equal(u.values, v.values) for u, v in zip(a.samples, b.samples))
    c = tr.sample(4, seed=10)
    assert not np.array_equal(a.samples[0].values, c.samples[0].values)
    up = tr.sample(2, times=np.linspace(0, 1, 48))
    assert up.lengths == {48}
    with pytest.raises(DataError):
        tr.sample(2, times=[0.5, 1.2])
    with pytest.raises(DataError):
        tr.sample(2, times=[0.5, 0.4])


def test_irregular_query_times():
    ds = D.drop_random(tiny(length=10), 0.3, np.random.default_rng(0))
    tr = Trainer(TrainConfig(**SMALL), ds)
    q = tr.query_times(5, np.random.default_rng(1))
    assert q.shape == (5, 7)
    assert np.all(np.diff(q, axis=1) >= 0) and q.min() >= D.TIME_EPS and q.max() <= 1.0
    tr.train()  # irregular data runs through the same loop


def test_nan_aborts_with_iteration_and_substep():
    tr = Trainer(TrainConfig(**SMALL), tiny())
    tr.pretrain_step()
    tr.model.decoder.fc_out.bias.data[:] = np.nan
    with pytest.raises(TrainingAbort) as exc:
        tr.pretrain_step()
    assert exc.value.iteration == 1 and exc.value.substep == "ae"

    tr = Trainer(TrainConfig(**{**SMALL, "K_AE": 0}), tiny())
    tr.model.generator.b0.data[:] = np.nan
    with pytest.raises(TrainingAbort) as exc:
        tr.joint_step()
    assert exc.value.substep == "mle" and "iteration 0" in str(exc.value)


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        Trainer(TrainConfig(), D.Dataset([]))
