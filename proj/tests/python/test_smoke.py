# Copyright 2026 The psae Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import psae


@pytest.fixture(scope="module")
def data():
    return psae.gen_superposition(1500, n_true=48, dim=8, seed=1)


@pytest.fixture(scope="module")
def model(data):
    return psae.train(data, arch="matryoshka", sizes=[8, 16, 32], k=4, lr=1e-3, batch_size=50, n_tokens=3000, seed=2)


def test_generator(data):
    assert data.shape == (1500, 8)
    assert data.dtype == np.float32
    again = psae.gen_superposition(1500, n_true=48, dim=8, seed=1)
    assert np.array_equal(data, again)


def test_init_and_codes():
    sae = psae.Sae.init(32, 8, 4, 0)
    assert (sae.n, sae.d, sae.k) == (32, 8, 4)
    assert np.allclose(np.linalg.norm(sae.w_dec, axis=1), 1.0, atol=1e-5)
    x = psae.gen_superposition(10, n_true=48, dim=8, seed=3)
    idx, val = sae.encode(x, 4)
    assert idx.shape == (10, 4) and val.shape == (10, 4)
    assert idx.max() < 32


def test_training_improves(model, data):
    assert model.sizes == [8, 16, 32]
    assert len(set(model.b_enc.tolist())) > 1
    assert len(set(model.b_center.tolist())) > 1
    untrained = psae.Sae.init(32, 8, 4, 2)
    assert psae.fvu(data, model.reconstruct(data)) < psae.fvu(data, untrained.reconstruct(data))


def test_permutation_keeps_full_reconstruction(model, data):
    perm = model.rank(data, "mean-sq")
    assert sorted(perm) == list(range(32))
    a = model.reconstruct(data)
    b = model.permuted(perm).reconstruct(data)
    assert np.allclose(a, b, rtol=1e-5, atol=1e-6)


def test_frontier(model, data):
    pts = model.frontier(data, [8, 16, 32], 200)
    assert len(pts) == 3
    assert all(0.0 <= p["fvu"] for p in pts)


def test_save_load(model, tmp_path):
    path = tmp_path / "m.psae"
    model.save(path)
    back = psae.Sae.load(path)
    assert np.array_equal(back.w_dec, model.w_dec)


def test_metrics():
    x = np.array([[1, 0], [3, 0]], dtype=np.float32)
    xh = np.array([[1, 0], [1, 0]], dtype=np.float32)
    assert math.isclose(psae.fvu(x, xh), 2.0 / 3.0, rel_tol=1e-9)
    r = np.random.default_rng(0).normal(size=(20, 4)).astype(np.float32)
    assert math.isclose(psae.rsa(r, 2 * r), 1.0, abs_tol=1e-9)


def test_power_law_and_scaling():
    fit = psae.fit_power_law([1.0 / r for r in range(1, 101)], 0.0, 1.0)
    assert math.isclose(fit["exponent"], -1.0, abs_tol=1e-9)
    p = psae.ScalingLawParams()
    p.alpha, p.beta_k, p.beta_g, p.zeta, p.eta = -3.0, 0.5, -0.2, -2.0, -0.1
    n, k, g, loss = [], [], [], []
    for nn in (1024.0, 4096.0):
        for kk in (8.0, 32.0, 128.0):
            for gg in (256.0, 1024.0):
                n.append(nn)
                k.append(kk)
                g.append(gg)
                loss.append(psae.predict_loss(p, nn, kk, gg))
    _, r2 = psae.fit_scaling_law(n, k, g, loss, 4, 0)
    assert r2 >= 0.999
    with pytest.raises(ValueError):
        psae.fit_power_law([1.0, 2.0], 0.0, 1.0)
