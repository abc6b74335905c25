import numpy as np
import pytest

from lpnest.dist import generalized_gaussian
from lpnest.nn import Dense, Mlp
from lpnest.sprites import SpritesConfig, generate
from lpnest.tree import make_isa_tree
from lpnest.dist import LpNestedDistribution
from lpnest.vae import (
    PriorSpec,
    TrainConfig,
    VaeModel,
    bernoulli_recon_loglik,
    elbo,
    elbo_isa,
    elbo_standard,
    gaussian_kl,
    latent_traversal,
    log_q,
    reparameterize,
    train,
)


def _small_model(rng, P=6, K=4, H=5, prior=None, trainable=False):
    cfg = TrainConfig(latent_dim=K, hidden=H, prior=prior or PriorSpec(), trainable_exponents=trainable)
    return VaeModel.init(P, cfg, rng)


def _isa_prior(sizes=(2, 2), p0=2.0, p_sub=(2.0, 2.0), s=2.0):
    return PriorSpec("isa", list(sizes), p0, list(p_sub), s)


def _data(rng, B=5, P=6):
    return (rng.uniform(size=(B, P)) > 0.5).astype(float)


# -- encoder and pieces -------------------------------------------------------


def test_zero_encoder_gives_standard_posterior(rng):
    model = _small_model(rng)
    for layer in model.encoder.layers:
        layer.W[:] = 0
        layer.b[:] = 0
    mu, logvar = model.encode(rng.uniform(size=(3, 6)))
    assert np.all(mu == 0) and np.all(logvar == 0)


def test_encoder_is_stateless_over_batches(rng):
    model = _small_model(rng)
    x = rng.uniform(size=(7, 6))
    mu, lv = model.encode(x)
    mu1, lv1 = model.encode(x[2:3])
    np.testing.assert_allclose(mu[2:3], mu1, rtol=1e-12)
    np.testing.assert_allclose(lv[2:3], lv1, rtol=1e-12)


def test_encoder_rejects_out_of_range_pixels(rng):
    model = _small_model(rng)
    with pytest.raises(ValueError):
        model.encode(np.full((1, 6), 1.5))


def test_reparameterize():
    z = reparameterize(np.array([1.0, -1.0]), np.log([4.0, 0.25]), np.array([0.5, 2.0]))
    np.testing.assert_allclose(z, [2.0, 0.0])


def test_bernoulli_at_zero_logits():
    x = np.array([[0.0, 1.0, 0.3, 1.0]])
    assert bernoulli_recon_loglik(np.zeros((1, 4)), x)[0] == pytest.approx(-4 * np.log(2.0))


def test_bernoulli_saturates_without_overflow():
    ll = bernoulli_recon_loglik(np.array([[800.0, -800.0]]), np.array([[1.0, 0.0]]))
    assert ll[0] == pytest.approx(0.0, abs=1e-300)
    ll = bernoulli_recon_loglik(np.array([[800.0]]), np.array([[0.0]]))
    assert ll[0] == pytest.approx(-800.0)


def test_bernoulli_matches_clamped_probability_oracle(rng):
    logits = rng.normal(scale=3, size=(4, 9))
    x = rng.uniform(size=(4, 9))
    prob = np.clip(1 / (1 + np.exp(-logits)), 1e-12, 1 - 1e-12)
    ref = np.sum(x * np.log(prob) + (1 - x) * np.log1p(-prob), axis=1)
    np.testing.assert_allclose(bernoulli_recon_loglik(logits, x), ref, rtol=1e-9)


def test_bernoulli_rejects_bad_targets():
    with pytest.raises(ValueError):
        bernoulli_recon_loglik(np.zeros((1, 2)), np.array([[0.0, -0.1]]))


def test_gaussian_kl_examples():
    assert gaussian_kl(np.zeros((1, 3)), np.zeros((1, 3)))[0] == 0.0
    assert gaussian_kl(np.array([[1.0]]), np.array([[0.0]]))[0] == pytest.approx(0.5)


def test_log_q_is_gaussian_density():
    z = np.array([[0.5, -1.0]])
    mu = np.array([[0.0, 1.0]])
    lv = np.log([[2.0, 0.5]])
    ref = -0.5 * (np.log(2 * np.pi * 2.0) + 0.25 / 2.0) - 0.5 * (np.log(2 * np.pi * 0.5) + 4.0 / 0.5)
    assert log_q(z, mu, lv)[0] == pytest.approx(ref)


# -- objectives ---------------------------------------------------------------


def test_isa_prior_with_p2_s2_matches_standard_objective(rng):
    std_model = _small_model(rng)
    isa_model = VaeModel(std_model.encoder, std_model.decoder, _isa_prior().build())
    x = _data(rng, B=4)
    noise = rng.standard_normal((10_000, 4, 4))
    a = elbo_standard(std_model, x, 1.0, noise)
    b = elbo_isa(isa_model, x, 1.0, noise)
    assert a.recon == pytest.approx(b.recon, rel=1e-12)
    # per-draw KL samples give the standard error of the MC estimate
    mu, lv = std_model.encode(x)
    z = mu + np.exp(0.5 * lv) * noise
    per = (log_q(z, mu, lv) - isa_model.prior.log_density(z.reshape(-1, 4)).reshape(z.shape[:2])).mean(1)
    se = per.std(ddof=1) / np.sqrt(len(per))
    assert abs(a.kl - b.kl) < 3 * se


def test_mc_kl_is_unbiased(rng):
    prior = LpNestedDistribution(make_isa_tree([2, 1], 2.0, [2.0, 2.0]), 2.0)
    mu = np.array([0.7, -0.3, 1.2])
    lv = np.log([0.5, 1.3, 0.8])
    eps = rng.standard_normal((100_000, 3))
    z = mu + np.exp(0.5 * lv) * eps
    per = log_q(z, mu, lv) - prior.log_density(z)
    se = per.std(ddof=1) / np.sqrt(len(per))
    assert abs(per.mean() - gaussian_kl(mu, lv)) < 3 * se


def test_beta_zero_is_pure_reconstruction(rng):
    model = _small_model(rng, prior=_isa_prior())
    x = _data(rng)
    noise = rng.standard_normal((2, 5, 4))
    res = elbo(model, x, 0.0, noise)
    assert res.value == res.recon


@pytest.mark.parametrize("prior", [None, "isa"])
def test_beta_identity(prior, rng):
    model = _small_model(rng, prior=_isa_prior(p0=2.1, p_sub=(1.5, 2.5)) if prior else None)
    x = _data(rng)
    noise = rng.standard_normal((3, 5, 4))
    for beta in (0.5, 1.0, 4.0):
        res = elbo(model, x, beta, noise)
        assert res.value == pytest.approx(res.recon - beta * res.kl, rel=1e-12)


def test_objective_dispatch_guards(rng):
    std_model = _small_model(rng)
    isa_model = _small_model(rng, prior=_isa_prior())
    noise = np.zeros((5, 4))
    with pytest.raises(ValueError):
        elbo_isa(std_model, _data(rng), 1.0, noise)
    with pytest.raises(ValueError):
        elbo_standard(isa_model, _data(rng), 1.0, noise)
    with pytest.raises(ValueError):
        elbo(isa_model, _data(rng), 1.0, np.zeros((5, 3)))


def _fd_check(model, x, beta, noise, rng, n_checks=6, h=1e-6):
    res = elbo(model, x, beta, noise)
    for p, g in zip(model.params(), res.grads):
        assert g.shape == p.shape
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in rng.choice(flat.size, size=min(n_checks, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = elbo(model, x, beta, noise).value
            flat[i] = old - h
            dn = elbo(model, x, beta, noise).value
            flat[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - gflat[i]) < 1e-5 * max(1.0, abs(fd)), (i, fd, gflat[i])


@pytest.mark.parametrize("prior", [None, "isa"])
def test_gradients_match_finite_differences(prior, rng):
    spec = _isa_prior(p0=2.1, p_sub=(1.5, 2.5)) if prior else None
    model = _small_model(rng, prior=spec)
    _fd_check(model, _data(rng), 2.0, rng.standard_normal((2, 5, 4)), rng)


def test_exponent_gradients_match_finite_differences(rng):
    model = _small_model(rng, prior=_isa_prior(p0=2.1, p_sub=(1.7, 2.4)), trainable=True)
    assert model.exponent_raw is not None
    np.testing.assert_allclose(model.exponents()[1:], [2.0, 2.0])  # reset at init
    model.exponent_raw[:] = [0.3, 1.1]
    _fd_check(model, _data(rng), 1.5, rng.standard_normal((2, 5, 4)), rng)


def test_exponents_respect_floor(rng):
    model = _small_model(rng, prior=_isa_prior(), trainable=True)
    model.exponent_raw[:] = [-15.0, 40.0]
    ps = model.exponents()
    assert ps[1] > 1.0 and ps[2] == pytest.approx(41.0)


# -- configs ------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta=0.0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3, "learning_rate": 0.1})
    with pytest.raises(ValueError):
        PriorSpec("laplace")
    cfg = TrainConfig.from_dict({"prior": {"type": "isa", "subspace_sizes": [2, 2]}})
    assert cfg.prior.kind == "isa" and list(cfg.prior.p_sub) == [2.0, 2.0]
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_prior_dimension_must_match(rng):
    enc = Mlp.init([6, 6], ["identity"], rng)
    dec = Mlp.init([3, 6], ["identity"], rng)
    with pytest.raises(ValueError):
        VaeModel(enc, dec, generalized_gaussian(4, 2.0))
    with pytest.raises(ValueError):
        VaeModel(enc, dec, None, trainable_exponents=True)


# -- training -----------------------------------------------------------------


@pytest.fixture(scope="module")
def two_factor_data():
    return generate(SpritesConfig(height=12, width=12, shapes=("square",), scales=(3.0, 5.0), x_positions=6, y_positions=1))


def _train_small(data, **kw):
    cfg = TrainConfig(
        epochs=5, batch_size=4, lr=3e-3, latent_dim=4, hidden=32, prior=_isa_prior(p0=2.1, p_sub=(2.2, 2.2)), **kw
    )
    model = VaeModel.init(data.flat.shape[1], cfg, np.random.default_rng(cfg.seed))
    return model, train(model, data.flat, cfg)


def test_training_improves_objective(two_factor_data):
    _, trace = _train_small(two_factor_data)
    assert len(trace) == 5
    assert trace[-1]["elbo"] > trace[0]["elbo"]
    assert {"epoch", "elbo", "recon_ll", "kl_mc"} <= set(trace[0])


def test_training_is_deterministic(two_factor_data):
    m1, t1 = _train_small(two_factor_data)
    m2, t2 = _train_small(two_factor_data)
    assert t1 == t2
    for a, b in zip(m1.params(), m2.params()):
        np.testing.assert_array_equal(a, b)


def test_zero_exponent_lr_freezes_exponents(two_factor_data):
    model, trace = _train_small(two_factor_data, trainable_exponents=True, exponent_lr=0.0)
    np.testing.assert_allclose(model.exponents()[1:], [2.0, 2.0], rtol=1e-12)
    assert trace[-1]["p_1"] == pytest.approx(2.0)


def test_learned_exponents_move(two_factor_data):
    model, trace = _train_small(two_factor_data, trainable_exponents=True, exponent_lr=0.05)
    assert not np.allclose(model.exponents()[1:], 2.0)
    assert all(row["p_1"] > 1.0 for row in trace)


def test_checkpoint_round_trip(tmp_path, rng):
    model = _small_model(rng, prior=_isa_prior(p0=2.1, p_sub=(1.5, 2.5)), trainable=True)
    model.exponent_raw[:] = [0.2, -0.4]
    model.save(tmp_path / "m.nnc", {"note": "x"})
    back, meta = VaeModel.load(tmp_path / "m.nnc")
    assert meta["note"] == "x"
    np.testing.assert_allclose(back.exponents(), model.exponents())
    x = _data(rng)
    np.testing.assert_allclose(back.encode(x)[0], model.encode(x)[0], atol=1e-5)


# -- traversal ----------------------------------------------------------------


def test_traversal(rng):
    model = _small_model(rng)
    x = _data(rng, B=1)[0]
    imgs = latent_traversal(model, x, 1, [-2.0, 0.0, 2.0])
    assert imgs.shape == (3, 6)
    assert np.all((imgs > 0) & (imgs < 1))
    mu, _ = model.encode(x[None])
    at_mean = latent_traversal(model, x, 1, [mu[0, 1]])
    ref = 1 / (1 + np.exp(-model.decode_logits(mu)))
    np.testing.assert_allclose(at_mean, ref, rtol=1e-12)
    with pytest.raises(ValueError):
        latent_traversal(model, x, 4, [0.0])
