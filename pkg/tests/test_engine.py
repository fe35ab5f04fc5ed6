import numpy as np
import pytest
from scipy.stats import norm

import gradcheck
import oracles
from vba import _rng, engine, scm_gaussian as sg
from vba.nn.mlp import STD_FLOOR, DiagonalGaussian, Mlp, softplus_inverse

NEG_HALF_LOG_2PI = -0.5 * np.log(2 * np.pi)


def affine_net(d, wx, wy_or_z, bias, std):
    """Identity-activation head ``mean = wx*a + w2*b + bias`` (diagonal), constant ``std``."""
    w = np.zeros((2 * d, 2 * d))
    w[np.arange(d), np.arange(d)] = wx
    w[d + np.arange(d), np.arange(d)] = wy_or_z
    b = np.concatenate([np.broadcast_to(bias, d), np.full(d, softplus_inverse(std - STD_FLOOR))])
    return Mlp((2 * d, 2 * d), "identity", np.concatenate([w.ravel(), b]))


def z_free_model(d=1, slope=1.5, std=2.0):
    """Standard-normal prior and encoder; decoder ignores z."""
    return engine.VbaModel(DiagonalGaussian(d), affine_net(d, slope, 0.0, 0.3, std), affine_net(d, 0.0, 0.0, 0.0, 1.0))


@pytest.fixture(scope="module")
def small_setup():
    cfg = sg.sample_config(1, 17)
    train = sg.generate(cfg, 2000, 1)
    return cfg, train


# -- losses -------------------------------------------------------------------


def test_loss_prior_examples():
    model = engine.VbaModel.initialize(1, 0)
    assert engine.loss_prior(model, np.zeros((1, 1))) == pytest.approx(0.918939, abs=1e-6)
    assert engine.loss_prior(model, np.zeros((2, 1))) == pytest.approx(0.918939, abs=1e-6)
    with pytest.raises(ValueError):
        engine.loss_prior(model, np.zeros((0, 1)))


def test_loss_decoder_and_encoder_examples():
    d = 3
    cfg = sg.ScmConfig(c1=[1.0] * d, c2=[2.0] * d, c3=[-6.0] * d, sigma1=[1.0] * d, sigma2=[1.0] * d)
    model = engine.oracle_model(cfg)
    rng = np.random.default_rng(0)
    x, z = rng.normal(size=(4, d)), rng.normal(size=(4, d))
    y = 2.0 * x - 6.0 * z  # decoder head is N(y, 1) exactly
    assert engine.loss_decoder(model, x, y, z) == pytest.approx(-NEG_HALF_LOG_2PI * d, abs=1e-12)
    # encoder whose mean is y: make z equal y
    model.encoder = affine_net(d, 0.0, 1.0, 0.0, 1.0)
    assert engine.loss_encoder_mle(model, x, z, z) == pytest.approx(-NEG_HALF_LOG_2PI * d, abs=1e-12)


def test_losses_singleton_equal_pointwise(config3):
    model = engine.VbaModel.initialize(3, 1, hidden=(5,), skip=False)
    model.decoder.params += 0.1
    ds = sg.generate(config3, 1, 0)
    q = model.decoder_head(ds.x, ds.z)
    pointwise = -np.sum(norm.logpdf(ds.y, q.mean, q.std))
    assert engine.loss_decoder(model, ds.x, ds.y, ds.z) == pytest.approx(pointwise, rel=1e-12)
    e = model.encoder_head(ds.x, ds.y)
    assert engine.loss_encoder_mle(model, ds.x, ds.y, ds.z) == pytest.approx(
        -np.sum(norm.logpdf(ds.z, e.mean, e.std)), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_loss_gradients_match_finite_differences(seed):
    errs = gradcheck.max_relative_errors(seed)
    assert max(errs.values()) < 1e-4, errs


# -- model ----------------------------------------------------------------------


def test_model_dimension_checks():
    with pytest.raises(ValueError):
        engine.VbaModel(DiagonalGaussian(2), Mlp((4, 4)), Mlp((2, 2)))
    with pytest.raises(ValueError):
        engine.VbaModel.initialize(2, 0, data=sg.generate(sg.sample_config(1, 0), 5, 0))
    with pytest.raises(ValueError):
        engine.VbaModel.initialize(1).freeze("nope")


def test_initialize_is_deterministic():
    a = engine.VbaModel.initialize(2, 7, hidden=(8,))
    b = engine.VbaModel.initialize(2, 7, hidden=(8,))
    assert a.fingerprints() == b.fingerprints()
    assert engine.VbaModel.initialize(2, 8, hidden=(8,)).fingerprints() != a.fingerprints()


# -- training -------------------------------------------------------------------


def test_epochs_zero_leaves_parameters(small_setup):
    cfg, train = small_setup
    model = engine.VbaModel.initialize(1, 0, hidden=(8,), data=train)
    before = model.fingerprints()
    report = engine.train_separate(model, train, 0)
    assert model.fingerprints() == before and report.epochs == 0
    assert model.mode == "untrained"


def test_train_separate_deterministic_and_decreasing(small_setup):
    cfg, train = small_setup
    reports = []
    for _ in range(2):
        model = engine.VbaModel.initialize(1, 3, hidden=(16, 16), data=train)
        reports.append(engine.train_separate(model, train, 12, 128, seed=5, lr=3e-3))
    assert reports[0].losses == reports[1].losses
    assert reports[0].fingerprints == reports[1].fingerprints
    for curve in reports[0].losses.values():
        assert len(curve) == 12
        assert np.mean(curve[-3:]) < np.mean(curve[:3])
    csv = reports[0].to_csv().splitlines()
    assert csv[0] == "epoch,loss_prior,loss_decoder,loss_encoder" and len(csv) == 13


def test_train_separate_components_are_independent(small_setup):
    # with the decoder frozen, prior and encoder follow the same trajectories
    cfg, train = small_setup
    a = engine.VbaModel.initialize(1, 3, hidden=(8,), data=train)
    b = a.copy().freeze("decoder")
    engine.train_separate(a, train, 2, 256, seed=1)
    engine.train_separate(b, train, 2, 256, seed=1)
    fa, fb = a.fingerprints(), b.fingerprints()
    assert fa["prior"] == fb["prior"] and fa["encoder"] == fb["encoder"]
    assert fa["decoder"] != fb["decoder"]


def test_train_separate_rejects_mismatched_data(small_setup):
    _, train = small_setup
    with pytest.raises(ValueError):
        engine.train_separate(engine.VbaModel.initialize(2, 0, hidden=(4,)), train, 1)


def test_finetune_freeze_contract(small_setup):
    cfg, train = small_setup
    model = engine.VbaModel.initialize(1, 0, hidden=(8,), data=train)
    with pytest.raises(engine.ContractError):
        engine.finetune_encoder(model, train, 1)
    model.freeze("prior", "decoder", "encoder")
    with pytest.raises(engine.ContractError):
        engine.finetune_encoder(model, train, 1)
    with pytest.raises(engine.ContractError):
        engine.train_fully_joint(model, train, 1)


def test_finetune_only_moves_encoder_and_improves_bound(small_setup):
    cfg, train = small_setup
    model = engine.VbaModel.initialize(1, 0, hidden=(16, 16), data=train)
    engine.train_separate(model, train, 10, 128, seed=1, lr=3e-3)
    before = model.fingerprints()
    prior_bytes = model.prior.params.tobytes()
    model.freeze("prior", "decoder")
    report = engine.finetune_encoder(model, train, 10, 128, k=1, seed=2, lr=3e-3)
    after = model.fingerprints()
    assert after["prior"] == before["prior"] and after["decoder"] == before["decoder"]
    assert model.prior.params.tobytes() == prior_bytes
    assert after["encoder"] != before["encoder"]
    curve = report.losses["elbo"]
    assert len(curve) == 10 and np.mean(curve[-3:]) > np.mean(curve[:3])
    assert model.mode == "finetune"


def test_fully_joint_moves_everything(small_setup):
    cfg, train = small_setup
    model = engine.VbaModel.initialize(1, 0, hidden=(8,), data=train)
    before = model.fingerprints()
    report = engine.train_fully_joint(model, train, 2, 256, seed=3)
    after = model.fingerprints()
    assert all(after[c] != before[c] for c in engine.COMPONENTS)
    assert report.mode == "fully-joint" and model.mode == "fully-joint"


def test_callback_sees_every_epoch(small_setup):
    _, train = small_setup
    seen = []
    model = engine.VbaModel.initialize(1, 0, hidden=(4,), data=train)
    engine.train_separate(model, train, 3, 512, callback=lambda e, m: seen.append(e))
    assert seen == [0, 1, 2]


# -- estimators -------------------------------------------------------------------


def test_bound_exact_when_decoder_ignores_z():
    model = z_free_model(d=2)
    x, y = np.array([[0.4, -1.0]]), np.array([[1.1, 2.0]])
    exact = norm.logpdf(y, 1.5 * x + 0.3, 2.0).sum()
    vals = [engine.elbo_estimate(model, x, y, k, seed).value for k in (1, 7, 100) for seed in (0, 1)]
    np.testing.assert_allclose(vals, exact, rtol=0, atol=1e-12)
    for k in (1, 50):
        assert engine.naive_mc_estimate(model, x, y, k, 4) == pytest.approx(exact, abs=1e-12)


def test_estimate_decomposition_identity(config3):
    model = engine.VbaModel.initialize(3, 2, hidden=(6,), skip=False)
    model.encoder.params += 0.05
    ds = sg.generate(config3, 20, 3)
    rows = engine.elbo_rows(model, ds.x, ds.y, 9, 1)
    np.testing.assert_allclose(rows["value"], rows["term_prior"] + rows["term_decoder"] + rows["term_encoder_entropy"],
                               rtol=1e-12, atol=1e-9)
    est = engine.elbo_estimate(model, ds.x[0], ds.y[0], 9, 1)
    assert est.k == 9 and est.value == pytest.approx(rows["value"][0], rel=1e-12)


def test_row_estimates_do_not_depend_on_batch(config3):
    model = engine.VbaModel.initialize(3, 2, hidden=(6,))
    ds = sg.generate(config3, 6, 3)
    full = engine.elbo_rows(model, ds.x, ds.y, 5, 11)["value"]
    np.testing.assert_allclose(engine.elbo_rows(model, ds.x[:2], ds.y[:2], 5, 11)["value"], full[:2], rtol=1e-12)


def test_tightness_with_optimal_encoder_per_sample():
    cfg = sg.sample_config(4, 3)
    model = engine.oracle_model(cfg, "optimal")
    ds = sg.generate(cfg, 50, 1)
    truth = sg.log_interventional(cfg, ds.x, ds.y)
    noise = np.random.default_rng(0).standard_normal((8, 50, 4))
    lp, ld, lq = engine.elbo_terms(model, ds.x, ds.y, noise)
    assert np.max(np.abs(lp + ld - lq - truth)) < 1e-9


def test_oracle_decoder_and_encoders_match_closed_forms():
    cfg = sg.sample_config(2, 5)
    ds = sg.generate(cfg, 10, 1)
    model = engine.oracle_model(cfg, "posterior")
    np.testing.assert_allclose(
        -engine.loss_decoder(model, ds.x[:1], ds.y[:1], ds.z[:1]),
        sg.log_decoder_true(cfg, ds.x[:1], ds.z[:1], ds.y[:1]), rtol=1e-12)
    q, truth = model.encoder_head(ds.x, ds.y), sg.posterior_z_given_xy(cfg, ds.x, ds.y)
    np.testing.assert_allclose(q.mean, truth.mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(q.std, truth.std, rtol=1e-10)
    with pytest.raises(ValueError):
        engine.oracle_model(cfg, "other")


def test_naive_single_sample_uses_row_substream():
    model = engine.oracle_model(sg.sample_config(1, 4))
    x, y = np.array([[0.5]]), np.array([[-3.0]])
    z1 = _rng.substream(9, _rng.TAG_NAIVE, 0).standard_normal((1, 1))[0]
    expected = -engine.loss_decoder(model, x, y, z1[None, :])
    assert engine.naive_mc_estimate(model, x, y, 1, 9) == pytest.approx(expected, abs=1e-12)


def test_naive_converges_in_one_dimension():
    cfg = sg.sample_config(1, 12)
    model = engine.oracle_model(cfg)
    ds = sg.generate(cfg, 5, 2)
    truth = sg.log_interventional(cfg, ds.x, ds.y)
    est = engine.naive_mc_rows(model, ds.x, ds.y, 100_000, 3)
    assert np.max(np.abs(est - truth)) < 0.05


def test_naive_stable_when_densities_underflow():
    model = z_free_model()
    model.decoder = affine_net(1, 0.0, 1.0, 0.0, 1e-3)  # mean = z, std 1e-3
    out = engine.naive_mc_rows(model, np.zeros((3, 1)), np.array([[0.0], [40.0], [-25.0]]), 50, 1)
    assert np.all(np.isfinite(out))
    assert out[1] < -1e5  # every term underflows exp, the log stays finite


def test_jensen_bound_on_random_model():
    rng = np.random.default_rng(5)
    model = engine.VbaModel.initialize(1, 9, hidden=(8, 8), activation="tanh", skip=True)
    for net in (model.decoder, model.encoder):
        net.params = rng.normal(scale=0.5, size=net.n_params)
    model.prior.params = np.array([0.3, 0.2])
    prior = model.prior_head()
    for x, y in [(0.2, 0.5), (-1.0, 2.0)]:
        rows = engine.elbo_rows(model, [[x]], [[y]], 10_000, 1)
        # MC error of the mean from a second call's per-sample spread
        noise = _rng.substream(1, _rng.TAG_EVAL, 0).standard_normal((10_000, 1, 1))
        lp, ld, lq = engine.elbo_terms(model, np.array([[x]]), np.array([[y]]), noise)
        se = np.std(lp + ld - lq) / np.sqrt(10_000)
        log_mix = oracles.grid_log_mixture(
            lambda z: norm.logpdf(z, prior.mean[0], prior.std[0]),
            lambda z: gaussian_decoder_logpdf(model, x, y, z),
            prior.mean[0] - 12 * prior.std[0], prior.mean[0] + 12 * prior.std[0],
        )
        assert rows["value"][0] <= log_mix + 3 * se


def gaussian_decoder_logpdf(model, x, y, z):
    head = model.decoder_head(np.full((z.size, 1), x), z[:, None])
    return norm.logpdf(y, head.mean[:, 0], head.std[:, 0])


def test_k_must_be_positive():
    model = z_free_model()
    with pytest.raises(ValueError):
        engine.elbo_rows(model, [[0.0]], [[0.0]], 0)
    with pytest.raises(ValueError):
        engine.naive_mc_rows(model, [[0.0]], [[0.0]], 0)


# -- evaluation -------------------------------------------------------------------


def test_evaluate_oracle_and_serialization(config3):
    model = engine.oracle_model(config3)
    for ds in (sg.generate(config3, 200, 1), sg.generate_ood(config3, 200, 2)):
        m = engine.evaluate(model, ds, config3, k=20, seed=4)
        assert m.ground_truth_mae < 1e-6
        assert m.elbo_mean == pytest.approx(m.term_prior + m.term_decoder + m.term_encoder_entropy, abs=1e-9)
        assert m.seed == 4 and m.k == 20 and m.naive_mc_mae >= 0
    lines = m.to_text().splitlines()
    assert [ln.split(",")[0] for ln in lines] == list(engine.Metrics.KEYS)
    import json

    assert json.loads(m.to_json())["ground_truth_mae"] == m.ground_truth_mae


def test_evaluate_fingerprint_mismatch_names_both(config3):
    other = sg.sample_config(3, 99)
    ds = sg.generate(other, 5, 0)
    with pytest.raises(ValueError) as err:
        engine.evaluate(engine.oracle_model(config3), ds, config3)
    assert other.fingerprint().hex() in str(err.value)
    assert config3.fingerprint().hex() in str(err.value)


# -- longer training behaviour ---------------------------------------------------------


@pytest.mark.slow
def test_separate_training_reaches_entropy_floors():
    cfg = sg.sample_config(1, 40)
    train = sg.generate(cfg, 10_000, 1)
    model = engine.VbaModel.initialize(1, 2, data=train)
    report = engine.train_separate(model, train, 200, 256, seed=3)
    r = cfg.records()[0]
    prec = 1 + r["c1"] ** 2 / r["sigma1"] ** 2 + r["c3"] ** 2 / r["sigma2"] ** 2
    floors = {
        "loss_prior": 0.5 * np.log(2 * np.pi * np.e),
        "loss_decoder": 0.5 * np.log(2 * np.pi * np.e * r["sigma2"] ** 2),
        "loss_encoder": 0.5 * np.log(2 * np.pi * np.e / prec),
    }
    final = {
        "loss_prior": engine.loss_prior(model, train.z),
        "loss_decoder": engine.loss_decoder(model, train.x, train.y, train.z),
        "loss_encoder": engine.loss_encoder_mle(model, train.x, train.y, train.z),
    }
    for name, floor in floors.items():
        curve = report.losses[name]
        # the prior starts at N(0, 1), so its curve is flat up to noise
        assert np.mean(curve[-20:]) < np.mean(curve[:20]) + 1e-3
        assert abs(final[name] - floor) < 0.1, (name, final[name], floor)
    assert abs(final["loss_decoder"] - floors["loss_decoder"]) < 0.05


def test_prior_mle_on_large_sample():
    z = np.random.default_rng(0).standard_normal((100_000, 1))
    model = engine.VbaModel.initialize(1, 0, hidden=(2,))
    model.prior.params = np.array([0.5, softplus_inverse(2.0)])
    data = sg.Dataset(z, z, z, sg.Origin.OBSERVATIONAL, bytes(32))
    model.freeze("decoder", "encoder")
    engine.train_separate(model, data, 3, 1000, seed=0, lr=3e-2)
    assert abs(engine.loss_prior(model, z) - 0.5 * np.log(2 * np.pi * np.e)) < 0.02


@pytest.mark.slow
def test_unconfounded_joint_agrees_with_two_phase():
    from vba import experiments

    settings = experiments.ExperimentSettings(n_train=4000, n_eval=1000, epochs=40, finetune_epochs=40, lr=3e-3)
    # c3 = 0: observational and interventional coincide, so both procedures target the same value.
    # x is noisy enough that (x, z) pairs drawn under the prior stay near the training support.
    cfg = sg.ScmConfig(c1=[1.0], c2=[1.5], c3=[0.0], sigma1=[1.0], sigma2=[1.0], seed=1)
    train, held = sg.generate(cfg, 4000, 1), sg.generate(cfg, 1000, 2)
    joint = engine.VbaModel.initialize(1, 3, data=train)
    engine.train_fully_joint(joint, train, settings.epochs, 256, 1, 4, settings.lr)
    two = engine.VbaModel.initialize(1, 3, data=train)
    engine.train_separate(two, train, settings.epochs, 256, 5, settings.lr)
    two.freeze("prior", "decoder")
    engine.finetune_encoder(two, train, settings.finetune_epochs, 256, 1, 4, settings.lr)
    a = engine.evaluate(joint, held, cfg, 100, 0).elbo_mean
    b = engine.evaluate(two, held, cfg, 100, 0).elbo_mean
    assert abs(a - b) < 0.1


def test_mixture_oracle_reproduces_closed_form():
    # the grid oracle used for bound checks, validated on the true components
    for seed in range(5):
        cfg = sg.sample_config(1, seed)
        model = engine.oracle_model(cfg)
        ds = sg.generate(cfg, 2, seed)
        for x, y in zip(ds.x[:, 0], ds.y[:, 0]):
            val = oracles.adaptive_log_mixture(
                lambda z: norm.logpdf(z) + gaussian_decoder_logpdf(model, x, y, z), -12, 12)
            assert val == pytest.approx(float(sg.log_interventional(cfg, [x], [y])), abs=1e-8)


def test_oracle_model_handles_std_below_floor():
    cfg = sg.ScmConfig(c1=[3.2], c2=[2.5], c3=[-7.0], sigma1=[0.1], sigma2=[3e-5])
    model = engine.oracle_model(cfg)
    ds = sg.generate(cfg, 20, 0)
    est = engine.elbo_rows(model, ds.x, ds.y, 10, 0)["value"]
    assert np.all(np.isfinite(est))
    assert np.max(np.abs(est - sg.log_interventional(cfg, ds.x, ds.y))) < 1e-8
