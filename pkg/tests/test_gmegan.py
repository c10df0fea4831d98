import numpy as np
import pytest

from gmelab.gmegan import (
    HISTORY_COLUMNS,
    MinibatchSampler,
    NetworkBundle,
    OptimizerStates,
    TrainConfig,
    TrainingAborted,
    assemble_loss,
    generate,
    init_bundle,
    train,
    train_step,
)
from gmelab.measures import EmpiricalMeasure, mixture_spec, rng_stream, sample_mixture
from gmelab.ndcore import ContractError, DimensionError, Mlp, MlpSpec, load_networks
from gmelab.otcore import gme_minibatch

SMALL = dict(hidden_g=(8,), hidden_t=(8,), hidden_psi=(8,), hidden_rinv=(8,), batch=4)


def small_setup(seed=0, D=5, **kw):
    cfg = TrainConfig(seed=seed, **{**SMALL, **kw})
    bundle = init_bundle(cfg, D)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(cfg.batch, D))
    y = rng.normal(size=(cfg.batch, 2))
    return cfg, bundle, x, y


def linear(mat, bias=None):
    mat = np.asarray(mat, dtype=float)
    b = np.zeros(mat.shape[1]) if bias is None else np.asarray(bias, float)
    return Mlp(MlpSpec(mat.shape), np.concatenate([mat.ravel(), b]))


def test_default_hyperparameters():
    cfg = TrainConfig()
    assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (10.0, 1.0, 5.0)
    assert cfg.batch == 16
    assert cfg.lr_g == cfg.lr_t == cfg.lr_psi == cfg.lr_rinv == 1e-4


def test_config_validation_and_round_trip():
    with pytest.raises(ContractError):
        TrainConfig(lambda1=-1)
    with pytest.raises(ContractError):
        TrainConfig(batch=1)
    with pytest.raises(ContractError):
        TrainConfig().ablate("nope")
    with pytest.raises(ContractError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(seed=3).ablate("gme")
    assert cfg.lambda1 == 0.0 and cfg.ablations == ("gme",)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_bundle_dimension_chain():
    cfg = TrainConfig(**SMALL)
    b = init_bundle(cfg, 7)
    assert b.ambient_dim == 7 and b.latent_dim == 2
    assert b.R_inv.spec.activations == ("relu",)
    with pytest.raises(DimensionError):
        NetworkBundle(b.G, b.T, b.psi, Mlp(MlpSpec((2, 3)), np.zeros(9)))


def test_additivity_and_independent_recomputation():
    cfg, bundle, x, y = small_setup()
    b = assemble_loss(bundle, x, y, cfg).breakdown()
    assert abs(b.total - (b.ot + 10 * b.gme + b.disc + 1 * b.gp + 5 * b.recon)) <= 1e-9

    G, T, psi, R = bundle.G.numpy, bundle.T.numpy, bundle.psi.numpy, bundle.R_inv.numpy
    ot = 0.5 * np.mean(np.sum((T(G(y)) - y) ** 2, axis=1))
    gme = gme_minibatch(bundle.T, x).item()
    disc = psi(G(y)).mean() - psi(x).mean()
    h = 1e-6
    grads = np.stack([(psi(x + h * e) - psi(x - h * e))[:, 0] / (2 * h)
                      for e in np.eye(x.shape[1])], axis=1)
    gp = np.mean(np.sum(grads ** 2, axis=1))
    recon = np.mean(np.sum((G(R(T(x))) - x) ** 2, axis=1))
    assert b.ot == pytest.approx(ot, abs=1e-12)
    assert b.gme == pytest.approx(gme, abs=1e-12)
    assert b.disc == pytest.approx(disc, abs=1e-12)
    assert b.gp == pytest.approx(gp, rel=1e-6)
    assert b.recon == pytest.approx(recon, abs=1e-12)
    by_hand = ot + 10 * gme + disc + gp + 5 * recon
    assert abs(b.total - (b.ot + 10 * b.gme + b.disc + b.gp + 5 * b.recon)) <= 1e-12
    assert b.total == pytest.approx(by_hand, rel=1e-6)


def test_reduction_to_ot_term():
    cfg, bundle, x, y = small_setup(lambda1=0, lambda2=0, lambda3=0)
    zero_psi = Mlp(bundle.psi.spec, np.zeros(bundle.psi.spec.num_params))
    bundle = NetworkBundle(bundle.G, bundle.T, zero_psi, bundle.R_inv)
    b = assemble_loss(bundle, x, y, cfg).breakdown()
    expected = 0.5 * np.mean(np.sum((bundle.T.numpy(bundle.G.numpy(y)) - y) ** 2, axis=1))
    assert b.total == pytest.approx(expected, abs=1e-14)


def test_ot_term_vanishes_when_t_inverts_g():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 5))
    G = linear(a)
    T = linear(np.linalg.pinv(a))
    psi = linear(np.zeros((5, 1)))
    bundle = NetworkBundle(G, T, psi, linear(np.eye(2)))
    cfg = TrainConfig(batch=4)
    b = assemble_loss(bundle, rng.normal(size=(4, 5)), rng.normal(size=(4, 2)), cfg).breakdown()
    assert b.ot <= 1e-24


def test_ablation_removes_exactly_the_weighted_term():
    cfg, bundle, x, y = small_setup(seed=4)
    full = assemble_loss(bundle, x, y, cfg).breakdown()
    weights = {"gme": 10.0, "gp": 1.0, "recon": 5.0}
    for term, w in weights.items():
        ablated = assemble_loss(bundle, x, y, cfg.ablate(term)).breakdown()
        assert ablated.total == pytest.approx(full.total - w * getattr(full, term), abs=1e-12)
    wgan = assemble_loss(bundle, x, y, cfg.ablate("gme", "recon")).breakdown()
    assert wgan.total - wgan.ot == pytest.approx(wgan.disc + wgan.gp, abs=1e-12)


def test_shape_errors():
    cfg, bundle, x, y = small_setup()
    with pytest.raises(DimensionError):
        assemble_loss(bundle, x[:, :3], y, cfg)
    with pytest.raises(DimensionError):
        assemble_loss(bundle, x, y[:2], cfg)


def test_zero_learning_rates_leave_bundle():
    cfg, bundle, x, y = small_setup(lr_g=0, lr_t=0, lr_psi=0, lr_rinv=0)
    new, _, _ = train_step(bundle, OptimizerStates.for_bundle(bundle, cfg), x, y, cfg)
    for a, b in zip(new.nets(), bundle.nets()):
        assert np.array_equal(a.params, b.params)


def test_step_is_bit_reproducible():
    def once():
        cfg, bundle, x, y = small_setup(seed=2)
        new, _, losses = train_step(bundle, OptimizerStates.for_bundle(bundle, cfg), x, y, cfg)
        return np.concatenate([n.params for n in new.nets()]), losses

    (p1, l1), (p2, l2) = once(), once()
    assert np.array_equal(p1, p2) and l1 == l2


def test_psi_ascends_disc_when_others_frozen():
    cfg, bundle, _, y = small_setup(seed=5, lambda2=0, lr_g=0, lr_t=0, lr_rinv=0, lr_psi=1e-3)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(cfg.batch, 5)) + 4.0  # separated from G's outputs
    states = OptimizerStates.for_bundle(bundle, cfg)
    discs = []
    for _ in range(60):
        bundle, states, losses = train_step(bundle, states, x, y, cfg)
        discs.append(losses.disc)
    assert np.all(np.diff(discs) > 0)


def test_penalty_has_descent_sign_for_psi():
    # psi ascends disc - lambda2 * gp (the penalty pushes gradients toward zero)
    failures = 0
    for seed in range(20):
        cfg, bundle, x, y = small_setup(seed=seed, lr_g=0, lr_t=0, lr_rinv=0, lr_psi=1e-4)
        before = assemble_loss(bundle, x, y, cfg).breakdown()
        new, _, _ = train_step(bundle, OptimizerStates.for_bundle(bundle, cfg), x, y, cfg)
        after = assemble_loss(new, x, y, cfg).breakdown()
        if after.disc - after.gp < before.disc - before.gp:
            failures += 1
    assert failures <= 2


def test_minibatch_sampler_covers_each_epoch():
    s = MinibatchSampler(10, 3, np.random.default_rng(0))
    first = np.concatenate([s.next() for _ in range(3)])
    assert len(set(first.tolist())) == 9
    s.next()
    assert s.epoch == 1
    with pytest.raises(ContractError):
        MinibatchSampler(2, 3, np.random.default_rng(0))


def _tiny_data(n=40, D=5, seed=0):
    return sample_mixture(mixture_spec(D, 9), n, rng_stream(seed, "data"))[0]


def test_train_zero_iterations_returns_initial_bundle():
    cfg = TrainConfig(iterations=0, **SMALL)
    data = _tiny_data()
    result = train(data, cfg)
    init = init_bundle(cfg, 5)
    for a, b in zip(result.bundle.nets(), init.nets()):
        assert np.array_equal(a.params, b.params)
    assert result.history.losses == []


def test_train_history_checkpoints_and_metadata(tmp_path):
    cfg = TrainConfig(iterations=30, checkpoint_every=10, **SMALL).ablate("gme")
    result = train(_tiny_data(), cfg, checkpoint_dir=tmp_path)
    h = result.history
    assert len(h.losses) == 30 and np.all(np.isfinite(h.array()))
    assert h.metadata["ablations"] == ["gme"] and h.metadata["lambdas"][0] == 0.0
    assert h.checkpoints == ["checkpoint_000010.gmeg", "checkpoint_000020.gmeg",
                             "checkpoint_000030.gmeg"]
    nets = load_networks(tmp_path / h.checkpoints[-1])
    assert np.array_equal(nets[0].params, result.bundle.G.params)
    csv = h.to_csv().splitlines()
    assert csv[0] == ",".join(HISTORY_COLUMNS) and len(csv) == 31


def test_train_is_deterministic():
    cfg = TrainConfig(iterations=15, **SMALL)
    a = train(_tiny_data(), cfg).history.to_csv()
    b = train(_tiny_data(), cfg).history.to_csv()
    assert a == b


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_abort_keeps_partial_history():
    cfg = TrainConfig(iterations=50, lr_g=1e6, lr_t=1e6, lr_psi=1e6, lr_rinv=1e6, **SMALL)
    data = EmpiricalMeasure.uniform(_tiny_data().points * 1e200)
    with pytest.raises(TrainingAborted) as info:
        train(data, cfg)
    assert info.value.history is not None
    assert "aborted_at" in info.value.history.metadata


def test_generate():
    bundle = init_bundle(TrainConfig(**SMALL), 5)
    assert generate(bundle, 0, np.random.default_rng(0)).n == 0
    a = generate(bundle, 20, np.random.default_rng(1)).points
    b = generate(bundle, 20, np.random.default_rng(1)).points
    assert a.shape == (20, 5) and np.array_equal(a, b)
