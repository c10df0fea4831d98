import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from gmelab.gmegan import NetworkBundle
from gmelab.measures import EmpiricalMeasure
from gmelab.ndcore import ContractError, Mlp, MlpSpec
from gmelab.verify import (
    bilip_constant,
    bilip_scatter,
    ccm_trained,
    gk_pushforward_demo,
    kset_check,
    lemma41_equality,
    modulus_dominance,
    modulus_probe,
    monotone2d_check,
    prop21_sandwich,
    relative_std,
    relative_std_counts,
    sawtooth,
    thm42_pushforward,
)


def linear(mat):
    mat = np.asarray(mat, dtype=float)
    return Mlp(MlpSpec(mat.shape), np.concatenate([mat.ravel(), np.zeros(mat.shape[1])]))


def cloud(seed, n=20, d=2):
    return EmpiricalMeasure.uniform(np.random.default_rng(seed).normal(size=(n, d)))


# -- bi-Lipschitz ---------------------------------------------------------------------------

def test_bilip_scatter_scalings(tmp_path):
    mu = cloud(0, 30, 3)
    rep = bilip_scatter(lambda x: x, mu, 200, np.random.default_rng(0))
    assert np.allclose(rep.ratios, 1.0, rtol=0, atol=1e-14)
    rep2 = bilip_scatter(lambda x: 2 * x, mu, 200, np.random.default_rng(0))
    assert np.allclose(rep2.ratios, 2.0, rtol=0, atol=1e-14)
    assert rep2.median == pytest.approx(2.0) and rep2.iqr == pytest.approx(0.0, abs=1e-14)
    path = tmp_path / "b.csv"
    rep2.write_csv(path)
    assert path.read_text().splitlines()[0] == "distance,ratio"
    with pytest.raises(ContractError):
        bilip_scatter(lambda x: x, EmpiricalMeasure.uniform(np.ones((4, 2))), 5,
                      np.random.default_rng(0))


def test_bilip_scatter_accepts_networks():
    mu = cloud(1, 10, 2)
    rep = bilip_scatter(linear(3 * np.eye(2)), mu, 50, np.random.default_rng(1))
    assert np.allclose(rep.ratios, 3.0)


# -- K-set theorem ----------------------------------------------------------------------------

def test_kset_isometry():
    q = special_ortho_group.rvs(3, random_state=1)
    rep = kset_check(lambda x: x @ q.T, cloud(2, 15, 3), 0.8, 0.5)
    assert rep.epsilon <= 1e-12 and rep.mass_in_K == pytest.approx(1.0, abs=1e-12)
    assert rep.bound == pytest.approx(1.0, abs=1e-9) and rep.passed


def test_kset_scaling_by_hand():
    mu = EmpiricalMeasure.uniform([[0.0], [1.0]])
    rep = kset_check(lambda x: 3 * x, mu, 0.8, 0.5)
    # the two off-diagonal pairs have ratio (9 + 1) / (1 + 1) = 5 > 1/0.8
    assert rep.epsilon == pytest.approx(0.5 * math.log(5) ** 2, rel=1e-14)
    assert rep.count_B == 2 and rep.count_K == 2 and rep.count_Q == 0
    assert rep.mass_in_K == pytest.approx(0.5)
    assert rep.bound == pytest.approx(1 - 0.5 * math.log(5) ** 2 / math.log(0.8) ** 2)
    assert rep.passed


def test_kset_random_linear_maps():
    rng = np.random.default_rng(50)
    for seed in range(50):
        a = np.eye(2) + 0.3 * rng.normal(size=(2, 2))
        mu = cloud(seed, 20, 2)
        rep = kset_check(lambda x, a=a: x @ a, mu, 0.8, 0.5)
        assert rep.count_K + rep.count_B + rep.count_Q == 400
        assert abs(rep.mass_in_K + rep.mass_B + rep.mass_Q - 1.0) <= 1e-12
        assert rep.passed


def test_kset_argument_checks():
    with pytest.raises(ContractError):
        kset_check(lambda x: x, cloud(0), 1.0, 0.5)


# -- sandwich ------------------------------------------------------------------------------

def test_sandwich_identity():
    rep = prop21_sandwich(lambda x: x, cloud(1, 6), cloud(2, 6))
    assert rep.alpha == 1.0
    assert abs(rep.lower_slack) <= 1e-12 and abs(rep.upper_slack) <= 1e-12


def test_sandwich_scaled_rotation():
    q = special_ortho_group.rvs(2, random_state=3)
    a, b = cloud(3, 7), cloud(4, 7)
    rep = prop21_sandwich(lambda x: 3 * x @ q.T, a, b, alpha=1 / 3)
    assert rep.passed
    assert abs(rep.lower_slack) <= 1e-12  # the lower end is tight
    assert rep.w_mapped == pytest.approx(3 * rep.w_original, rel=1e-12)
    # the upper end sits at 9 W(a, b), strictly above W(a, b)
    assert rep.upper_slack == pytest.approx(8 * rep.w_original, rel=1e-12)


def test_sandwich_diagonal_stretch():
    stretch = np.diag([1.0, 2.0])
    for seed in range(30):
        a, b = cloud(2 * seed, 6), cloud(2 * seed + 1, 6)
        rep = prop21_sandwich(lambda x: x @ stretch, a, b, alpha=0.5)
        assert rep.passed and rep.lower_slack > 0 and rep.upper_slack > 0
        auto = prop21_sandwich(lambda x: x @ stretch, a, b)
        assert auto.passed and 0.5 <= auto.alpha <= 1.0


def test_bilip_constant_of_stretch():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert bilip_constant(lambda x: x @ np.diag([1.0, 2.0]), pts) == pytest.approx(0.5)


# -- Lemma / pushforward -----------------------------------------------------------------------

def test_lemma41_one_dimensional_instance():
    mu = EmpiricalMeasure.uniform([[0.0], [1.0]])
    nu = EmpiricalMeasure.uniform([[0.5], [2.5]])
    rep = lemma41_equality(lambda x: 2 * x, mu, nu)
    assert rep.ot_encoder_cost == pytest.approx(0.125, abs=1e-15)
    assert rep.w2_squared == pytest.approx(0.125, abs=1e-15)
    assert rep.passed


def test_lemma41_identity_and_random():
    rng = np.random.default_rng(41)
    for trial in range(30):
        n = int(rng.integers(2, 17))
        mu, nu = cloud(100 + trial, n), cloud(200 + trial, n)
        a = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        rep = lemma41_equality(lambda x, a=a: x @ a, mu, nu)
        assert rep.passed and rep.delta <= 1e-9
    ident = lemma41_equality(lambda x: x, mu, nu)
    assert ident.delta == 0.0


def test_lemma41_rejects_non_injective():
    with pytest.raises(ContractError):
        lemma41_equality(lambda x: np.zeros_like(x), cloud(0, 3), cloud(1, 3))


def test_thm42_one_dimensional_instance():
    mu = EmpiricalMeasure.uniform([[0.0], [1.0]])
    nu = EmpiricalMeasure.uniform([[0.5], [2.5]])
    rep = thm42_pushforward(lambda x: 2 * x, mu, nu)
    assert rep.generator_images[:, 0].tolist() == [0.0, 1.0]
    assert rep.passed


def test_thm42_random_instances():
    rng = np.random.default_rng(42)
    for trial in range(30):
        n = int(rng.integers(2, 17))
        mu, nu = cloud(300 + trial, n), cloud(400 + trial, n)
        a = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        inv = np.linalg.inv(a)
        rep = thm42_pushforward(lambda x, a=a: x @ a, mu, nu)
        assert rep.passed
        rep_inv = thm42_pushforward(lambda x, a=a: x @ a, mu, nu, inverse=lambda z, inv=inv: z @ inv)
        assert rep_inv.passed


def test_thm42_identity_is_quadratic_ot_map():
    mu, nu = cloud(5, 8), cloud(6, 8)
    rep = thm42_pushforward(lambda x: x, mu, nu)
    from gmelab.otcore import exact_ot_uniform, pairwise_cost, quadratic_p
    sigma = exact_ot_uniform(pairwise_cost(quadratic_p(2), nu.points, mu.points)).assignment
    assert np.array_equal(rep.generator_images, mu.points[sigma])


# -- trained-bundle checks ---------------------------------------------------------------------

def identity_bundle(sign=1.0, D=4):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, D))
    return NetworkBundle(linear(a), linear(sign * np.linalg.pinv(a)),
                         linear(np.zeros((D, 1))), linear(np.eye(2)))


def test_ccm_trained_on_identity_bundle():
    rep = ccm_trained(identity_bundle(), 50, 3, np.random.default_rng(0), num_cycles=200)
    assert rep.is_ccm and rep.cycles_tested == 400 and rep.fraction_passing == 1.0
    bad = ccm_trained(identity_bundle(-1.0), 50, 3, np.random.default_rng(0), num_cycles=200)
    assert bad.fraction_passing < 1.0
    with pytest.raises(ContractError):
        ccm_trained(identity_bundle(), 50, 6, np.random.default_rng(0))


def test_monotone2d_identity_and_reflection():
    assert monotone2d_check(identity_bundle(), 200, np.random.default_rng(1)) == 1.0
    assert monotone2d_check(identity_bundle(-1.0), 200, np.random.default_rng(1)) == 0.0


# -- sawtooth ---------------------------------------------------------------------------------

def test_sawtooth_shape():
    x = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(sawtooth(1, x), [1.0, 0.5, 0.0, 0.5, 1.0])
    np.testing.assert_allclose(sawtooth(2, x), [1.0, 0.0, 1.0, 0.0, 1.0])
    assert np.array_equal(sawtooth(0, x), x)


@pytest.mark.parametrize("k", [0, 2, 5])
def test_gk_ks_analytic(k):
    n = 10_000
    ks = gk_pushforward_demo(k, n)
    expected = 0.5 / n if k == 0 else k / n
    assert ks == pytest.approx(expected, rel=1e-9)
    assert ks <= 0.02


def test_gk_argument_checks():
    with pytest.raises(ContractError):
        gk_pushforward_demo(1, 50)


# -- relative std -----------------------------------------------------------------------------

def test_relative_std_examples():
    assert relative_std_counts([10, 10, 10]) == 0.0
    assert relative_std_counts([5, 10, 15]) == pytest.approx(0.5, abs=1e-15)
    assert relative_std_counts([0, 0, 30]) == pytest.approx(math.sqrt(300) / 10, abs=1e-15)
    labels = [0] * 5 + [1] * 10 + [2] * 15 + [-1] * 7
    assert relative_std(labels, 3) == pytest.approx(0.5)
    with pytest.raises(ContractError):
        relative_std([-1, -1], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=2, max_size=12).filter(lambda c: sum(c) > 0),
       st.integers(1, 50), st.randoms(use_true_random=False))
def test_relative_std_invariances(counts, scale, rnd):
    base = relative_std_counts(counts)
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    assert relative_std_counts(shuffled) == pytest.approx(base, rel=1e-12, abs=1e-15)
    assert relative_std_counts([scale * c for c in counts]) == pytest.approx(base, rel=1e-12,
                                                                              abs=1e-15)


# -- modulus probe -----------------------------------------------------------------------------

def test_modulus_constant_and_linear():
    mu = cloud(7, 60, 3)
    const = modulus_probe(lambda x: np.ones((len(x), 1)), mu, 500, np.random.default_rng(0))
    assert not np.any(const.curve)
    w = np.array([1.0, -2.0, 2.0])
    lin = modulus_probe(lambda x: x @ w[:, None], mu, 500, np.random.default_rng(0), num_bins=10)
    assert np.all(lin.raw_max <= 3.0 * lin.bin_edges[1:] + 1e-12)
    assert np.all(np.diff(lin.curve) >= 0)
    # points on the line through w: the bound is attained in every populated bin
    t = np.linspace(-2, 2, 41)[:, None]
    line = EmpiricalMeasure.uniform(t * w / 3.0)
    prof = modulus_probe(lambda x: x @ w[:, None], line, 2000, np.random.default_rng(1))
    pairs_seen = prof.counts > 0
    assert np.all(prof.raw_max[pairs_seen] <= 3.0 * prof.bin_edges[1:][pairs_seen] + 1e-12)
    assert prof.raw_max.max() == pytest.approx(3.0 * prof.bin_edges[-1], rel=1e-12)


def test_modulus_dominance():
    mu = cloud(8, 40, 2)
    a = modulus_probe(lambda x: x[:, :1], mu, 300, np.random.default_rng(0))
    b = modulus_probe(lambda x: 2 * x[:, :1], mu, 300, np.random.default_rng(0))
    assert modulus_dominance(a, b) == 1.0
    assert modulus_dominance(b, a) < 1.0
