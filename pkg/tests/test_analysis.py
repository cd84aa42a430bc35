import numpy as np
import pytest

from ampreg import analysis, nncore, trainer
from ampreg.analysis import ece, filter_normalized_direction, landscape_1d, landscape_2d
from ampreg.datasets import Dataset, SplitDataset, gen_blobs, split
from ampreg.linalg import Rng
from ampreg.nncore import MlpSpec
from ampreg.perturb import AttackSpec, BallSpec, InnerAscentSpec
from ampreg.theory import GaussianSurface
from ampreg.trainer import TrainConfig


@pytest.fixture(scope="module")
def trained():
    centers = np.array([[1.5, 0.0], [-1.5, 0.3], [0.2, -1.6]])
    data = split(gen_blobs(50, centers, 0.5, seed=6), 0.3, seed=6)
    spec = MlpSpec((2, 12, 3))
    cfg = TrainConfig(mode="ERM", epochs=60, batch_size=16, outer_lr=0.2, seed=1,
                      lr_decay=((40, 0.1),), momentum=0.9)
    record = trainer.train(spec, data, cfg)
    return spec, record.final_theta, data


def row_norms(spec, vec):
    norms = []
    pos = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = vec[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        b = vec[pos + fan_in * fan_out : pos + fan_in * fan_out + fan_out]
        norms.extend(np.sqrt(np.sum(w**2, axis=1) + b**2))
        pos += fan_in * fan_out + fan_out
    return np.array(norms)


def test_direction_matches_parameter_row_norms(trained):
    spec, theta, _ = trained
    d = filter_normalized_direction(spec, theta, Rng(3).with_stream("dir"))
    assert np.allclose(row_norms(spec, d), row_norms(spec, theta), rtol=1e-12)


def test_direction_scales_with_parameters(trained):
    spec, theta, _ = trained
    rng = Rng(4).with_stream("dir2")
    d1 = filter_normalized_direction(spec, theta, rng)
    d2 = filter_normalized_direction(spec, 2.0 * theta, rng)
    assert np.allclose(d2, 2.0 * d1, rtol=1e-12)


def test_direction_zero_rows_stay_zero():
    spec = MlpSpec((2, 3, 2))
    theta = np.zeros(spec.num_params())
    theta[0:2] = [1.0, 2.0]  # only the first neuron row is nonzero
    d = filter_normalized_direction(spec, theta, Rng(5).with_stream("dir3"))
    norms = row_norms(spec, d)
    assert norms[0] > 0
    assert np.all(norms[1:] == 0.0)


def test_landscape_alpha_zero_matches_evaluate(trained):
    spec, theta, data = trained
    d = filter_normalized_direction(spec, theta, Rng(6).with_stream("scan"))
    scan = landscape_1d(spec, theta, data, d, [-0.5, 0.0, 0.5])
    assert scan.losses_train[1] == trainer.evaluate(spec, theta, data.train)[0]
    assert scan.losses_test[1] == trainer.evaluate(spec, theta, data.test)[0]


def test_landscape_values_match_direct_recomputation(trained):
    spec, theta, data = trained
    d = filter_normalized_direction(spec, theta, Rng(7).with_stream("scan2"))
    alphas = np.linspace(-1, 1, 7)
    scan = landscape_1d(spec, theta, data, d, alphas)
    for a, lt in zip(alphas, scan.losses_train):
        direct, _ = nncore.xent_loss(nncore.forward(spec, theta + a * d, data.train.inputs),
                                     data.train.labels)
        assert lt == direct


def test_landscape_direction_flip_invariance(trained):
    spec, theta, data = trained
    d = filter_normalized_direction(spec, theta, Rng(8).with_stream("scan3"))
    # exactly sign-symmetric grid so negation visits bitwise-identical points
    alphas = np.array([-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8])
    fwd = landscape_1d(spec, theta, data, d, alphas)
    bwd = landscape_1d(spec, theta, data, -d, -alphas)
    assert np.array_equal(fwd.losses_train, bwd.losses_train)
    assert np.array_equal(fwd.losses_test, bwd.losses_test)


def test_landscape_local_minimum_sanity(trained):
    spec, theta, data = trained
    losses = []
    for k in range(5):
        d = filter_normalized_direction(spec, theta, Rng(100 + k).with_stream("sanity"))
        scan = landscape_1d(spec, theta, data, d, [-1.0, 0.0, 1.0])
        losses.append(scan.losses_train)
    center_best = [ls[1] <= ls[0] and ls[1] <= ls[2] for ls in losses]
    assert np.mean(center_best) >= 0.8  # statistically at a minimum


def test_landscape_2d_center_and_symmetry():
    # balanced binary labels with bias-only directions give a surface that
    # depends only on |x - y|, hence exact (i,j) -> (-i,-j) symmetry
    spec = MlpSpec((1, 2))
    theta = np.zeros(spec.num_params())  # [w0, w1, b0, b1]
    ds = Dataset(np.zeros((4, 1)), np.array([0, 1, 0, 1]), 2)
    dx = np.array([0.0, 0.0, 1.0, 0.0])
    dy = np.array([0.0, 0.0, 0.0, 1.0])
    grid = np.linspace(-1.0, 1.0, 9)
    scan = landscape_2d(spec, theta, ds, dx, dy, grid, grid)
    assert scan.losses[4, 4] == trainer.evaluate(spec, theta, ds)[0]
    assert np.allclose(scan.losses, scan.losses[::-1, ::-1], atol=1e-10)


def test_worst_rise_zero_radius(trained):
    spec, theta, data = trained
    assert analysis.sharpness(spec, theta, data.train, 0.0) == 0.0


def test_worst_rise_quadratic_closed_form():
    lam = 3.0
    loss = lambda d: 0.5 * lam * float(d @ d)
    grad = lambda d: lam * d
    for eps in [0.2, 1.0]:
        rise = analysis.worst_rise(loss, grad, 1, eps,
                                   InnerAscentSpec(zeta=eps / 50, n_steps=2000))
        assert rise == pytest.approx(0.5 * lam * eps * eps, rel=1e-9)


def test_worst_rise_gaussian_surface_at_center():
    s = GaussianSurface(np.zeros(2), np.diag([0.05, 1.0]), 2.0, 1.0)
    eps = 0.4
    loss = lambda d: s.value(s.mu + d)
    grad = lambda d: s.grad_many((s.mu + d)[None, :])[0]
    rise = analysis.worst_rise(loss, grad, 2, eps, InnerAscentSpec(zeta=eps / 400, n_steps=4000))
    expected = s.amplitude * (1.0 - np.exp(-eps * eps / (2 * 0.05)))
    assert rise == pytest.approx(expected, rel=1e-3)


def test_sharpness_nonnegative_at_trained_minimum(trained):
    spec, theta, data = trained
    rise = analysis.sharpness(spec, theta, data.train, 0.1)
    assert rise >= -1e-12


def test_power_iteration_known_spectrum():
    d = np.array([1.0, 4.0])
    top = analysis.power_iteration_top_eig(lambda v: d * v, 2, iters=200)
    assert top == pytest.approx(4.0, abs=1e-3)


def test_power_iteration_scales_linearly():
    d = np.array([0.5, 2.0, 1.0])
    top = analysis.power_iteration_top_eig(lambda v: d * v, 3, iters=100)
    top3 = analysis.power_iteration_top_eig(lambda v: 3.0 * d * v, 3, iters=100)
    assert top3 == pytest.approx(3.0 * top, rel=1e-9)


def test_power_iteration_requires_iters():
    with pytest.raises(ValueError, match="iters"):
        analysis.power_iteration_top_eig(lambda v: v, 2, iters=10)


def test_hessian_top_eig_matches_dense_oracle():
    centers = np.array([[1.0, 0.5], [-1.0, -0.5]])
    data = split(gen_blobs(30, centers, 0.6, seed=9), 0.4, seed=9)
    spec = MlpSpec((2, 3, 2))  # 17 parameters
    cfg = TrainConfig(mode="ERM", epochs=80, batch_size=16, outer_lr=0.3, seed=2,
                      lr_decay=((60, 0.1),))
    theta = trainer.train(spec, data, cfg).final_theta

    n = spec.num_params()
    dense = np.zeros((n, n))
    h = 1e-5
    for i in range(n):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        dense[:, i] = (nncore.grad(spec, tp, data.train.inputs, data.train.labels)
                       - nncore.grad(spec, tm, data.train.inputs, data.train.labels)) / (2 * h)
    dense = 0.5 * (dense + dense.T)
    eigs = np.linalg.eigvalsh(dense)
    dominant = eigs[np.argmax(np.abs(eigs))]
    estimate = analysis.hessian_top_eig(spec, theta, data.train, iters=300)
    assert estimate == pytest.approx(dominant, rel=0.05)


def test_ece_perfectly_calibrated():
    report = ece(np.ones(10), np.ones(10, dtype=bool), 10)
    assert report.ece == 0.0


def test_ece_single_bin_fixture():
    report = ece(np.full(4, 0.8), np.array([True, True, True, False]), 1)
    assert report.ece == pytest.approx(0.05, abs=1e-12)


def test_ece_two_bin_fixture():
    report = ece(np.array([0.6, 0.9]), np.array([True, False]), 10)
    assert report.ece == pytest.approx(0.65, abs=1e-12)
    assert report.counts[5] == 1 and report.counts[8] == 1


def test_ece_bin_edges_left_open():
    # confidence exactly on a bin edge belongs to the lower bin
    report = ece(np.array([0.2, 0.2000000001]), np.array([True, True]), 10)
    assert report.counts[1] == 1 and report.counts[2] == 1


def test_ece_permutation_and_duplication_invariant():
    gen = Rng(10).with_stream("ece").generator()
    conf = gen.uniform(0.01, 1.0, 200)
    correct = gen.random(200) < conf
    base = ece(conf, correct, 15)
    perm = gen.permutation(200)
    assert ece(conf[perm], correct[perm], 15).ece == pytest.approx(base.ece, rel=1e-13)
    dup = ece(np.concatenate([conf, conf]), np.concatenate([correct, correct]), 15)
    assert dup.ece == pytest.approx(base.ece, rel=1e-13)


def test_ece_rejects_out_of_range():
    with pytest.raises(ValueError, match="confidences"):
        ece(np.array([0.0, 0.5]), np.array([True, False]), 5)


def test_model_calibration_confident_correct_model(trained):
    spec, theta, data = trained
    report = analysis.model_calibration(spec, theta, data.train, 10)
    assert 0.0 <= report.ece <= 1.0
    assert int(np.sum(report.counts)) == data.train.n


def test_sweep_zero_eps_row_is_erm_reference(trained):
    spec, theta, data = trained
    base = TrainConfig(mode="AMP", epochs=4, batch_size=16, outer_lr=0.2, seed=3,
                       inner=InnerAscentSpec(0.5, 1), ball=BallSpec(0.1))
    rows = analysis.epsilon_sweep(spec, data, base, eps_grid=(0.0, 0.05))
    erm = trainer.train(spec, data, TrainConfig(mode="ERM", epochs=4, batch_size=16,
                                                outer_lr=0.2, seed=3))
    train_risk, _ = trainer.evaluate(spec, erm.final_theta, data.train)
    assert rows[0].epsilon == 0.0
    assert rows[0].train_risk == train_risk


def test_robustness_zero_radius_equals_clean(trained):
    spec, theta, data = trained
    clean = trainer.evaluate(spec, theta, data.test)[1]
    assert analysis.robustness_eval(spec, theta, data.test, AttackSpec("FGSM", 0.0)) == clean
    err = analysis.robustness_eval(spec, theta, data.test, AttackSpec("FGSM", 0.3))
    assert 0.0 <= err <= 1.0


def test_pgd_dominates_fgsm_across_seeds():
    # PGD with several steps is at least as strong as FGSM in most runs
    centers = np.array([[1.2, 0.0], [-1.2, 0.0]])
    spec = MlpSpec((2, 6, 2))
    wins = 0
    trials = 20
    for seed in range(trials):
        data = split(gen_blobs(30, centers, 0.9, seed=seed), 0.4, seed=seed)
        cfg = TrainConfig(mode="ERM", epochs=30, batch_size=16, outer_lr=0.2, seed=seed)
        theta = trainer.train(spec, data, cfg).final_theta
        fgsm = analysis.robustness_eval(spec, theta, data.test, AttackSpec("FGSM", 0.4))
        pgd = analysis.robustness_eval(spec, theta, data.test,
                                       AttackSpec("PGD", 0.4, step=0.1, steps=10))
        wins += pgd >= fgsm
    assert wins / trials >= 0.9
