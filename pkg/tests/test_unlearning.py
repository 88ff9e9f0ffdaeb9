import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbu import autodiff as ad
from pbu.classifier import Checkpoint, Dataset, ModelSpec, TrainConfig, init_params, log_likelihood, train
from pbu.errors import ContaminationError, ContractError, DivergenceError
from pbu.evaluation import class_split_accuracy
from pbu.fisher import fisher, mahalanobis_sq
from pbu.rng import Rng
from pbu.unlearning import (
    PBUConfig, PBUStepper, finetune_baseline, pbu_loss, pbu_loss_and_grad, pbu_loss_tensor,
    pbu_step, retrain_baseline, run_pbu,
)

from conftest import random_dataset


def _tiny(seed=0):
    spec = ModelSpec(3, (5,), 3)
    r = Rng(seed)
    data = random_dataset(r, 24, 3, 3)
    theta_star = r.normal(spec.num_params)
    s_n, _ = data.split_by_class(1)
    return spec, theta_star, s_n


def test_loss_at_theta_star_is_alpha_ll():
    spec, ts, s_n = _tiny()
    F = fisher(spec, ts, s_n)
    cfg = PBUConfig(alpha=2.5, beta=3.0, gamma=4.0)
    assert pbu_loss(spec, ts, ts, F, s_n, cfg) == 2.5 * log_likelihood(spec, ts, s_n)


def test_loss_zero_alpha_at_theta_star():
    spec, ts, s_n = _tiny()
    F = fisher(spec, ts, s_n)
    assert pbu_loss(spec, ts, ts, F, s_n, PBUConfig(alpha=0.0, beta=1.0, gamma=1.0)) == 0.0


@pytest.mark.parametrize("form", ["diagonal", "full"])
def test_loss_composes_from_parts(form):
    spec, ts, s_n = _tiny(1)
    F = fisher(spec, ts, s_n, "model", form)
    th = ts + Rng(5).normal(ts.size, std=0.3)
    cfg = PBUConfig(alpha=0.7, beta=1.3, gamma=2.1)
    parts = (0.7 * log_likelihood(spec, th, s_n) + 1.3 * mahalanobis_sq(th, ts, F)
             + 2.1 * np.sum((th - ts) ** 2))
    assert abs(pbu_loss(spec, th, ts, F, s_n, cfg) - parts) <= 1e-12 * max(1.0, abs(parts))


def test_loss_rejects_bad_forget_sets():
    spec, ts, s_n = _tiny()
    F = fisher(spec, ts, s_n)
    mixed = Dataset(np.zeros((2, 3)), [0, 1])
    with pytest.raises(ContractError):
        pbu_loss(spec, ts, ts, F, mixed, PBUConfig())
    with pytest.raises(ContractError):
        pbu_loss(spec, ts, ts, F, s_n.subset([]), PBUConfig())


@given(st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_loss_gradient_finite_differences(seed):
    spec, ts, s_n = _tiny(seed)
    assert spec.num_params <= 200
    F = fisher(spec, ts, s_n)
    th = ts + Rng(seed ^ 3).normal(ts.size, std=0.2)
    cfg = PBUConfig(alpha=1.0, beta=0.5, gamma=0.25)
    assert ad.grad_check(lambda t: pbu_loss_tensor(spec, t, ts, F, s_n, cfg), th, h=1e-5) <= 1e-5


def test_step_zero_gradient_bitwise():
    th = Rng(1).normal(5)
    for opt in ("gd", "adam"):
        out = pbu_step(th, np.zeros(5), PBUConfig(optimizer=opt))
        assert out.tobytes() == th.tobytes()


def test_step_quadratic_arithmetic():
    # L = (theta - 1)^2 at theta = 0 has gradient -2
    out = pbu_step(np.array([0.0]), np.array([-2.0]), PBUConfig(eta=0.1))
    assert out[0] == pytest.approx(0.2, abs=1e-15)


def test_step_adam_first_move_is_eta_sign():
    out = pbu_step(np.zeros(3), np.array([5.0, -0.1, 2.0]), PBUConfig(optimizer="adam", eta=0.01))
    np.testing.assert_allclose(out, [-0.01, 0.01, -0.01], rtol=1e-6)


def test_step_non_finite_gradient():
    with pytest.raises(DivergenceError, match="step 7"):
        pbu_step(np.zeros(2), np.array([np.nan, 0.0]), PBUConfig(), step=7)


@pytest.mark.parametrize("kw", [dict(eta=0.0), dict(steps=0), dict(alpha=-1.0), dict(beta=np.inf),
                                dict(optimizer="lbfgs"), dict(fisher_mode="x"), dict(batch_size=0)])
def test_config_contract(kw):
    with pytest.raises(ContractError):
        PBUConfig(**kw)


@pytest.mark.parametrize("steps", [1, 10, 100])
@pytest.mark.parametrize("opt", ["gd", "adam"])
def test_alpha_zero_fixed_point(steps, opt):
    spec, ts, s_n = _tiny(2)
    cfg = PBUConfig(alpha=0.0, beta=5.0, gamma=3.0, eta=0.5, steps=steps, optimizer=opt)
    res = run_pbu(spec, Checkpoint(spec, ts), s_n, cfg)
    assert res.theta_u.tobytes() == ts.tobytes()


def test_trace_counters_and_epochs():
    spec, ts, s_n = _tiny(3)
    cfg = PBUConfig(alpha=1.5, beta=1.0, gamma=1.0, eta=1e-3, steps=12)
    res = run_pbu(spec, Checkpoint(spec, ts), s_n, cfg)
    assert len(res.loss_trace) == res.steps_run == 12
    assert abs(res.loss_trace[0] - 1.5 * log_likelihood(spec, ts, s_n)) <= 1e-12
    assert np.all(np.isfinite(res.theta_u))
    c = res.counters
    assert (c.fisher_computations, c.optimization_phases, c.retain_examples_seen) == (1, 1, 0)
    assert res.epochs == 12.0


def test_minibatch_deterministic_and_epochs():
    spec, ts, s_n = _tiny(4)
    cfg = PBUConfig(steps=9, batch_size=3, seed=5)
    a = run_pbu(spec, Checkpoint(spec, ts), s_n, cfg)
    b = run_pbu(spec, Checkpoint(spec, ts), s_n, cfg)
    assert a.theta_u.tobytes() == b.theta_u.tobytes()
    assert a.epochs == pytest.approx(9 * 3 / len(s_n))


def test_fisher_out_is_computed_at_theta_star():
    spec, ts, s_n = _tiny(5)
    out = []
    run_pbu(spec, Checkpoint(spec, ts), s_n, PBUConfig(steps=3, fisher_mode="model"), fisher_out=out)
    np.testing.assert_array_equal(out[0].values, fisher(spec, ts, s_n, "model").values)


def test_run_pbu_has_no_retain_input():
    params = list(inspect.signature(run_pbu).parameters)
    assert params == ["spec", "initial", "s_n", "cfg", "fisher_out"]


def test_blindness_retain_mutation_is_irrelevant():
    spec, ts, s_n = _tiny(6)
    r = Rng(1)
    cfg = PBUConfig(alpha=1.0, gamma=0.5, steps=5)
    d1 = s_n.concat(random_dataset(r, 10, 3, 1))
    d2 = s_n.concat(Dataset(r.normal(30).reshape(10, 3) * 9, np.zeros(10)))
    runs = [run_pbu(spec, Checkpoint(spec, ts), d.split_by_class(1)[0], cfg) for d in (d1, d2)]
    assert runs[0].theta_u.tobytes() == runs[1].theta_u.tobytes()


def test_divergence_guard():
    spec, ts, s_n = _tiny(7)
    cfg = PBUConfig(alpha=1e3, eta=10.0, steps=200)
    with pytest.raises(DivergenceError, match="step"):
        run_pbu(spec, Checkpoint(spec, ts), s_n, cfg)


def test_strong_anchor_keeps_theta_close(desk):
    spec, tr, _, ckpt = desk
    s_n, _ = tr.split_by_class(0)
    cfg = PBUConfig(alpha=1e-2, beta=0.0, gamma=1e6, eta=1e-7, steps=100)
    res = run_pbu(spec, ckpt, s_n, cfg)
    assert np.linalg.norm(res.theta_u - ckpt.theta) <= 1e-3 * np.linalg.norm(ckpt.theta)


def test_anchor_monotone_in_gamma(desk):
    spec, tr, _, ckpt = desk
    s_n, _ = tr.split_by_class(0)
    dists = []
    for gamma in (0.0, 1.0, 10.0, 100.0, 1000.0):
        cfg = PBUConfig(alpha=1.0, gamma=gamma, eta=1e-4, steps=50)
        dists.append(np.linalg.norm(run_pbu(spec, ckpt, s_n, cfg).theta_u - ckpt.theta))
    assert all(a >= b for a, b in zip(dists, dists[1:]))


def test_retrain_contamination():
    spec = ModelSpec(2, (), 3)
    d = random_dataset(Rng(1), 30, 2, 3)
    with pytest.raises(ContaminationError):
        retrain_baseline(spec, d, TrainConfig(epochs=1), forget_class=0)
    with pytest.raises(ContaminationError):
        finetune_baseline(Checkpoint(spec, np.zeros(9)), d, TrainConfig(epochs=1), forget_class=2)


def test_retrain_on_full_data_equals_train():
    spec = ModelSpec(2, (3,), 3)
    d = random_dataset(Rng(2), 30, 2, 3)
    cfg = TrainConfig(epochs=3, seed=4)
    assert retrain_baseline(spec, d, cfg) == train(spec, d, cfg)


def test_finetune_deterministic_and_contract():
    spec = ModelSpec(2, (3,), 3)
    d = random_dataset(Rng(3), 30, 2, 3)
    _, s_p = d.split_by_class(0)
    init = Checkpoint(spec, init_params(spec, 1))
    cfg = TrainConfig(epochs=2, seed=1)
    assert finetune_baseline(init, s_p, cfg, 0) == finetune_baseline(init, s_p, cfg, 0)
    with pytest.raises(ContractError):
        finetune_baseline(init, s_p, PBUConfig(), 0)


def test_desk_baselines(desk):
    spec, tr, te, ckpt = desk
    s_n, s_p = tr.split_by_class(0)
    init_df, _ = class_split_accuracy(spec, ckpt.theta, te, 0)
    re = retrain_baseline(spec, s_p, TrainConfig(epochs=200, seed=0), 0)
    ft = finetune_baseline(ckpt, s_p, TrainConfig(epochs=20, seed=0), 0)
    re_df, _ = class_split_accuracy(spec, re.theta, te, 0)
    ft_df, _ = class_split_accuracy(spec, ft.theta, te, 0)
    assert init_df >= 0.95
    assert re_df <= 0.01
    assert ft_df < init_df


def test_desk_pbu_forgets(desk):
    spec, tr, te, ckpt = desk
    s_n, _ = tr.split_by_class(0)
    res = run_pbu(spec, ckpt, s_n, PBUConfig(optimizer="adam", eta=1e-3, steps=160))
    a_df, a_dr = class_split_accuracy(spec, res.theta_u, te, 0)
    assert a_df <= 0.05 and a_dr >= 0.9


def test_stepper_reuses_adam_state():
    st_ = PBUStepper(PBUConfig(optimizer="adam", eta=0.1), 1)
    th = np.zeros(1)
    th = st_(th, np.array([1.0]))
    th = st_(th, np.array([1.0]))
    assert st_.adam.t == 2 and th[0] == pytest.approx(-0.2)


def test_loss_and_grad_consistent():
    spec, ts, s_n = _tiny(8)
    F = fisher(spec, ts, s_n)
    cfg = PBUConfig(alpha=1.0, beta=1.0, gamma=1.0)
    th = ts + 0.1
    v, _ = pbu_loss_and_grad(spec, th, ts, F, s_n, cfg)
    assert v == pbu_loss(spec, th, ts, F, s_n, cfg)
