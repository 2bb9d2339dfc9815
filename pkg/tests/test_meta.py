import numpy as np
import pytest

from conftest import make_feature_set
from xlabuse.meta import (TaskBatch, TrainConfig, TrainingDiverged, adam_update,
                          chunked_loss_and_grad, hessian_vector_product, init_adam, inner_adapt,
                          lr_multiplier, materialize_episodes, meta_step, meta_train)
from xlabuse.model import (Batch, ModelParams, apply_step, init_params, loss_and_grad, tree_map,
                           zeros_like_params)
from xlabuse.sampling import build_pool
from xlabuse.seeding import derive_seed, make_rng

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def params_equal(a, b):
    return all(np.array_equal(getattr(a, n), getattr(b, n)) for n in PARAM_NAMES)


def random_task(rng, dim=3, hidden=(4, 3), n_support=5, n_query=6):
    params = init_params(dim, seed=int(rng.integers(0, 2**31)), hidden=hidden)
    support = Batch(inputs=rng.normal(size=(n_support, dim)),
                    targets=rng.integers(0, 2, size=n_support).astype(np.int64))
    query = Batch(inputs=rng.normal(size=(n_query, dim)),
                  targets=rng.integers(0, 2, size=n_query).astype(np.int64))
    return params, TaskBatch(task_id="t", support=support, query=query)


def flatten(params):
    return np.concatenate([getattr(params, n).ravel() for n in PARAM_NAMES])


def bilevel_fd_gradient(params, task, config, h=1e-5):
    """Central differences of theta -> L_query(inner_adapt(theta, support))."""

    def objective(p):
        adapted, _ = inner_adapt(p, task.support, config.task_lr, config.inner_steps)
        loss, _ = loss_and_grad(adapted, task.query)
        return loss

    grads = {}
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            for sign in (+1.0, -1.0):
                bumped = {n_: getattr(params, n_).copy() for n_ in PARAM_NAMES}
                bumped[name][idx] += sign * h
                g[idx] += sign * objective(ModelParams(seed=params.seed, **bumped))
            g[idx] /= 2 * h
            it.iternext()
        grads[name] = g
    return ModelParams(seed=params.seed, **grads)


def second_order_meta_gradient(params, task, config):
    from xlabuse.meta import _task_meta_gradient
    _, grads, _ = _task_meta_gradient(params, task, config)
    return grads


def max_rel_err(a, b):
    fa, fb = flatten(a), flatten(b)
    return float(np.max(np.abs(fa - fb) / np.maximum(np.maximum(np.abs(fa), np.abs(fb)), 1e-6)))


# ---------------------------------------------------------------- inner loop

def test_inner_adapt_zero_lr_identity():
    rng = make_rng(0)
    params, task = random_task(rng)
    adapted, trace = inner_adapt(params, task.support, lr=0.0, steps=3)
    assert params_equal(adapted, params)
    assert len(trace) == 3


def test_inner_adapt_single_step_composition():
    rng = make_rng(1)
    params, task = random_task(rng)
    adapted, _ = inner_adapt(params, task.support, lr=0.05, steps=1)
    _, grads = loss_and_grad(params, task.support)
    manual = apply_step(params, grads, 0.05)
    assert params_equal(adapted, manual)


def test_inner_adapt_descends_on_separable_support():
    rng = make_rng(2)
    dim = 6
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    targets = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
    inputs = rng.normal(size=(6, dim)) * 0.2 + np.where(targets[:, None] == 1, 4.0,
                                                        -4.0) * direction
    params = init_params(dim, seed=3, hidden=(8, 4))
    _, trace = inner_adapt(params, Batch(inputs=inputs, targets=targets), lr=0.001, steps=5)
    assert all(b < a for a, b in zip(trace, trace[1:]))


def test_inner_adapt_diverged_raises():
    rng = make_rng(4)
    params, task = random_task(rng)
    broken = tree_map(lambda a: np.full_like(a, np.inf), params)
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged):
        inner_adapt(broken, task.support, lr=0.001, steps=1)


# ------------------------------------------------------------------- HVP

def test_hvp_matches_finite_difference_of_gradients():
    rng = make_rng(10)
    h = 1e-6
    for _ in range(10):
        params, task = random_task(rng)
        vec = tree_map(lambda a: make_rng(0).normal(size=a.shape), params)
        hv = hessian_vector_product(params, task.support, vec)
        plus = tree_map(lambda p, v: p + h * v, params, vec)
        minus = tree_map(lambda p, v: p - h * v, params, vec)
        _, g_plus = loss_and_grad(plus, task.support)
        _, g_minus = loss_and_grad(minus, task.support)
        fd = tree_map(lambda a, b: (a - b) / (2 * h), g_plus, g_minus)
        assert np.allclose(flatten(hv), flatten(fd), rtol=1e-4, atol=1e-7)


# ------------------------------------------------------------- meta gradients

def test_second_order_matches_bilevel_fd_20_instances():
    rng = make_rng(20)
    config = TrainConfig(task_lr=0.01, inner_steps=1, meta_mode="second_order")
    worst = 0.0
    for _ in range(20):
        params, task = random_task(rng)
        analytic = second_order_meta_gradient(params, task, config)
        numeric = bilevel_fd_gradient(params, task, config)
        worst = max(worst, max_rel_err(analytic, numeric))
    assert worst < 1e-3, f"max relative error {worst:.3e}"


def test_second_order_matches_bilevel_fd_multi_step():
    rng = make_rng(21)
    config = TrainConfig(task_lr=0.02, inner_steps=3, meta_mode="second_order")
    params, task = random_task(rng)
    analytic = second_order_meta_gradient(params, task, config)
    numeric = bilevel_fd_gradient(params, task, config)
    assert max_rel_err(analytic, numeric) < 1e-3


def test_modes_coincide_exactly_at_zero_task_lr():
    rng = make_rng(22)
    params, task = random_task(rng)
    fo = second_order_meta_gradient(params, task, TrainConfig(task_lr=0.0,
                                                              meta_mode="first_order"))
    so = second_order_meta_gradient(params, task, TrainConfig(task_lr=0.0,
                                                              meta_mode="second_order"))
    assert params_equal(fo, so)


def test_mode_gap_shrinks_linearly_with_task_lr():
    rng = make_rng(23)
    params, task = random_task(rng, n_support=8, n_query=8)
    gaps = []
    for lr in (1e-2, 1e-3, 1e-4):
        fo = second_order_meta_gradient(params, task,
                                        TrainConfig(task_lr=lr, meta_mode="first_order"))
        so = second_order_meta_gradient(params, task,
                                        TrainConfig(task_lr=lr, meta_mode="second_order"))
        gaps.append(float(np.linalg.norm(flatten(fo) - flatten(so))))
    assert gaps[0] > 0.0
    assert gaps[1] < gaps[0] / 5
    assert gaps[2] < gaps[1] / 5


# ------------------------------------------------------------------- Adam

def test_adam_update_matches_reference_formula():
    rng = make_rng(30)
    params, task = random_task(rng)
    _, grads = loss_and_grad(params, task.support)
    state = init_adam(params)
    new_params, new_state = adam_update(params, grads, state, lr=0.001)
    assert new_state.step == 1
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        m = 0.1 * g                      # (1 - beta1) * g
        v = 0.001 * g * g                # (1 - beta2) * g^2
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        expected = getattr(params, name) - 0.001 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(getattr(new_params, name), expected, atol=1e-15)


def test_lr_multiplier_schedule():
    assert abs(lr_multiplier(0, 150) - 1 / 3) < 1e-12
    assert lr_multiplier(5, 150) == 1.0
    assert lr_multiplier(80, 150) == 1.0
    assert abs(lr_multiplier(2.5, 150) - 2 / 3) < 1e-12
    with pytest.raises(ValueError):
        lr_multiplier(-1, 150)


# --------------------------------------------------------------- meta_step

def test_meta_step_zero_task_lr_modes_identical():
    rng = make_rng(40)
    params, task = random_task(rng)
    adam = init_adam(params)
    out = {}
    for mode in ("first_order", "second_order"):
        config = TrainConfig(task_lr=0.0, meta_lr=0.001, meta_mode=mode)
        out[mode] = meta_step(params, [task], config, adam)
    p_fo, a_fo, loss_fo, _ = out["first_order"]
    p_so, a_so, loss_so, _ = out["second_order"]
    assert loss_fo == loss_so
    assert params_equal(p_fo, p_so)
    assert params_equal(a_fo.m, a_so.m) and params_equal(a_fo.v, a_so.v)


def test_meta_step_zero_task_lr_is_plain_adam():
    rng = make_rng(41)
    params, task = random_task(rng)
    config = TrainConfig(task_lr=0.0, meta_lr=0.002)
    new_params, _, meta_loss, _ = meta_step(params, [task], config, init_adam(params))

    # Independent reference: Adam on the query loss directly.
    q_loss, q_grads = loss_and_grad(params, task.query)
    expected, _ = adam_update(params, q_grads, init_adam(params), lr=0.002)
    assert meta_loss == q_loss
    assert params_equal(new_params, expected)


def test_meta_step_requires_episodes():
    rng = make_rng(42)
    params, _ = random_task(rng)
    with pytest.raises(ValueError):
        meta_step(params, [], TrainConfig(), init_adam(params))


def test_chunked_equals_unchunked():
    rng = make_rng(43)
    params, _ = random_task(rng, n_query=1)
    batch = Batch(inputs=rng.normal(size=(37, 3)),
                  targets=rng.integers(0, 2, size=37).astype(np.int64))
    full_loss, full_grads = loss_and_grad(params, batch)
    chunk_loss, chunk_grads = chunked_loss_and_grad(params, batch, chunk_size=8)
    assert abs(full_loss - chunk_loss) < 1e-12
    assert np.allclose(flatten(full_grads), flatten(chunk_grads), atol=1e-12)


# --------------------------------------------------------------- meta_train

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(meta_lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(task_lr=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(inner_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(meta_mode="zeroth_order")
    with pytest.raises(ValueError):
        TrainConfig(support_fraction=1.0)


def test_meta_train_deterministic():
    features = make_feature_set(num_languages=3, train_per_class=10, dim=5, separation=3.0)
    pool = build_pool(features, k=8, seed=0)
    config = TrainConfig(epochs=6, seed=11)
    params_a, log_a = meta_train(pool, features, config)
    params_b, log_b = meta_train(pool, features, config)
    assert log_a.meta_losses() == log_b.meta_losses()
    assert params_equal(params_a, params_b)
    assert len(log_a.epochs) == 6
    assert log_a.lr_trace()[0] == pytest.approx(1 / 3)


def test_meta_train_loss_decreases_on_separable_pool():
    features = make_feature_set(num_languages=4, train_per_class=16, dim=8, separation=8.0)
    pool = build_pool(features, k=16, seed=0)
    config = TrainConfig(epochs=60, seed=1)
    _, log = meta_train(pool, features, config)
    losses = log.meta_losses()
    assert losses[-1] < 0.5 * losses[0]


def test_meta_train_zero_task_lr_equals_manual_adam_loop():
    features = make_feature_set(num_languages=2, train_per_class=8, dim=4, separation=2.0)
    pool = build_pool(features, k=6, seed=3)
    config = TrainConfig(task_lr=0.0, epochs=4, seed=7)
    params, _ = meta_train(pool, features, config)

    # Hand-rolled equivalent: episode query batches -> mean gradient -> Adam.
    reference = init_params(features.dim, derive_seed(config.seed, "init"))
    adam = init_adam(reference)
    for epoch in range(config.epochs):
        tasks = materialize_episodes(pool, features, config.support_fraction,
                                     derive_seed(config.seed, "episodes", epoch))
        total = zeros_like_params(reference)
        for task in tasks:
            _, g = loss_and_grad(reference, task.query)
            total = tree_map(lambda acc, x: acc + x, total, g)
        mean_grad = tree_map(lambda x: x / len(tasks), total)
        reference, adam = adam_update(reference, mean_grad, adam,
                                      config.meta_lr * lr_multiplier(epoch, config.epochs))
    assert params_equal(params, reference)


def test_meta_train_rejects_missing_clips():
    features = make_feature_set(num_languages=2, train_per_class=8, dim=4)
    pool = build_pool(features, k=6, seed=0)
    del features.vectors[pool.sets["lang00"].members[0]]
    with pytest.raises(ValueError, match="absent"):
        meta_train(pool, features, TrainConfig(epochs=1))
