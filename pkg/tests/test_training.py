import itertools

import numpy as np
import pytest

from cliquecast import autodiff as ad
from cliquecast.data import SynthSpec, synth_scenarios, windows_from_scene
from cliquecast.model import CliqueModel
from cliquecast.training import (Adam, TrainingConfig, TrainingDivergedError,
                                 alpha_schedule, cvar_weights, elbo_loss, train)

from conftest import fd_gradient, rel_err


def lp_vertex_oracle(q, losses, alpha):
    """Exact LP minimum by vertex enumeration (independent oracle).

    Feasible set: {0 <= w <= q/alpha, sum w = 1}. Every vertex has at most
    one fractional coordinate; enumerate cap-subsets, give one leftover
    coordinate the remaining budget.
    """
    n = len(q)
    caps = np.asarray(q) / alpha
    best = np.inf
    idx = list(range(n))
    for r in range(n + 1):
        for subset in itertools.combinations(idx, r):
            cap_sum = sum(caps[i] for i in subset)
            remainder = 1.0 - cap_sum
            if remainder < -1e-12:
                continue
            if remainder <= 1e-12:
                w = np.zeros(n)
                for i in subset:
                    w[i] = caps[i]
                best = min(best, float(np.dot(w, losses)))
                continue
            for j in idx:
                if j in subset or caps[j] < remainder - 1e-12:
                    continue
                w = np.zeros(n)
                for i in subset:
                    w[i] = caps[i]
                w[j] = remainder
                best = min(best, float(np.dot(w, losses)))
    return best


def test_cvar_alpha_one_is_expectation():
    q = np.array([0.2, 0.5, 0.3])
    losses = np.array([3.0, 1.0, 2.0])
    w = cvar_weights(q, losses, 1.0)
    assert np.array_equal(w, q)


def test_cvar_tiny_alpha_selects_best_mode():
    q = np.array([0.2, 0.5, 0.3])
    losses = np.array([3.0, 1.0, 2.0])
    w = cvar_weights(q, losses, 0.1)  # alpha <= q of the argmin-loss mode
    assert np.allclose(w, [0.0, 1.0, 0.0])


def test_cvar_worked_example():
    q = np.array([0.5, 0.3, 0.2])
    losses = np.array([1.0, 2.0, 3.0])
    w = cvar_weights(q, losses, 0.6)
    assert np.allclose(w, [0.5 / 0.6, 1.0 - 0.5 / 0.6, 0.0], atol=1e-12)
    assert abs(float(np.dot(w, losses)) - (0.5 / 0.6 + 2 * (1 - 0.5 / 0.6))) < 1e-12


def test_cvar_validation():
    with pytest.raises(ValueError):
        cvar_weights(np.array([0.5, 0.6]), np.array([1.0, 2.0]), 0.5)
    with pytest.raises(ValueError):
        cvar_weights(np.array([0.5, 0.5]), np.array([1.0, 2.0]), 0.0)
    with pytest.raises(ValueError):
        cvar_weights(np.array([0.5, 0.5]), np.array([1.0, 2.0]), 1.5)


def test_cvar_matches_lp_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 8))
        q = rng.dirichlet(np.ones(n))
        losses = rng.normal(size=n) * 3
        alpha = float(rng.uniform(0.05, 1.0))
        w = cvar_weights(q, losses, alpha)
        # feasibility
        assert np.all(w >= -1e-12)
        assert np.all(w <= q / alpha + 1e-9)
        assert abs(w.sum() - 1.0) < 1e-9
        # optimality against the vertex oracle
        got = float(np.dot(w, losses))
        want = lp_vertex_oracle(q, losses, alpha)
        assert got <= want + 1e-9


def test_cvar_objective_monotone_in_alpha():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        q = rng.dirichlet(np.ones(n))
        losses = rng.normal(size=n)
        values = [float(np.dot(cvar_weights(q, losses, a), losses))
                  for a in (0.1, 0.3, 0.6, 1.0)]
        assert all(x <= y + 1e-12 for x, y in zip(values, values[1:]))


def test_alpha_schedule_endpoints():
    cfg = TrainingConfig(epochs=10, alpha_start=0.2, alpha_end=1.0)
    assert alpha_schedule(cfg, 0) == 0.2
    assert alpha_schedule(cfg, 9) == 1.0
    mid = alpha_schedule(cfg, 5)
    assert 0.2 < mid < 1.0


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(alpha_start=0.0)
    with pytest.raises(ValueError):
        TrainingConfig(n_top=0, n_random=0)


# -- elbo ------------------------------------------------------------------

def test_elbo_kl_zero_when_posterior_equals_prior(tiny_model, vehicle_pair_window):
    # force the posterior nets to produce the prior's tables: zero them all
    for name, p in tiny_model.params.items():
        if name.startswith("factor."):
            p.data = np.zeros_like(p.data)
    cfg = TrainingConfig(n_top=2, n_random=1, collision_weight=0.0)
    report, total, _ = elbo_loss(vehicle_pair_window, tiny_model, cfg,
                                 np.random.default_rng(0), alpha=0.5)
    assert abs(report.kl) < 1e-12


def test_elbo_perfect_decoder_zero_likelihood(tiny_cfg, vehicle_pair_window):
    # zero decoder output nets -> rollout equals zero-action coasting; set the
    # window futures to exactly that coasting path, so predictions == truth
    from cliquecast import dynamics
    import dataclasses
    model = CliqueModel(tiny_cfg)
    for name, p in model.params.items():
        if name.startswith("dec.action."):
            p.data = np.zeros_like(p.data)
    agents = []
    for a in vehicle_pair_window.clique.agents:
        flow = dynamics.flow(a.current, a.type, tiny_cfg.horizon, tiny_cfg.dt)[1:]
        agents.append(dataclasses.replace(a, future=flow))
    window = dataclasses.replace(vehicle_pair_window)
    from cliquecast.scene_graph import Clique
    window.clique = Clique(agents)
    cfg = TrainingConfig(n_top=2, n_random=0, collision_weight=0.0)
    report, _, _ = elbo_loss(window, model, cfg, np.random.default_rng(0), alpha=1.0)
    assert report.likelihood < 1e-16


def test_elbo_total_composition(tiny_model, vehicle_pair_window):
    cfg = TrainingConfig(n_top=2, n_random=1, kl_weight=0.7, collision_weight=2.0)
    report, total, _ = elbo_loss(vehicle_pair_window, tiny_model, cfg,
                                 np.random.default_rng(3), alpha=0.4)
    assert abs(report.total - (report.likelihood + 0.7 * report.kl
                               + 2.0 * report.collision)) < 1e-9
    assert abs(float(total.data) - report.total) < 1e-12


def test_elbo_full_gradient_matches_finite_differences(tiny_model, vehicle_pair_window):
    # mode selection and cvar weights are stop-gradient constants by design,
    # so the finite-difference oracle evaluates the loss with the selection
    # frozen at the base point
    cfg = TrainingConfig(n_top=2, n_random=0, kl_weight=1.0, collision_weight=1.0,
                         collision_sharpness=4.0)
    _, _, frozen = elbo_loss(vehicle_pair_window, tiny_model, cfg,
                             np.random.default_rng(0), alpha=0.5)

    def f():
        _, total, _ = elbo_loss(vehicle_pair_window, tiny_model, cfg,
                                np.random.default_rng(0), alpha=0.5,
                                selection=frozen)
        return total

    out = f()
    ad.backward(out)
    for name in ("dec.action.vehicle.l1.W", "factor.post.node.vehicle.l0.b",
                 "enc.edge.vehicle-vehicle.Wh"):
        p = tiny_model.params[name]
        # loss slice over a parameter block: the derived oracle is central FD
        g = p.grad
        assert g is not None, name
        assert rel_err(g, fd_gradient(f, p, h=1e-5)) < 1e-3, name


def test_elbo_detach_rule_blocks_other_modes(tiny_model, vehicle_pair_window):
    cfg = TrainingConfig(n_top=2, n_random=0, collision_weight=0.0, kl_weight=0.0,
                         alpha_detach_threshold=0.8)
    rng = np.random.default_rng(0)

    tiny_model.params.zero_grads()
    _, total_hi, _ = elbo_loss(vehicle_pair_window, tiny_model, cfg, rng, alpha=0.9)
    ad.backward(total_hi)
    # reconstruct which mode kept gradients: with kl and collision off, the
    # decoder grads must be driven by exactly one mode; compare against the
    # non-detached loss at the same alpha
    g_detached = {n: (p.grad.copy() if p.grad is not None else None)
                  for n, p in tiny_model.params.items()}
    tiny_model.params.zero_grads()
    cfg2 = TrainingConfig(n_top=2, n_random=0, collision_weight=0.0, kl_weight=0.0,
                          alpha_detach_threshold=1.0)  # never detach
    _, total_full, _ = elbo_loss(vehicle_pair_window, tiny_model, cfg2,
                                 np.random.default_rng(0), alpha=0.9)
    ad.backward(total_full)
    diffs = 0
    for n, p in tiny_model.params.items():
        a, b = g_detached[n], p.grad
        if a is None and b is None:
            continue
        if (a is None) != (b is None) or not np.allclose(a, b):
            diffs += 1
    assert diffs > 0  # detaching visibly changed decoder gradients


# -- training loop -----------------------------------------------------------

def _tiny_dataset(tiny_cfg):
    scenes = synth_scenarios(SynthSpec("car_following", 4, length=12), seed=5)
    wins = []
    for s in scenes:
        wins.extend(windows_from_scene(s, history=tiny_cfg.history,
                                       horizon=tiny_cfg.horizon, max_clique_size=4))
    return wins


def test_train_reduces_loss_and_is_deterministic(tiny_cfg):
    wins = _tiny_dataset(tiny_cfg)
    cfg = TrainingConfig(epochs=4, batch_size=8, n_top=2, n_random=1, seed=7,
                         learning_rate=3e-3)
    m1, h1 = train(wins, cfg, tiny_cfg)
    m2, h2 = train(wins, cfg, tiny_cfg)
    assert [r.total for r in h1] == [r.total for r in h2]
    assert h1[-1].total < h1[0].total
    for name in m1.params.names():
        assert np.array_equal(m1.params[name].data, m2.params[name].data)


def test_train_rejects_empty_dataset(tiny_cfg):
    with pytest.raises(ValueError):
        train([], TrainingConfig(), tiny_cfg)


def test_train_raises_on_divergence(tiny_cfg):
    wins = _tiny_dataset(tiny_cfg)[:2]
    model = CliqueModel(tiny_cfg)
    model.params["dec.ref_out.vehicle.W"].data += np.nan
    with pytest.raises(TrainingDivergedError):
        train(wins, TrainingConfig(epochs=1, n_top=1, n_random=0), model=model)


def test_adam_moves_parameters(tiny_cfg):
    model = CliqueModel(tiny_cfg)
    opt = Adam(model.params, learning_rate=1e-2)
    p = model.params["pre.node.vehicle.W"]
    before = p.data.copy()
    p.grad = np.ones_like(p.data)
    opt.step()
    assert not np.allclose(p.data, before)


def test_train_persists_checkpoint(tiny_cfg, tmp_path):
    wins = _tiny_dataset(tiny_cfg)[:4]
    path = tmp_path / "ckpt.npz"
    cfg = TrainingConfig(epochs=1, n_top=1, n_random=0, seed=0)
    model, _ = train(wins, cfg, tiny_cfg, checkpoint_path=path)
    loaded = CliqueModel.load(path)
    for name in model.params.names():
        assert np.array_equal(loaded.params[name].data, model.params[name].data)
