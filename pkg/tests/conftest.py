import numpy as np
import pytest

from cliquecast.data import TrainingWindow
from cliquecast.geometry import Circle, Rectangle
from cliquecast.model import CliqueModel, ModelConfig
from cliquecast.scene_graph import Agent, Clique


def fd_gradient(f, value, h=1e-5):
    """Central finite differences of scalar f() w.r.t. value.data (oracle)."""
    base = value.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up_arr = base.copy()
        up_arr[idx] += h
        value.data = up_arr
        up = float(f().data)
        dn_arr = base.copy()
        dn_arr[idx] -= h
        value.data = dn_arr
        dn = float(f().data)
        grad[idx] = (up - dn) / (2 * h)
    value.data = base
    return grad


def rel_err(got, want):
    got, want = np.asarray(got), np.asarray(want)
    scale = max(np.abs(want).max(), np.abs(got).max(), 1e-10)
    return float(np.abs(got - want).max() / scale)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(latent_card=3, pre_dim=8, enc_hidden=10, edge_hidden=10,
                       gru_hidden=10, factor_hidden=10, action_hidden=10, attn_dim=6,
                       history=4, horizon=3, dt=0.5, max_clique_size=4, seed=11)


@pytest.fixture()
def tiny_model(tiny_cfg):
    return CliqueModel(tiny_cfg)


def make_vehicle(agent_id, x=0.0, y=0.0, v=5.0, psi=0.0, history=4, horizon=3,
                 dt=0.5, with_future=True):
    """Straight constant-speed vehicle agent with aligned history/future."""
    steps = np.arange(-history, horizon + 1)
    xs = x + v * dt * steps * np.cos(psi)
    ys = y + v * dt * steps * np.sin(psi)
    states = np.stack([xs, ys, np.full_like(xs, v), np.full_like(xs, psi)], axis=1)
    return Agent(id=agent_id, type="vehicle", footprint=Rectangle(4.0, 2.0),
                 history=states[:history + 1],
                 future=states[history + 1:] if with_future else None)


def make_pedestrian(agent_id, x=0.0, y=0.0, vx=1.0, vy=0.0, history=4, horizon=3,
                    dt=0.5, with_future=True):
    steps = np.arange(-history, horizon + 1)
    xs = x + vx * dt * steps
    ys = y + vy * dt * steps
    states = np.stack([xs, ys, np.full_like(xs, vx), np.full_like(xs, vy)], axis=1)
    return Agent(id=agent_id, type="pedestrian", footprint=Circle(0.3),
                 history=states[:history + 1],
                 future=states[history + 1:] if with_future else None)


@pytest.fixture()
def vehicle_pair_window(tiny_cfg):
    a = make_vehicle("a", x=0.0, v=5.0, history=tiny_cfg.history,
                     horizon=tiny_cfg.horizon, dt=tiny_cfg.dt)
    b = make_vehicle("b", x=12.0, v=4.5, history=tiny_cfg.history,
                     horizon=tiny_cfg.horizon, dt=tiny_cfg.dt)
    clique = Clique([a, b])
    return TrainingWindow(clique=clique, dt=tiny_cfg.dt,
                          origins={x.id: x.current.copy() for x in clique.agents})


@pytest.fixture()
def mixed_trio_window(tiny_cfg):
    a = make_vehicle("car", x=0.0, v=4.0, history=tiny_cfg.history,
                     horizon=tiny_cfg.horizon, dt=tiny_cfg.dt)
    b = make_pedestrian("p1", x=8.0, y=3.0, vx=-1.0, history=tiny_cfg.history,
                        horizon=tiny_cfg.horizon, dt=tiny_cfg.dt)
    c = make_pedestrian("p2", x=6.0, y=-2.0, vy=1.0, history=tiny_cfg.history,
                        horizon=tiny_cfg.horizon, dt=tiny_cfg.dt)
    clique = Clique([a, b, c])
    return TrainingWindow(clique=clique, dt=tiny_cfg.dt,
                          origins={x.id: x.current.copy() for x in clique.agents})
