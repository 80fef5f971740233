"""The full clique prediction model: encoder + latent engine + decoder.

One ParameterStore holds every named parameter; the architecture is fully
determined by ModelConfig, so checkpoints are self-describing (config in the
metadata, arrays under their registry names).
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nn
from .encoder import CliqueEncoder, FactorTables, kl_divergence
from .latent import GibbsLatent
from .policy import CliqueDecoder, PredictionSet
from .scene_graph import Clique


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and inference-time configuration.

    The source material leaves hidden sizes and activations open; these are
    the config surface, with defaults chosen for desk-scale runs.
    """

    latent_card: int = 6
    pre_dim: int = 32
    enc_hidden: int = 64
    edge_hidden: int = 64
    gru_hidden: int = 64
    factor_hidden: int = 64
    action_hidden: int = 64
    attn_dim: int = 32
    map_dim: int = 0
    history: int = 8
    horizon: int = 12
    dt: float = 0.4
    max_clique_size: int = 5
    enumeration_cap: int = 6 ** 5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


class CliqueModel:
    """Trained (or trainable) joint trajectory predictor for one clique."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = nn.ParameterStore()
        rng = np.random.default_rng(config.seed)
        self.encoder = CliqueEncoder(self.params, config, rng)
        self.decoder = CliqueDecoder(self.params, config, self.encoder, rng)

    # ------------------------------------------------------------------
    def prior_tables(self, clique: Clique) -> FactorTables:
        enc = self.encoder.encode_clique(clique, with_future=False)
        return self.encoder.factor_tables(clique, enc, "prior")

    def prior_gibbs(self, clique: Clique) -> GibbsLatent:
        return self.prior_tables(clique).to_gibbs(self.config.enumeration_cap)

    def posterior_tables(self, clique: Clique):
        """(posterior, prior) tables from one shared encoding pass."""
        enc = self.encoder.encode_clique(clique, with_future=True)
        tq = self.encoder.factor_tables(clique, enc, "posterior")
        tp = self.encoder.factor_tables(clique, enc, "prior")
        return tq, tp, enc

    def kl(self, tables_q: FactorTables, tables_p: FactorTables):
        return kl_divergence(tables_q, tables_p)

    # ------------------------------------------------------------------
    def predict(self, clique: Clique, k: int = 3, beta: int = 1,
                conditioned: dict[str, np.ndarray] | None = None,
                warn=None) -> PredictionSet:
        """K diverse joint modes for the clique, probability descending.

        Conditioning removes every latent factor touching the conditioned
        agents and fixes their rollouts. No randomness is consumed: the
        same clique yields the same modes in the same order.
        """
        conditioned = dict(conditioned or {})
        if len(clique) > self.config.max_clique_size and warn is not None:
            warn(f"clique of size {len(clique)} exceeds the trained maximum "
                 f"{self.config.max_clique_size}; running anyway")
        unknown = set(conditioned) - set(clique.ids)
        if unknown:
            raise KeyError(f"conditioned ids not in clique: {sorted(unknown)}")
        free_ids = [a for a in clique.ids if a not in conditioned]
        if not free_ids:
            raise ValueError("cannot condition every agent in the clique")

        enc = self.encoder.encode_clique(clique, with_future=False)
        tables = self.encoder.factor_tables(clique, enc, "prior")
        gibbs = tables.to_gibbs(self.config.enumeration_cap)
        if conditioned:
            gibbs = gibbs.condition(conditioned.keys())
        picked = gibbs.diverse_sample(k, beta)
        z_batch = np.array([list(a.values) for a, _ in picked], dtype=np.int64)
        weights = np.array([p for _, p in picked])
        weights = weights / weights.sum()

        refs = self.decoder.reference_trajectories(clique, enc, z_batch, free_ids)
        record = self.decoder.rollout(clique, z_batch, refs, conditioned)
        modes = self.decoder.modes_from_rollout(record, z_batch, free_ids, weights,
                                                conditioned)
        modes.sort(key=lambda m: (-m.probability,
                                  tuple(m.assignment[a] for a in free_ids)))
        return PredictionSet(agent_ids=list(clique.ids),
                             conditioned_ids=sorted(conditioned.keys()),
                             dt=self.config.dt, modes=modes,
                             footprints={a.id: a.footprint for a in clique.agents})

    # ------------------------------------------------------------------
    def save(self, path, extra_meta: dict | None = None):
        meta = {"config": self.config.to_dict(),
                "config_hash": nn.config_hash(self.config.to_dict())}
        if extra_meta:
            meta.update(extra_meta)
        nn.save_checkpoint(path, self.params.arrays(), meta)

    @classmethod
    def load(cls, path) -> "CliqueModel":
        arrays, meta = nn.load_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["config"]))
        model.params.load_arrays(arrays)
        model._meta = meta
        return model

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params.names()):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()[:16]

    def with_config(self, **overrides) -> ModelConfig:
        return replace(self.config, **overrides)
