"""Exact inference over the discrete joint latent of a clique.

The joint distribution is a Gibbs distribution: log-probability equal to a
sum of per-agent node factors and per-pair edge factors, normalized by
enumerating the full product space. Clique caps keep that space small
(<= 6^5 by default), which buys exactness, determinism, and oracle-friendly
tests. Ties everywhere break lexicographically on the assignment vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ENUMERATION_CAP = 6 ** 5


class EnumerationCapError(RuntimeError):
    """Raised when the joint latent space exceeds the enumeration cap."""


@dataclass(frozen=True)
class LatentAssignment:
    """One valuation of every per-agent latent in a clique."""

    values: tuple[int, ...]

    def __len__(self):
        return len(self.values)


def hamming(a, b) -> int:
    """Number of positions where two assignments differ."""
    va = a.values if isinstance(a, LatentAssignment) else tuple(a)
    vb = b.values if isinstance(b, LatentAssignment) else tuple(b)
    if len(va) != len(vb):
        raise ValueError("assignments must have equal length")
    return sum(x != y for x, y in zip(va, vb))


@dataclass
class GibbsLatent:
    """Discrete joint latent over a clique, stored as factor tables.

    node_factors[i] is a (card_i,) table; edge_factors[(i, j)] with i < j is
    a (card_i, card_j) table. Indices refer to positions in `agent_ids`.
    """

    agent_ids: list[str]
    cards: list[int]
    node_factors: list[np.ndarray]
    edge_factors: dict[tuple[int, int], np.ndarray]
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    _joint: np.ndarray | None = field(default=None, repr=False)
    _log_z: float | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.agent_ids)
        if len(self.cards) != n or len(self.node_factors) != n:
            raise ValueError("one card and one node factor per agent required")
        size = 1
        for c in self.cards:
            size *= c
        if size > self.enumeration_cap:
            raise EnumerationCapError(
                f"joint latent space of size {size} exceeds cap {self.enumeration_cap}")
        for i, f in enumerate(self.node_factors):
            f = np.asarray(f, dtype=np.float64)
            if f.shape != (self.cards[i],):
                raise ValueError(f"node factor {i} has shape {f.shape}, expected ({self.cards[i]},)")
            self.node_factors[i] = f
        for (i, j), f in self.edge_factors.items():
            if not i < j:
                raise ValueError("edge factors must be keyed by ordered index pairs (i < j)")
            f = np.asarray(f, dtype=np.float64)
            if f.shape != (self.cards[i], self.cards[j]):
                raise ValueError(f"edge factor {(i, j)} has shape {f.shape}")
            self.edge_factors[(i, j)] = f

    # ------------------------------------------------------------------
    @property
    def size(self) -> int:
        return int(np.prod(self.cards, dtype=np.int64))

    def joint_unnormalized(self) -> np.ndarray:
        """Full tensor of factor sums, shape = tuple(cards)."""
        if self._joint is None:
            n = len(self.cards)
            total = np.zeros(tuple(self.cards))
            for i, f in enumerate(self.node_factors):
                shape = [1] * n
                shape[i] = self.cards[i]
                total = total + f.reshape(shape)
            for (i, j), f in self.edge_factors.items():
                shape = [1] * n
                shape[i], shape[j] = self.cards[i], self.cards[j]
                total = total + f.reshape(shape)
            self._joint = total
        return self._joint

    def log_partition(self) -> float:
        if self._log_z is None:
            t = self.joint_unnormalized().ravel()
            m = t.max()
            self._log_z = float(m + np.log(np.exp(t - m).sum()))
        return self._log_z

    def log_prob(self, assignment) -> float:
        values = assignment.values if isinstance(assignment, LatentAssignment) else tuple(assignment)
        if len(values) != len(self.cards):
            raise ValueError("assignment length must equal clique size")
        return float(self.joint_unnormalized()[values]) - self.log_partition()

    def probabilities(self) -> np.ndarray:
        """All probabilities, flattened in lexicographic (C) order."""
        t = self.joint_unnormalized().ravel()
        p = np.exp(t - self.log_partition())
        return p

    def _unravel(self, flat_index: int) -> LatentAssignment:
        return LatentAssignment(tuple(int(v) for v in np.unravel_index(flat_index, tuple(self.cards))))

    def top_modes(self, n: int) -> list[tuple[LatentAssignment, float]]:
        """The min(n, |Z|) most probable assignments, probability descending.

        Equal probabilities order lexicographically on the assignment.
        """
        p = self.probabilities()
        order = np.argsort(-p, kind="stable")  # stable: ties stay in lex order
        take = min(n, p.size)
        return [(self._unravel(int(k)), float(p[k])) for k in order[:take]]

    def training_sample(self, n_top: int, n_random: int,
                        rng: np.random.Generator) -> list[tuple[LatentAssignment, float]]:
        """n_top highest-probability modes plus n_random others, reweighted.

        When the whole space fits in n_top + n_random, every mode is returned
        with its exact probability; otherwise the selected modes' weights are
        renormalized to sum to one.
        """
        if n_top < 0 or n_random < 0:
            raise ValueError("sample counts must be >= 0")
        p = self.probabilities()
        if p.size <= n_top + n_random:
            return self.top_modes(p.size)
        order = np.argsort(-p, kind="stable")
        chosen = list(order[:n_top])
        rest = order[n_top:]
        if n_random > 0:
            picks = rng.choice(rest.size, size=n_random, replace=False)
            chosen.extend(rest[np.sort(picks)])
        w = p[chosen]
        w = w / w.sum()
        return [(self._unravel(int(k)), float(wk)) for k, wk in zip(chosen, w)]

    def diverse_sample(self, k: int, beta: int) -> list[tuple[LatentAssignment, float]]:
        """Greedy most-probable-first selection with a diversity constraint.

        Each accepted assignment must differ from all previously accepted in
        at least beta positions (Hamming distance). Stops early once no
        candidate satisfies the constraint. beta = 0 degenerates to top-k.
        """
        if beta < 0:
            raise ValueError("beta must be >= 0")
        p = self.probabilities()
        order = np.argsort(-p, kind="stable")
        picked: list[tuple[LatentAssignment, float]] = []
        for flat in order:
            if len(picked) >= k:
                break
            cand = self._unravel(int(flat))
            if all(hamming(cand, prev) >= beta for prev, _ in picked):
                picked.append((cand, float(p[flat])))
        return picked

    def condition(self, conditioned_ids) -> "GibbsLatent":
        """Remove every factor that touches the conditioned agents.

        Returns the Gibbs distribution over the remaining agents built from
        the surviving node and edge factors. Conditioning on the empty set
        returns an equivalent distribution; conditioning away every agent is
        an error.
        """
        conditioned = set(conditioned_ids)
        unknown = conditioned - set(self.agent_ids)
        if unknown:
            raise KeyError(f"unknown agent ids: {sorted(unknown)}")
        if conditioned == set(self.agent_ids):
            raise ValueError("cannot condition on every agent in the clique")
        keep = [i for i, a in enumerate(self.agent_ids) if a not in conditioned]
        remap = {old: new for new, old in enumerate(keep)}
        return GibbsLatent(
            agent_ids=[self.agent_ids[i] for i in keep],
            cards=[self.cards[i] for i in keep],
            node_factors=[self.node_factors[i].copy() for i in keep],
            edge_factors={(remap[i], remap[j]): f.copy()
                          for (i, j), f in self.edge_factors.items()
                          if i in remap and j in remap},
            enumeration_cap=self.enumeration_cap,
        )
