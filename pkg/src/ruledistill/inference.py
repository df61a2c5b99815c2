"""Teacher-side inference over structured outputs.

Three regimes compute the teacher's soft predictions, matched to how the
rule penalties factor over the output:

* factorized: penalties touch one position each; renormalize per position.
* chain: bigram penalties; exact marginals by forward-backward and MAP
  decode by max-product, both in log space.
* group: cross-instance penalties; single-site Gibbs sampling with exact
  conditionals, with marginals estimated by averaging those conditionals
  (Rao-Blackwellized counts).

Group members carry finite pair potentials only: a -inf bigram entry can
freeze single-site sampling into one basin, so hard transition constraints
must be routed through the chain regime instead.  Unary -inf entries are
safe (the conditional simply never picks them) and are allowed.

Brute-force enumeration oracles for the chain and group regimes are public
so tests can compare each fast path against an independent computation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import log_softmax, logsumexp
from .projection import InfeasibleConstraintError

__all__ = [
    "InfeasibleChainError",
    "FactorizedTeacherQuery",
    "soft_predict_factorized",
    "ChainTeacherQuery",
    "chain_log_z",
    "chain_marginals",
    "chain_map_decode",
    "ChainEnumeration",
    "enumerate_chain_posterior",
    "MemberPotentials",
    "GroupLink",
    "GroupTeacherQuery",
    "gibbs_conditional",
    "gibbs_soft_predict",
    "GroupEnumeration",
    "enumerate_group_posterior",
    "form_groups",
]


class InfeasibleChainError(ValueError):
    """No label path survives the chain's hard constraints."""


def _as_float_array(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if np.isnan(arr).any() or (arr == np.inf).any():
        raise ValueError(f"{name} must not contain NaN or +inf")
    return arr


# --- factorized regime -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FactorizedTeacherQuery:
    """Per-position base distributions plus per-position penalties.

    Penalties are nonnegative, +inf for hard exclusions; they subtract from
    the base log-probabilities independently at each position.
    """

    base_log_probs: np.ndarray  # (T, K), rows normalized
    penalties: np.ndarray  # (T, K), >= 0, +inf allowed

    def __post_init__(self):
        logp = np.asarray(self.base_log_probs, dtype=float)
        pen = np.asarray(self.penalties, dtype=float)
        if logp.ndim != 2 or logp.shape != pen.shape:
            raise ValueError("base_log_probs and penalties must share a (T, K) shape")
        if np.isnan(logp).any() or (logp == np.inf).any():
            raise ValueError("base_log_probs must not contain NaN or +inf")
        if np.isnan(pen).any() or (pen < 0).any():
            raise ValueError("penalties must be nonnegative")
        norms = logsumexp(logp, axis=1)
        if np.max(np.abs(norms)) > 1e-6:
            raise ValueError("base_log_probs rows must normalize to 1")
        object.__setattr__(self, "base_log_probs", logp)
        object.__setattr__(self, "penalties", pen)


def soft_predict_factorized(query: FactorizedTeacherQuery) -> np.ndarray:
    """Independently renormalized per-position teacher distributions."""
    logq = query.base_log_probs - query.penalties
    if (logsumexp(logq, axis=1) == -np.inf).any():
        raise InfeasibleConstraintError(
            "penalties exclude every label at some position"
        )
    return np.exp(log_softmax(logq, axis=1))


# --- chain regime ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainTeacherQuery:
    """Per-position log-potentials with bigram log-penalty terms.

    ``log_pair`` entries are additive in log space (0 for no penalty, -inf
    for a forbidden bigram) and may be one shared (K, K) matrix or one per
    adjacent pair, shape (T-1, K, K).  ``log_start``/``log_end`` hold
    boundary terms.  Construction verifies that a feasible path exists.
    """

    log_unary: np.ndarray  # (T, K)
    log_pair: Optional[np.ndarray] = None
    log_start: Optional[np.ndarray] = None
    log_end: Optional[np.ndarray] = None

    def __post_init__(self):
        lu = _as_float_array(self.log_unary, "log_unary")
        if lu.ndim != 2 or lu.size == 0:
            raise ValueError("log_unary must be a non-empty (T, K) array")
        t, k = lu.shape
        object.__setattr__(self, "log_unary", lu)

        if self.log_pair is not None:
            lp = _as_float_array(self.log_pair, "log_pair")
            if lp.shape not in ((k, k), (t - 1, k, k)):
                raise ValueError(
                    f"log_pair must have shape ({k}, {k}) or ({t - 1}, {k}, {k})"
                )
            object.__setattr__(self, "log_pair", lp)
        for name in ("log_start", "log_end"):
            vec = getattr(self, name)
            if vec is not None:
                vec = _as_float_array(vec, name)
                if vec.shape != (k,):
                    raise ValueError(f"{name} must have shape ({k},)")
                object.__setattr__(self, name, vec)

        if _forward(self)[1] == -np.inf:
            raise InfeasibleChainError("hard constraints exclude every label path")

    @property
    def n_positions(self) -> int:
        return self.log_unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.log_unary.shape[1]

    def pair_term(self, t: int) -> np.ndarray:
        """Log-penalty matrix between positions t and t+1."""
        if self.log_pair is None:
            return np.zeros((self.n_labels, self.n_labels))
        if self.log_pair.ndim == 2:
            return self.log_pair
        return self.log_pair[t]


def _folded_unary(query: ChainTeacherQuery) -> np.ndarray:
    f = query.log_unary.copy()
    if query.log_start is not None:
        f[0] += query.log_start
    if query.log_end is not None:
        f[-1] += query.log_end
    return f


def _forward(query: ChainTeacherQuery) -> tuple[np.ndarray, float]:
    f = _folded_unary(query)
    t_len = query.n_positions
    alpha = np.empty_like(f)
    alpha[0] = f[0]
    for t in range(1, t_len):
        alpha[t] = f[t] + logsumexp(
            alpha[t - 1][:, None] + query.pair_term(t - 1), axis=0
        )
    return alpha, logsumexp(alpha[-1])


def chain_log_z(query: ChainTeacherQuery) -> float:
    """Log normalizer of the chain posterior."""
    return _forward(query)[1]


def chain_marginals(query: ChainTeacherQuery) -> np.ndarray:
    """Exact per-position marginals via forward-backward in log space."""
    f = _folded_unary(query)
    t_len, _ = f.shape
    alpha, log_z = _forward(query)
    beta = np.zeros_like(f)
    for t in range(t_len - 2, -1, -1):
        beta[t] = logsumexp(
            query.pair_term(t) + (f[t + 1] + beta[t + 1])[None, :], axis=1
        )
    return np.exp(alpha + beta - log_z)


def chain_map_decode(query: ChainTeacherQuery) -> tuple[np.ndarray, float]:
    """Max-product decode: the highest-probability label path and its log
    score (unnormalized).  Per-step ties break toward the lower label index.
    """
    f = _folded_unary(query)
    t_len, k = f.shape
    delta = np.empty_like(f)
    back = np.zeros((t_len, k), dtype=int)
    delta[0] = f[0]
    for t in range(1, t_len):
        scores = delta[t - 1][:, None] + query.pair_term(t - 1)
        back[t] = np.argmax(scores, axis=0)  # first maximum = lowest index
        delta[t] = f[t] + np.max(scores, axis=0)
    path = np.empty(t_len, dtype=int)
    path[-1] = int(np.argmax(delta[-1]))
    for t in range(t_len - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[-1, path[-1]])


@dataclass(frozen=True, eq=False)
class ChainEnumeration:
    """Brute-force reference answer over all K^T label paths."""

    marginals: np.ndarray
    log_z: float
    best_path: tuple[int, ...]  # lexicographically first among maximum-score paths
    best_log_score: float


def enumerate_chain_posterior(query: ChainTeacherQuery) -> ChainEnumeration:
    """Exact oracle: enumerate every path of the chain posterior."""
    f = _folded_unary(query)
    t_len, k = f.shape
    scores = []
    best_path, best_score = None, -np.inf
    for path in itertools.product(range(k), repeat=t_len):
        s = float(sum(f[t, y] for t, y in enumerate(path)))
        for t in range(t_len - 1):
            s += float(query.pair_term(t)[path[t], path[t + 1]])
        scores.append((path, s))
        if s > best_score:
            best_path, best_score = path, s
    log_z = logsumexp(np.array([s for _, s in scores]))
    marg = np.full((t_len, k), -np.inf)
    for path, s in scores:
        for t, y in enumerate(path):
            marg[t, y] = np.logaddexp(marg[t, y], s)
    return ChainEnumeration(
        marginals=np.exp(marg - log_z),
        log_z=log_z,
        best_path=best_path,
        best_log_score=best_score,
    )


# --- group regime ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MemberPotentials:
    """One group member's potentials.  Pair terms must be finite (see the
    module note on ergodicity); every unary row needs a finite entry."""

    log_unary: np.ndarray  # (T, K)
    log_pair: Optional[np.ndarray] = None  # (K, K) or (T-1, K, K), finite

    def __post_init__(self):
        lu = _as_float_array(self.log_unary, "log_unary")
        if lu.ndim != 2 or lu.size == 0:
            raise ValueError("log_unary must be a non-empty (T, K) array")
        if (np.max(lu, axis=1) == -np.inf).any():
            raise InfeasibleConstraintError(
                "some position has no feasible label"
            )
        object.__setattr__(self, "log_unary", lu)
        if self.log_pair is not None:
            lp = np.asarray(self.log_pair, dtype=float)
            t, k = lu.shape
            if lp.shape not in ((k, k), (t - 1, k, k)):
                raise ValueError(
                    f"log_pair must have shape ({k}, {k}) or ({t - 1}, {k}, {k})"
                )
            if not np.isfinite(lp).all():
                raise ValueError(
                    "group members take finite pair potentials; route hard "
                    "chain constraints through the chain regime"
                )
            object.__setattr__(self, "log_pair", lp)

    @property
    def n_positions(self) -> int:
        return self.log_unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.log_unary.shape[1]

    def pair_term(self, t: int) -> np.ndarray:
        if self.log_pair is None:
            return np.zeros((self.n_labels, self.n_labels))
        if self.log_pair.ndim == 2:
            return self.log_pair
        return self.log_pair[t]


@dataclass(frozen=True, eq=False)
class GroupLink:
    """A cross-site log-potential: log_table[label_a, label_b] adds to the
    joint score when site (member_a, pos_a) takes label_a and site
    (member_b, pos_b) takes label_b."""

    member_a: int
    pos_a: int
    member_b: int
    pos_b: int
    log_table: np.ndarray

    def __post_init__(self):
        lt = np.asarray(self.log_table, dtype=float)
        if lt.ndim != 2 or lt.shape[0] != lt.shape[1]:
            raise ValueError("log_table must be a square (K, K) matrix")
        if not np.isfinite(lt).all():
            raise ValueError("link tables must be finite (soft penalties only)")
        object.__setattr__(self, "log_table", lt)


@dataclass(frozen=True, eq=False)
class GroupTeacherQuery:
    """A set of members coupled by links, plus Gibbs sampler settings.

    ``burn_in`` defaults to 20% of ``sweeps``.  ``member_ids`` optionally
    records each member's index in the original batch (set by form_groups).
    """

    members: tuple[MemberPotentials, ...]
    links: tuple[GroupLink, ...] = ()
    sweeps: int = 200
    burn_in: Optional[int] = None
    seed: int = 0
    member_ids: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a group needs at least one member")
        k = members[0].n_labels
        if any(m.n_labels != k for m in members):
            raise ValueError("all group members must share one label space")
        object.__setattr__(self, "members", members)

        links = tuple(self.links)
        for ln in links:
            for m, t in ((ln.member_a, ln.pos_a), (ln.member_b, ln.pos_b)):
                if not 0 <= m < len(members):
                    raise ValueError(f"link references member {m} outside the group")
                if not 0 <= t < members[m].n_positions:
                    raise ValueError(f"link references position {t} outside member {m}")
            if ln.log_table.shape != (k, k):
                raise ValueError("link table shape does not match the label space")
        object.__setattr__(self, "links", links)

        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.burn_in is not None and not 0 <= self.burn_in < self.sweeps:
            raise ValueError("burn_in must lie in [0, sweeps)")
        if self.member_ids is not None:
            ids = tuple(self.member_ids)
            if len(ids) != len(members):
                raise ValueError("member_ids length must match members")
            object.__setattr__(self, "member_ids", ids)

    @property
    def n_labels(self) -> int:
        return self.members[0].n_labels

    @property
    def effective_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else int(0.2 * self.sweeps)


def _init_states(query: GroupTeacherQuery) -> list[np.ndarray]:
    """Deterministic start: each member's independent MAP labeling."""
    states = []
    for m in query.members:
        if m.log_pair is None:
            states.append(np.argmax(m.log_unary, axis=1).astype(int))
        else:
            path, _ = chain_map_decode(
                ChainTeacherQuery(log_unary=m.log_unary, log_pair=m.log_pair)
            )
            states.append(path)
    return states


def _site_logits(query, states, member: int, pos: int, beta: float = 1.0) -> np.ndarray:
    mem = query.members[member]
    logits = mem.log_unary[pos].copy()
    if mem.log_pair is not None:
        if pos > 0:
            logits += beta * mem.pair_term(pos - 1)[states[member][pos - 1], :]
        if pos < mem.n_positions - 1:
            logits += beta * mem.pair_term(pos)[:, states[member][pos + 1]]
    for ln in query.links:
        if ln.member_a == member and ln.pos_a == pos:
            logits += beta * ln.log_table[:, states[ln.member_b][ln.pos_b]]
        if ln.member_b == member and ln.pos_b == pos:
            logits += beta * ln.log_table[states[ln.member_a][ln.pos_a], :]
    return logits


def gibbs_conditional(
    query: GroupTeacherQuery, states: Sequence[np.ndarray], member: int, pos: int
) -> np.ndarray:
    """Exact single-site conditional q(y_site | all other labels)."""
    logits = _site_logits(query, states, member, pos)
    return np.exp(logits - logsumexp(logits))


def gibbs_soft_predict(query: GroupTeacherQuery) -> list[np.ndarray]:
    """Estimated per-member per-position marginals of the group posterior.

    Runs single-site Gibbs in a fixed scan order, deterministic for a given
    (seed, sweeps).  During burn-in the coupling terms (pair and link
    tables) are ramped linearly from near zero to full strength: strong
    couplings make the posterior metastable, and single-site moves from the
    independent-MAP start would otherwise freeze the chain in whichever
    mode the unaries lean toward rather than the mode the joint prefers.
    After burn-in the kernel uses the exact conditionals, and each site's
    conditional is accumulated, which estimates the same marginal as raw
    indicator counts with lower variance.
    """
    states = _init_states(query)
    burn = query.effective_burn_in
    kept = query.sweeps - burn
    acc = [np.zeros_like(m.log_unary) for m in query.members]
    rng = np.random.default_rng(query.seed)
    sites = [
        (m, t)
        for m in range(len(query.members))
        for t in range(query.members[m].n_positions)
    ]
    for sweep in range(query.sweeps):
        beta = (sweep + 1) / (burn + 1) if sweep < burn else 1.0
        for m, t in sites:
            logits = _site_logits(query, states, m, t, beta=beta)
            probs = np.exp(logits - logsumexp(logits))
            u = rng.random()
            states[m][t] = min(
                int(np.searchsorted(np.cumsum(probs), u, side="right")),
                query.n_labels - 1,
            )
            if sweep >= burn:
                acc[m][t] += probs
    return [a / kept for a in acc]


@dataclass(frozen=True, eq=False)
class GroupEnumeration:
    """Brute-force reference answer over the joint group label space."""

    marginals: list[np.ndarray]
    log_z: float


def enumerate_group_posterior(query: GroupTeacherQuery) -> GroupEnumeration:
    """Exact oracle: enumerate every joint labeling of all sites."""
    k = query.n_labels
    sites = [
        (m, t)
        for m in range(len(query.members))
        for t in range(query.members[m].n_positions)
    ]
    site_index = {s: i for i, s in enumerate(sites)}
    log_marg = [np.full_like(m.log_unary, -np.inf) for m in query.members]
    all_scores = []
    for joint in itertools.product(range(k), repeat=len(sites)):
        s = 0.0
        for (m, t), y in zip(sites, joint):
            s += float(query.members[m].log_unary[t, y])
        for m, mem in enumerate(query.members):
            if mem.log_pair is not None:
                for t in range(mem.n_positions - 1):
                    a = joint[site_index[(m, t)]]
                    b = joint[site_index[(m, t + 1)]]
                    s += float(mem.pair_term(t)[a, b])
        for ln in query.links:
            a = joint[site_index[(ln.member_a, ln.pos_a)]]
            b = joint[site_index[(ln.member_b, ln.pos_b)]]
            s += float(ln.log_table[a, b])
        all_scores.append(s)
        for (m, t), y in zip(sites, joint):
            log_marg[m][t, y] = np.logaddexp(log_marg[m][t, y], s)
    log_z = logsumexp(np.array(all_scores))
    return GroupEnumeration(
        marginals=[np.exp(lm - log_z) for lm in log_marg], log_z=log_z
    )


# --- group formation ---------------------------------------------------------


def form_groups(
    members: Sequence[MemberPotentials],
    links: Sequence[GroupLink],
    g_max: int = 8,
    seed: int = 0,
    sweeps: int = 200,
    burn_in: Optional[int] = None,
) -> list[GroupTeacherQuery]:
    """Partition a batch into groups by link connectivity.

    Components larger than ``g_max`` are shrunk by deleting uniformly
    random links (seeded) until every component fits.  Link indices refer
    to the batch; the returned queries re-index members and record their
    original batch positions in ``member_ids``.
    """
    if g_max < 1:
        raise ValueError("g_max must be >= 1")
    n = len(members)
    for ln in links:
        if not (0 <= ln.member_a < n and 0 <= ln.member_b < n):
            raise ValueError("links must reference batch members")

    rng = np.random.default_rng(seed)
    kept = list(links)

    def components(active_links):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for ln in active_links:
            a, b = find(ln.member_a), find(ln.member_b)
            if a != b:
                parent[a] = b
        comps: dict[int, list[int]] = {}
        for i in range(n):
            comps.setdefault(find(i), []).append(i)
        return sorted(comps.values(), key=min)

    while True:
        comps = components(kept)
        oversized = [c for c in comps if len(c) > g_max]
        if not oversized:
            break
        target = set(oversized[0])
        internal = [
            i
            for i, ln in enumerate(kept)
            if ln.member_a in target and ln.member_b in target
        ]
        drop = internal[int(rng.integers(len(internal)))]
        kept.pop(drop)

    groups = []
    for comp in comps:
        local = {orig: i for i, orig in enumerate(comp)}
        comp_links = tuple(
            GroupLink(
                member_a=local[ln.member_a],
                pos_a=ln.pos_a,
                member_b=local[ln.member_b],
                pos_b=ln.pos_b,
                log_table=ln.log_table,
            )
            for ln in kept
            if ln.member_a in local and ln.member_b in local
        )
        groups.append(
            GroupTeacherQuery(
                members=tuple(members[i] for i in comp),
                links=comp_links,
                sweeps=sweeps,
                burn_in=burn_in,
                seed=int(rng.integers(2**31 - 1)),
                member_ids=tuple(comp),
            )
        )
    return groups
