"""Policy and value networks over environment states.

Each of the three observation graphs runs through its own two-layer
multi-head graph-attention encoder; the per-server vectors get a shared
linear embedding. Everything is fused per server through a small trunk so
the whole stack stays permutation-equivariant: relabeling servers permutes
the actor logits identically. The actor and the critic keep fully separate
encoder weights (prefixes "actor." / "critic.") so the two learning rates
never touch each other's features; the critic pools its trunk output across
servers before the value head.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .env import EnvState, GraphData

GRAPH_KEYS = ("deploy", "route", "invoke")


@dataclass(frozen=True)
class ArchSpec:
    """Network sizes; the checkpoint header stores this verbatim."""

    n_servers: int
    n_services: int
    hidden: int = 64
    heads: int = 4
    gat_layers: int = 2
    vec_embed: int = 32
    trunk: int = 128
    invoke_feats: int = 6

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _init_gat_stack(
    store: ParamStore, rng: np.random.Generator, prefix: str, in_feats: int, arch: ArchSpec
) -> None:
    head_dim = arch.hidden // arch.heads
    feats = in_feats
    for layer in range(arch.gat_layers):
        for h in range(arch.heads):
            base = f"{prefix}.l{layer}.h{h}"
            store.add(f"{base}.W", _glorot(rng, feats, head_dim, (feats, head_dim)))
            store.add(f"{base}.a_src", _glorot(rng, head_dim, 1, (head_dim,)))
            store.add(f"{base}.a_dst", _glorot(rng, head_dim, 1, (head_dim,)))
        store.add(
            f"{prefix}.l{layer}.proj",
            _glorot(rng, arch.hidden, arch.hidden, (arch.hidden, arch.hidden)),
        )
        store.add(f"{prefix}.l{layer}.bias", np.zeros(arch.hidden))
        feats = arch.hidden


def _init_network(store: ParamStore, rng: np.random.Generator, net: str, arch: ArchSpec) -> None:
    _init_gat_stack(store, rng, f"{net}.deploy", arch.n_services, arch)
    _init_gat_stack(store, rng, f"{net}.route", arch.n_services, arch)
    _init_gat_stack(store, rng, f"{net}.invoke", arch.invoke_feats, arch)
    store.add(f"{net}.vec.W", _glorot(rng, 2, arch.vec_embed, (2, arch.vec_embed)))
    store.add(f"{net}.vec.bias", np.zeros(arch.vec_embed))
    fused = 3 * arch.hidden + arch.vec_embed
    store.add(f"{net}.trunk.W", _glorot(rng, fused, arch.trunk, (fused, arch.trunk)))
    store.add(f"{net}.trunk.bias", np.zeros(arch.trunk))
    if net == "actor":
        store.add("actor.head.w", _glorot(rng, arch.trunk, 1, (arch.trunk,)))
        store.add("actor.head.bias", np.zeros(()))
    else:
        store.add("critic.head.w", _glorot(rng, arch.trunk, 1, (arch.trunk,)))
        store.add("critic.head.bias", np.zeros(()))


def init_policy_params(arch: ArchSpec, seed=0) -> ParamStore:
    """Fresh actor + critic parameters under one named store.

    `seed` may be an int or a numpy SeedSequence.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    _init_network(store, rng, "actor", arch)
    _init_network(store, rng, "critic", arch)
    return store


def expected_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes implied by an architecture descriptor."""
    probe = init_policy_params(arch, seed=0)
    return {name: t.data.shape for name, t in probe.items()}


def gat_layer(feats: Tensor, adj: np.ndarray, store: ParamStore, base: str, heads: int) -> Tensor:
    """One multi-head graph-attention layer over a dense adjacency.

    Per head: z = X W; edge score e_ij = leaky_relu(a_src.z_i + a_dst.z_j)
    for sender j in node i's in-neighborhood (self-loops always included);
    attention is a row softmax over the neighborhood and the head output is
    the attention-weighted sum of sender projections. Heads concatenate,
    then a shared projection + ELU produces the layer output.
    """
    mask = adj | np.eye(adj.shape[0], dtype=bool)
    head_outs = []
    for h in range(heads):
        p = f"{base}.h{h}"
        z = feats @ store[f"{p}.W"]
        s_src = z @ store[f"{p}.a_src"]  # score contribution of the receiver
        s_dst = z @ store[f"{p}.a_dst"]  # score contribution of the sender
        scores = ad.leaky_relu(ad.add(reshape_col(s_src), reshape_row(s_dst)))
        attn = ad.masked_row_softmax(scores, mask)
        head_outs.append(attn @ z)
    combined = ad.concat(head_outs, axis=1)
    return ad.elu(combined @ store[f"{base}.proj"] + store[f"{base}.bias"])


def reshape_row(v: Tensor) -> Tensor:
    out = Tensor(v.data.reshape(1, -1), _parents=(v,))
    shape = v.data.shape
    out._pullback = lambda g: (g.reshape(shape),)
    return out


def reshape_col(v: Tensor) -> Tensor:
    out = Tensor(v.data.reshape(-1, 1), _parents=(v,))
    shape = v.data.shape
    out._pullback = lambda g: (g.reshape(shape),)
    return out


def _encode_graph(
    graph: GraphData, store: ParamStore, prefix: str, arch: ArchSpec
) -> Tensor:
    x = Tensor(_condition(graph.feats))
    for layer in range(arch.gat_layers):
        x = gat_layer(x, graph.adj, store, f"{prefix}.l{layer}", arch.heads)
    return x


def _condition(feats: np.ndarray) -> np.ndarray:
    """Squash unbounded non-negative raw features to a trainable scale."""
    return np.log1p(np.maximum(feats, 0.0))


def encode_state(state: EnvState, store: ParamStore, net: str, arch: ArchSpec) -> Tensor:
    """Per-server fused embeddings, shape (n_servers, trunk).

    Deploy and route graphs yield per-server node embeddings (route subgraphs
    are averaged element-wise across requests); the invoke graph is encoded
    over services, mean-pooled, and broadcast to every server; the two state
    vectors pass through a shared 2-column linear embedding. Everything
    concatenates per server and runs through the trunk, so consistent
    relabeling of servers permutes rows identically.
    """
    n = arch.n_servers
    deploy = _encode_graph(state.deploy_graph, store, f"{net}.deploy", arch)

    if state.route_graphs:
        acc = None
        for graph in state.route_graphs:
            enc = _encode_graph(graph, store, f"{net}.route", arch)
            acc = enc if acc is None else acc + enc
        route = acc * (1.0 / len(state.route_graphs))
    else:
        route = Tensor(np.zeros((n, arch.hidden)))

    invoke_nodes = _encode_graph(state.invoke_graph, store, f"{net}.invoke", arch)
    invoke_pooled = ad.mean_axis0(invoke_nodes)  # (hidden,)
    invoke_tiled = Tensor(np.ones((n, 1))) @ reshape_row(invoke_pooled)

    vecs = Tensor(np.stack([_condition(state.arrival_dist), state.avail_mask], axis=1))
    vec_emb = ad.elu(vecs @ store[f"{net}.vec.W"] + store[f"{net}.vec.bias"])

    fused = ad.concat([deploy, route, invoke_tiled, vec_emb], axis=1)
    return ad.elu(fused @ store[f"{net}.trunk.W"] + store[f"{net}.trunk.bias"])


def actor_forward(embedding: Tensor, mask: np.ndarray, store: ParamStore) -> tuple[Tensor, Tensor]:
    """(probs, log_probs) over servers; masked entries have probability exactly 0."""
    logits = embedding @ store["actor.head.w"] + store["actor.head.bias"]
    logp = ad.masked_log_softmax(logits, mask.astype(bool))
    return ad.exp(logp), logp


def critic_forward(embedding: Tensor, store: ParamStore) -> Tensor:
    """Scalar state value from the mean-pooled critic trunk output."""
    pooled = ad.mean_axis0(embedding)
    return pooled @ store["critic.head.w"] + store["critic.head.bias"]


def policy_distribution(
    state: EnvState, store: ParamStore, arch: ArchSpec
) -> tuple[Tensor, Tensor]:
    emb = encode_state(state, store, "actor", arch)
    return actor_forward(emb, state.avail_mask, store)


def state_value(state: EnvState, store: ParamStore, arch: ArchSpec) -> Tensor:
    emb = encode_state(state, store, "critic", arch)
    return critic_forward(emb, store)
