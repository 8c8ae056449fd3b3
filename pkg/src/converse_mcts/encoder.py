"""State encoder: global graph attention, feedback-graph convolutions, and a
gated transformer aggregator producing the d-dimensional state vector.

The module is a single :class:`torch.nn.Module` bound to one catalog, so one
embedding row exists per entity in the shared id space. Forward passes are
side-effect free and may be shared read-only across concurrent simulations;
``.double()`` switches the whole stack to 64-bit for gradient checking.

Dense masked attention/adjacency is used throughout: graphs at the intended
scale stay in the hundreds of nodes, far below anything needing sparse
kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .catalog import Catalog, GlobalGraph
from .env import ConversationState, H_ACCEPT_VALUE


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64            # entity embedding width d
    gat_layers: int = 2      # rounds over the global graph
    gat_heads: int = 4       # attention heads (must divide dim)
    pos_gcn_layers: int = 1
    neg_gcn_layers: int = 1
    seq_layers: int = 2      # transformer blocks in the aggregator
    seq_heads: int = 4
    max_seq_len: int = 512
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if self.dim % self.gat_heads:
            raise ValueError("gat_heads must divide dim")
        if self.dim % self.seq_heads:
            raise ValueError("seq_heads must divide dim")


@dataclass(frozen=True)
class FeedbackGraph:
    """Per-turn local graph over the user, feedback entities and candidates.

    Node order is fixed: user first, then ``values`` (sorted), then ``items``
    (sorted). ``feedback_values`` are the values carrying a unit edge to the
    user (accepted ones on the positive graph, rejected on the negative).
    """

    polarity: str  # "positive" | "negative"
    user: int
    values: tuple[int, ...]
    items: tuple[int, ...]
    feedback_values: frozenset[int]
    catalog: Catalog = field(repr=False)

    @cached_property
    def positions(self) -> dict[int, int]:
        out = {self.user: 0}
        for i, p in enumerate(self.values):
            out[p] = 1 + i
        for i, v in enumerate(self.items):
            out[v] = 1 + len(self.values) + i
        return out

    @property
    def n_nodes(self) -> int:
        return 1 + len(self.values) + len(self.items)

    @cached_property
    def item_value_pairs(self) -> frozenset[tuple[int, int]]:
        vals = set(self.values)
        return frozenset(
            (v, p)
            for v in self.items
            for p in self.catalog.values_of_item(v)
            if p in vals
        )

    def edge_weight(self, a: int, b: int, item_score) -> float:
        """Case rules for the weight between entities ``a`` and ``b``.

        ``item_score`` maps item id -> dynamic matching score.
        """
        for i, j in ((a, b), (b, a)):
            if i == self.user and j in set(self.items):
                return float(item_score[j])
            if (i, j) in self.item_value_pairs:
                return 1.0
            if i == self.user and j in self.feedback_values:
                return 1.0
        return 0.0


def build_feedback_graphs(
    state: ConversationState, catalog: Catalog
) -> tuple[FeedbackGraph, FeedbackGraph]:
    """Positive and negative feedback graphs for the current turn."""
    pos = FeedbackGraph(
        polarity="positive",
        user=state.user,
        values=tuple(sorted(state.accepted_values | state.candidate_values)),
        items=tuple(sorted(state.candidate_items)),
        feedback_values=state.accepted_values,
        catalog=catalog,
    )
    neg = FeedbackGraph(
        polarity="negative",
        user=state.user,
        values=tuple(sorted(state.rejected_values | state.candidate_values)),
        items=tuple(sorted(state.rejected_items | state.candidate_items)),
        feedback_values=state.rejected_values,
        catalog=catalog,
    )
    return pos, neg


def _init_linear(weight: Tensor, gen: torch.Generator, bias: Tensor | None = None) -> None:
    bound = 1.0 / math.sqrt(weight.shape[-1])
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=gen)
        if bias is not None:
            bias.uniform_(-bound, bound, generator=gen)


def _masked_softmax(logits: Tensor, mask: Tensor) -> Tensor:
    """Row softmax over ``mask``; rows without any allowed column become 0."""
    any_row = mask.any(dim=-1, keepdim=True)
    filled = torch.where(mask, logits, logits.new_tensor(float("-inf")))
    filled = torch.where(any_row, filled, logits.new_zeros(()))
    out = torch.softmax(filled, dim=-1)
    return out * any_row


class StateEncoder(nn.Module):
    """Produces the state representation consumed by the policy and Q heads."""

    def __init__(
        self,
        catalog: Catalog,
        graph: GlobalGraph,
        config: EncoderConfig = EncoderConfig(),
        seed: int = 0,
    ) -> None:
        super().__init__()
        self.catalog = catalog
        self.config = config
        d, k = config.dim, config.gat_heads
        dh = d // k
        gen = torch.Generator().manual_seed(seed)

        n = catalog.n_entities
        emb = torch.empty(n, d)
        emb.uniform_(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), generator=gen)
        self.embedding_table = nn.Parameter(emb)

        # global graph structure (dense neighborhood masks, one per direction)
        ui = graph.user_item_array
        pv = graph.value_item_array
        mask_ni = torch.zeros(n, n, dtype=torch.bool)   # user->item and value->item rows
        mask_iu = torch.zeros(n, n, dtype=torch.bool)   # item rows attending users
        mask_ip = torch.zeros(n, n, dtype=torch.bool)   # item rows attending values
        if len(ui):
            mask_ni[ui[:, 0], ui[:, 1]] = True
            mask_iu[ui[:, 1], ui[:, 0]] = True
        if len(pv):
            mask_ni[pv[:, 0], pv[:, 1]] = True
            mask_ip[pv[:, 1], pv[:, 0]] = True
        self.register_buffer("mask_ni", mask_ni, persistent=False)
        self.register_buffer("mask_iu", mask_iu, persistent=False)
        self.register_buffer("mask_ip", mask_ip, persistent=False)

        def param(*shape: int) -> nn.Parameter:
            t = torch.empty(*shape)
            _init_linear(t, gen)
            return nn.Parameter(t)

        # GAT stack: per layer, per head a (dh), W1 (dh x d), W2 (dh x d)
        self.gat_a = nn.ParameterList(param(k, dh) for _ in range(config.gat_layers))
        self.gat_w1 = nn.ParameterList(param(k, dh, d) for _ in range(config.gat_layers))
        self.gat_w2 = nn.ParameterList(param(k, dh, d) for _ in range(config.gat_layers))

        self.gcn_pos = nn.ParameterList(param(d, d) for _ in range(config.pos_gcn_layers))
        self.gcn_neg = nn.ParameterList(param(d, d) for _ in range(config.neg_gcn_layers))

        # aggregator: feedback projections, gate, positions, transformer blocks
        self.proj_acc_w, self.proj_acc_b = param(d, d), param(d)
        self.proj_rej_w, self.proj_rej_b = param(d, d), param(d)
        self.gate_w1, self.gate_w2, self.gate_b = param(d, d), param(d, d), param(d)
        pos_emb = torch.empty(config.max_seq_len, d)
        pos_emb.uniform_(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), generator=gen)
        self.pos_emb = nn.Parameter(pos_emb)

        blocks = []
        for _ in range(config.seq_layers):
            blocks.append(
                nn.ParameterDict(
                    {
                        "wq": param(d, d), "bq": param(d),
                        "wk": param(d, d), "bk": param(d),
                        "wv": param(d, d), "bv": param(d),
                        "wo": param(d, d), "bo": param(d),
                        "ln1_g": nn.Parameter(torch.ones(d)),
                        "ln1_b": nn.Parameter(torch.zeros(d)),
                        "ff_w1": param(4 * d, d), "ff_b1": param(4 * d),
                        "ff_w2": param(d, 4 * d), "ff_b2": param(d),
                        "ln2_g": nn.Parameter(torch.ones(d)),
                        "ln2_b": nn.Parameter(torch.zeros(d)),
                    }
                )
            )
        self.seq_blocks = nn.ModuleList(blocks)

        # catalog item-value incidence, local indices, for fast graph assembly
        pair_item: list[int] = []
        pair_value: list[int] = []
        voff = catalog.value_offset
        for local, vals in enumerate(catalog.item_values):
            for p in sorted(vals):
                pair_item.append(local)
                pair_value.append(p - voff)
        self._pair_item = np.asarray(pair_item, dtype=np.int64)
        self._pair_value = np.asarray(pair_value, dtype=np.int64)

    # ---- primitives ----------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding_table.dtype

    def _leaky(self, x: Tensor) -> Tensor:
        return torch.nn.functional.leaky_relu(x, self.config.leaky_slope)

    def preference_vector(
        self, user: int, accepted: Sequence[int], rejected: Sequence[int]
    ) -> Tensor:
        """e_u + sum of accepted value embeddings - sum of rejected ones."""
        e = self.embedding_table
        out = e[user]
        if len(accepted):
            out = out + e[list(accepted)].sum(dim=0)
        if len(rejected):
            out = out - e[list(rejected)].sum(dim=0)
        return out

    def matching_scores(
        self,
        user: int,
        items: Sequence[int],
        accepted: Sequence[int],
        rejected: Sequence[int],
    ) -> Tensor:
        """Dynamic matching score of each item, strictly inside (0, 1)."""
        pref = self.preference_vector(user, accepted, rejected)
        return torch.sigmoid(self.embedding_table[list(items)] @ pref)

    def matching_score(self, user: int, item: int, state: ConversationState) -> Tensor:
        return self.matching_scores(
            user, [item], sorted(state.accepted_values), sorted(state.rejected_values)
        )[0]

    # ---- global graph attention ----------------------------------------

    def encode_global(self, return_attention: bool = False):
        """Multi-head attention over the tripartite graph.

        Items aggregate their user-side and value-side messages separately
        and average the available sides; neighborless nodes pass their own
        vector through the nonlinearity.
        """
        cfg = self.config
        h = self.embedding_table
        n = h.shape[0]
        has_ni = self.mask_ni.any(dim=-1)
        has_iu = self.mask_iu.any(dim=-1)
        has_ip = self.mask_ip.any(dim=-1)
        sides = (has_iu.to(h.dtype) + has_ip.to(h.dtype)).clamp(min=1.0).unsqueeze(-1)
        neighborless = ~(has_ni | has_iu | has_ip)
        attention = []

        for layer in range(cfg.gat_layers):
            z_ni, z_iu, z_ip = [], [], []
            layer_att = []
            for k in range(cfg.gat_heads):
                s1 = h @ self.gat_w1[layer][k].T          # (n, dh)
                s2 = h @ self.gat_w2[layer][k].T
                e = self._leaky(s1.unsqueeze(1) + s2.unsqueeze(0))
                logits = e @ self.gat_a[layer][k]          # (n, n)
                a_ni = _masked_softmax(logits, self.mask_ni)
                a_iu = _masked_softmax(logits, self.mask_iu)
                a_ip = _masked_softmax(logits, self.mask_ip)
                z_ni.append(a_ni @ s2)
                z_iu.append(a_iu @ s2)
                z_ip.append(a_ip @ s2)
                if return_attention:
                    layer_att.append(
                        {"ni": (a_ni, self.mask_ni), "iu": (a_iu, self.mask_iu),
                         "ip": (a_ip, self.mask_ip)}
                    )
            z = torch.cat(z_ni, dim=-1) + (
                torch.cat(z_iu, dim=-1) + torch.cat(z_ip, dim=-1)
            ) / sides
            h = self._leaky(torch.where(neighborless.unsqueeze(-1), h, z))
            if return_attention:
                attention.append(layer_att)
        if return_attention:
            return h, attention
        return h

    # ---- feedback graph convolutions ------------------------------------

    def encode_feedback(self, graph: FeedbackGraph, state: ConversationState) -> Tensor:
        """Node representations of one feedback graph (single-state path)."""
        out = self._feedback_batch([state], [graph])
        return out[0, : graph.n_nodes]

    def _batch_scores(
        self, states: Sequence[ConversationState], graphs: Sequence[FeedbackGraph]
    ) -> Tensor | None:
        """Matching scores of every graph's items, concatenated in graph
        order (row-major over the padded layout)."""
        e = self.embedding_table
        b = len(graphs)
        i_max = max(len(g.items) for g in graphs)
        if i_max == 0:
            return None
        m_max = max(
            1, max(len(s.accepted_values) + len(s.rejected_values) for s in states)
        )
        fb_ids = np.zeros((b, m_max), dtype=np.int64)
        fb_coef = np.zeros((b, m_max), dtype=np.float64)
        item_ids = np.zeros((b, i_max), dtype=np.int64)
        item_mask = np.zeros((b, i_max), dtype=bool)
        users = np.zeros(b, dtype=np.int64)
        for i, (st, g) in enumerate(zip(states, graphs)):
            users[i] = g.user
            acc = sorted(st.accepted_values)
            rej = sorted(st.rejected_values)
            fb_ids[i, : len(acc)] = acc
            fb_coef[i, : len(acc)] = 1.0
            fb_ids[i, len(acc) : len(acc) + len(rej)] = rej
            fb_coef[i, len(acc) : len(acc) + len(rej)] = -1.0
            item_ids[i, : len(g.items)] = g.items
            item_mask[i, : len(g.items)] = True
        coef = torch.from_numpy(fb_coef).to(self.dtype)
        pref = e[torch.from_numpy(users)] + torch.einsum(
            "bm,bmd->bd", coef, e[torch.from_numpy(fb_ids)]
        )
        scores = torch.sigmoid(
            torch.einsum("bid,bd->bi", e[torch.from_numpy(item_ids)], pref)
        )
        return torch.masked_select(scores, torch.from_numpy(item_mask))

    def _feedback_batch(
        self, states: Sequence[ConversationState], graphs: Sequence[FeedbackGraph]
    ) -> Tensor:
        """Shared batched GCN over padded dense adjacency."""
        cat = self.catalog
        b = len(graphs)
        n_max = max(g.n_nodes for g in graphs)
        d = self.config.dim
        ioff, voff = cat.item_offset, cat.value_offset

        dtype = self.dtype
        np_dtype = np.float32 if dtype == torch.float32 else np.float64
        node_ids = np.zeros((b, n_max), dtype=np.int64)
        static = np.zeros((b, n_max, n_max), dtype=np_dtype)
        dyn_b: list[np.ndarray] = []
        dyn_r: list[np.ndarray] = []
        for i, g in enumerate(graphs):
            nv, ni = len(g.values), len(g.items)
            node_ids[i, 0] = g.user
            vals = np.fromiter(g.values, dtype=np.int64, count=nv)
            its = np.fromiter(g.items, dtype=np.int64, count=ni)
            node_ids[i, 1 : 1 + nv] = vals
            node_ids[i, 1 + nv : 1 + nv + ni] = its

            value_pos = np.full(cat.n_values, -1, dtype=np.int64)
            value_pos[vals - voff] = 1 + np.arange(nv)
            item_pos = np.full(cat.n_items, -1, dtype=np.int64)
            item_pos[its - ioff] = 1 + nv + np.arange(ni)

            # item-value incidence restricted to present nodes
            rows = item_pos[self._pair_item]
            cols = value_pos[self._pair_value]
            keep = (rows >= 0) & (cols >= 0)
            static[i, rows[keep], cols[keep]] = 1.0
            static[i, cols[keep], rows[keep]] = 1.0
            # user edges to the feedback values
            if g.feedback_values:
                fb = value_pos[np.fromiter(g.feedback_values, dtype=np.int64) - voff]
                static[i, 0, fb] = 1.0
                static[i, fb, 0] = 1.0
            # user-item entries get the dynamic matching score below
            dyn_b.append(np.full(ni, i, dtype=np.int64))
            dyn_r.append(1 + nv + np.arange(ni))

        adj = torch.from_numpy(static)
        # dynamic matching scores, differentiable through the embeddings
        w = self._batch_scores(states, graphs)
        if w is not None:
            bb = torch.from_numpy(np.concatenate(dyn_b))
            rr = torch.from_numpy(np.concatenate(dyn_r))
            cc = torch.zeros_like(bb)
            adj = adj.index_put((bb, rr, cc), w).index_put((bb, cc, rr), w)

        mask = (adj > 0).to(dtype)
        deg = adj.sum(dim=-1)
        deg_safe = torch.where(deg > 0, deg, torch.ones_like(deg))
        norm = mask / torch.sqrt(deg_safe.unsqueeze(-1) * deg_safe.unsqueeze(-2))

        x = self.embedding_table[torch.from_numpy(node_ids)]
        weights = self.gcn_pos if graphs[0].polarity == "positive" else self.gcn_neg
        for w_l in weights:
            x = self._leaky(norm @ (x @ w_l.T) + x)
        return x

    # ---- aggregator ------------------------------------------------------

    def encode_state(
        self, state: ConversationState, h_global: Tensor | None = None
    ) -> Tensor:
        return self.encode_states([state], h_global)[0]

    def encode_states(
        self, states: Sequence[ConversationState], h_global: Tensor | None = None
    ) -> Tensor:
        """Batched state representations, shape (len(states), dim)."""
        if h_global is None:
            h_global = self.encode_global()
        pairs = [build_feedback_graphs(s, self.catalog) for s in states]
        pos_graphs = [p for p, _ in pairs]
        neg_graphs = [n for _, n in pairs]
        out_pos = self._feedback_batch(states, pos_graphs)
        out_neg = self._feedback_batch(states, neg_graphs)

        b = len(states)
        d = self.config.dim
        n_pos, n_neg = out_pos.shape[1], out_neg.shape[1]
        lengths = [len(s.history) for s in states]
        l_max = max(lengths)
        if l_max > self.config.max_seq_len:
            raise ValueError(
                f"history length {l_max} exceeds max_seq_len {self.config.max_seq_len}"
            )

        ent = np.zeros((b, l_max), dtype=np.int64)
        acc_mask = np.zeros((b, l_max), dtype=bool)
        pos_idx = np.zeros((b, l_max), dtype=np.int64)
        neg_idx = np.zeros((b, l_max), dtype=np.int64)
        tok_mask = np.zeros((b, l_max), dtype=bool)
        for i, s in enumerate(states):
            pg, ng = pos_graphs[i], neg_graphs[i]
            for t, (_, kind, eid) in enumerate(s.history):
                ent[i, t] = eid
                tok_mask[i, t] = True
                if kind == H_ACCEPT_VALUE:
                    acc_mask[i, t] = True
                    pos_idx[i, t] = pg.positions[eid]
                else:
                    neg_idx[i, t] = ng.positions[eid]

        dtype = self.dtype
        x = h_global[torch.from_numpy(ent)]                      # (b, L, d)
        flat_pos = out_pos.reshape(b * n_pos, d)
        flat_neg = out_neg.reshape(b * n_neg, d)
        rows = torch.arange(b).unsqueeze(1)
        y_pos = flat_pos[(rows * n_pos + torch.from_numpy(pos_idx)).reshape(-1)].view(b, l_max, d)
        y_neg = flat_neg[(rows * n_neg + torch.from_numpy(neg_idx)).reshape(-1)].view(b, l_max, d)
        is_acc = torch.from_numpy(acc_mask).unsqueeze(-1)
        y_raw = torch.where(is_acc, y_pos, y_neg)
        y = torch.where(
            is_acc,
            y_raw @ self.proj_acc_w.T + self.proj_acc_b,
            y_raw @ self.proj_rej_w.T + self.proj_rej_b,
        )

        xi = torch.sigmoid(x @ self.gate_w1.T + y @ self.gate_w2.T + self.gate_b)
        v = xi * x + (1.0 - xi) * y
        v = v + self.pos_emb[:l_max].unsqueeze(0)

        key_mask = torch.from_numpy(tok_mask)                    # (b, L)
        v = self._transformer(v, key_mask)
        counts = key_mask.to(dtype).sum(dim=1, keepdim=True)
        pooled = (v * key_mask.unsqueeze(-1).to(dtype)).sum(dim=1) / counts
        return pooled

    def _transformer(self, x: Tensor, key_mask: Tensor) -> Tensor:
        cfg = self.config
        b, length, d = x.shape
        heads = cfg.seq_heads
        dh = d // heads
        neg = x.new_tensor(float("-inf"))
        key = key_mask.view(b, 1, 1, length)
        for blk in self.seq_blocks:
            q = (x @ blk["wq"].T + blk["bq"]).view(b, length, heads, dh).transpose(1, 2)
            k = (x @ blk["wk"].T + blk["bk"]).view(b, length, heads, dh).transpose(1, 2)
            v = (x @ blk["wv"].T + blk["bv"]).view(b, length, heads, dh).transpose(1, 2)
            logits = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
            logits = torch.where(key, logits, neg)
            att = torch.softmax(logits, dim=-1)
            ctx = (att @ v).transpose(1, 2).reshape(b, length, d)
            ctx = ctx @ blk["wo"].T + blk["bo"]
            x = torch.nn.functional.layer_norm(
                x + ctx, (d,), weight=blk["ln1_g"], bias=blk["ln1_b"]
            )
            ff = torch.relu(x @ blk["ff_w1"].T + blk["ff_b1"]) @ blk["ff_w2"].T + blk["ff_b2"]
            x = torch.nn.functional.layer_norm(
                x + ff, (d,), weight=blk["ln2_g"], bias=blk["ln2_b"]
            )
        return x
