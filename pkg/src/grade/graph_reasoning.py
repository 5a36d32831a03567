"""Graph attention over the dialogue graph and mean-pooled readout."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class GATLayer(nn.Module):
    """One aggregation + combination step.

    Heads split the ``dim`` features into equal chunks; each head attends on
    its own chunk and the chunks are concatenated back before the ELU
    combination with ``V @ h``. Attention logits are scaled by the
    normalized adjacency before the softmax.
    """

    def __init__(self, dim: int = 300, heads: int = 4, leaky_slope: float = 0.2):
        super().__init__()
        if dim % heads:
            raise ValueError(f"heads={heads} does not divide dim={dim}")
        self.dim, self.heads, self.leaky_slope = dim, heads, leaky_slope
        self.W = nn.Parameter(torch.empty(dim, dim))
        self.a = nn.Parameter(torch.empty(2 * dim))
        self.V = nn.Parameter(torch.empty(dim, dim))
        nn.init.xavier_uniform_(self.W)
        nn.init.xavier_uniform_(self.V)
        nn.init.uniform_(self.a, -(3.0 / dim) ** 0.5, (3.0 / dim) ** 0.5)

    def attention(self, h, adj_norm, active):
        """Return (alpha, Wh): alpha is (heads, n, n), zero outside ``active``."""
        n = h.shape[0]
        if h.shape[1] != self.dim:
            raise ValueError(f"node features have dim {h.shape[1]}, layer expects {self.dim}")
        if adj_norm.shape != (n, n) or active.shape != (n, n):
            raise ValueError("adjacency shape does not match node count")
        d_head = self.dim // self.heads
        Wh = (h @ self.W.T).view(n, self.heads, d_head)
        src = (Wh * self.a[: self.dim].view(self.heads, d_head)).sum(-1)
        dst = (Wh * self.a[self.dim :].view(self.heads, d_head)).sum(-1)
        raw = F.leaky_relu(src[:, None, :] + dst[None, :, :], self.leaky_slope)
        e = adj_norm[:, :, None] * raw
        mask = active[:, :, None]
        has_any = active.any(dim=1)[:, None, None]
        e = torch.where(mask, e, torch.full_like(e, float("-inf")))
        # rows with no neighbor would be all -inf; park them at 0 and mask after
        e = torch.where(has_any, e, torch.zeros_like(e))
        alpha = torch.softmax(e, dim=1) * mask
        return alpha.permute(2, 0, 1), Wh

    def forward(self, h, adj_norm, active):
        alpha, Wh = self.attention(h, adj_norm, active)
        z = torch.einsum("hij,jhd->ihd", alpha, Wh).reshape(h.shape[0], self.dim)
        return F.elu(h @ self.V.T + z)


def attention_coefficients(h, adj_norm, layer: GATLayer, active):
    return layer.attention(h, adj_norm, active)[0]


def gat_layer(h, adj_norm, layer: GATLayer, active):
    return layer(h, adj_norm, active)


class GraphHead(nn.Module):
    def __init__(self, dim: int = 300, num_layers: int = 3, heads: int = 4, leaky_slope: float = 0.2):
        super().__init__()
        if num_layers < 1:
            raise ValueError("need at least one GAT layer")
        self.dim = dim
        self.layers = nn.ModuleList(GATLayer(dim, heads, leaky_slope) for _ in range(num_layers))
        self.pool_fc = nn.Linear(dim, dim)
        # stands in for the graph vector when a side has no keywords
        self.empty_graph = nn.Parameter(torch.zeros(dim))

    def node_states(self, h, adj_norm, active):
        for layer in self.layers:
            h = layer(h, adj_norm, active)
        return h

    def pool(self, h):
        return F.elu(self.pool_fc(h.mean(dim=0)))

    def forward(self, h, adj_norm, active):
        return self.pool(self.node_states(h, adj_norm, active))


def pool_graph(h, head: GraphHead):
    return head.pool(h)
