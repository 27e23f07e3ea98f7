"""Closed-form transformer inference cost model.

Counts the floating-point work of one forward pass split into the prefill
stage (full-context attention over `seq_in` tokens) and the autoregressive
decode stage (`seq_out - 1` single-token steps against a growing KV cache),
for a grouped-query architecture with a gated FFN. Every matmul contributes
2*M*N*K FLOPs; softmax/normalization overhead is ignored. The resulting
totals convert GPU throughput into a per-instance service rate and give the
storage footprint (weights + KV cache).

All counts are exact integers as long as inputs keep `hidden_dim` divisible
by `n_heads` and `ffn_multiplier * hidden_dim` integral, so float64 results
are bit-exact below 2**53.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LlmProfile:
    """Architecture and sequence-length description of one AI service.

    Attributes:
        hidden_dim: Transformer hidden width H.
        n_heads: Number of query heads d.
        n_kv_groups: Number of KV head groups g (grouped-query attention).
        ffn_multiplier: FFN expansion factor m (inner width = m * H).
        n_layers: Transformer layer count L.
        seq_in: Input (prompt) length in tokens.
        seq_out: Output length in tokens, including the token the prefill
            stage emits.
    """

    hidden_dim: int
    n_heads: int
    n_kv_groups: int
    ffn_multiplier: float
    n_layers: int
    seq_in: int
    seq_out: int

    def __post_init__(self):
        if min(self.hidden_dim, self.n_heads, self.n_kv_groups, self.n_layers, self.seq_in) < 1:
            raise ValueError("all profile dimensions must be positive")
        if self.seq_out < 1:
            raise ValueError("seq_out must be at least 1")
        if self.ffn_multiplier < 0:
            raise ValueError("ffn_multiplier must be non-negative")
        if self.n_heads % self.n_kv_groups != 0:
            raise ValueError("n_heads must be divisible by n_kv_groups")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if not float(self.ffn_multiplier * self.hidden_dim).is_integer():
            raise ValueError("ffn_multiplier * hidden_dim must be integral")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def kv_width(self) -> int:
        """Width of the K/V projections: n_kv_groups * head_dim."""
        return self.n_kv_groups * self.head_dim

    @property
    def ffn_dim(self) -> float:
        return self.ffn_multiplier * self.hidden_dim


@dataclass(frozen=True)
class GpuProfile:
    """Sustained throughput of a single GPU device, FLOP/s."""

    flops_per_second: float

    def __post_init__(self):
        if self.flops_per_second <= 0:
            raise ValueError("flops_per_second must be positive")


def _layer_coefficient(p: LlmProfile) -> float:
    # (2 + 2g/d + 3m) * H, written so every term is an exact integer:
    # 2g/d * H == 2 * g * head_dim, 3m * H == 3 * ffn_dim.
    return 2.0 * p.hidden_dim + 2.0 * p.n_kv_groups * p.head_dim + 3.0 * p.ffn_dim


def prefill_flops(p: LlmProfile) -> float:
    """FLOPs of one transformer layer over the full `seq_in` prompt.

    QKV projections cost 2*s*H^2 + 4*s*H*g*h, attention score/value matmuls
    4*s^2*H plus the output projection 2*s*H^2, and the three gated-FFN
    matmuls 6*m*s*H^2; the sum factors into
    2 * [(2 + 2g/d + 3m) * H + 2*s_in] * s_in * H.
    """
    s = p.seq_in
    return 2.0 * (_layer_coefficient(p) + 2.0 * s) * s * p.hidden_dim


def decode_flops(p: LlmProfile) -> float:
    """FLOPs of one transformer layer across all `seq_out - 1` decode steps.

    Generating token k+1 attends over a cache of length seq_in + k; summing
    k = 1 .. seq_out-1 gives
    2 * [(2 + 2g/d + 3m) * H + 2*s_in + s_out] * (s_out - 1) * H.
    The prefill stage emits the first output token, so seq_out == 1 costs 0.
    """
    return (
        2.0
        * (_layer_coefficient(p) + 2.0 * p.seq_in + p.seq_out)
        * (p.seq_out - 1)
        * p.hidden_dim
    )


def total_flops(p: LlmProfile) -> float:
    """Whole-model inference FLOPs: (prefill + decode) over all layers."""
    return (prefill_flops(p) + decode_flops(p)) * p.n_layers


def total_flops_merged(p: LlmProfile) -> float:
    """Algebraically merged form of `total_flops`; kept for identity checks."""
    s_in, s_out = p.seq_in, p.seq_out
    bracket = (
        _layer_coefficient(p) * (s_in + s_out - 1)
        + 2.0 * s_in * s_in
        + (2.0 * s_in + s_out) * (s_out - 1)
    )
    return 2.0 * bracket * p.hidden_dim * p.n_layers


def ai_service_rate(p: LlmProfile, gpu: GpuProfile) -> float:
    """Requests per second a single GPU sustains for this profile."""
    return gpu.flops_per_second / total_flops(p)


def ai_service_memory(p: LlmProfile, bytes_per_param: float = 2.0) -> float:
    """Storage demand in GB: model weights plus a full-length KV cache.

    weights = 2 * (2 + 2g/d + 3m) * H^2 * L and
    kv      = 4 * (seq_in + seq_out - 1) * (g/d) * H * L,
    each scaled by `bytes_per_param` and divided by 1e9.
    """
    m_w = 2.0 * _layer_coefficient(p) * p.hidden_dim * p.n_layers
    kv_c = 4.0 * (p.seq_in + p.seq_out - 1) * p.n_kv_groups * p.head_dim * p.n_layers
    return (m_w + kv_c) * bytes_per_param / 1e9
