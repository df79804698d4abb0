"""Desk-scale quantization and attention numerics.

Everything here is sized for laptop experiments: uniform affine weight
quantization at 4 and 8 bits, a reference scaled dot-product attention, and
a small content-addressed memory readout. Accumulation runs in float64 so
the round-trip error bound (half a quantization step) can be asserted
exactly in tests; public outputs are float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_BITS = (4, 8)


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus the affine range needed to decode them."""

    codes: np.ndarray  # uint8
    bits: int
    w_min: float
    w_max: float

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        if self.w_max == self.w_min:
            return 0.0
        return (self.w_max - self.w_min) / self.levels


def quantize(
    w: np.ndarray,
    bits: int,
    w_min: float | None = None,
    w_max: float | None = None,
) -> QuantizedTensor:
    """Uniform affine quantization onto ``2**bits - 1`` levels.

    With no overrides the range is taken from the tensor (dynamic mode).
    Passing ``w_min``/``w_max`` pins the grid (static mode); values outside
    the pinned range clip to its edges. A degenerate range maps everything
    to code zero.

    code = floor((w - w_min) * levels / (w_max - w_min) + 1/2)
    """
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    if (w_min is None) != (w_max is None):
        raise ValueError("w_min and w_max must be given together")
    arr = np.asarray(w, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")

    if w_min is None:
        lo = float(arr.min())
        hi = float(arr.max())
    else:
        lo = float(w_min)
        hi = float(w_max)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("static range must be finite")
        if hi < lo:
            raise ValueError("w_max must not be below w_min")
        arr = np.clip(arr, lo, hi)

    levels = (1 << bits) - 1
    if hi == lo:
        codes = np.zeros(arr.shape, dtype=np.uint8)
        return QuantizedTensor(codes=codes, bits=bits, w_min=lo, w_max=hi)

    scaled = (arr - lo) * (levels / (hi - lo))
    codes = np.floor(scaled + 0.5)
    np.clip(codes, 0, levels, out=codes)
    return QuantizedTensor(codes=codes.astype(np.uint8), bits=bits, w_min=lo, w_max=hi)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Decode back to float32 grid points."""
    decoded = q.w_min + q.codes.astype(np.float64) * q.step
    return decoded.astype(np.float32)


def half_step_bound(q: QuantizedTensor) -> float:
    """Worst-case absolute round-trip error for in-range inputs."""
    return q.step / 2.0


# ---------------------------------------------------------------------------
# Attention


@dataclass(frozen=True)
class AttentionParams:
    d_k: int
    d_v: int
    heads: int = 1
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.d_k < 1 or self.d_v < 1 or self.heads < 1:
            raise ValueError("dimensions and head count must be positive")
        if not (self.tau > 0.0):
            raise ValueError("tau must be positive")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stabilized softmax in float64."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, params: AttentionParams
) -> np.ndarray:
    """Scaled dot-product attention, temperature-adjusted.

    softmax(Q K^T / (tau * sqrt(d_k))) V, all internals float64.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("q, k, v must be 2-d")
    if q.shape[1] != params.d_k or k.shape[1] != params.d_k:
        raise ValueError("query/key width does not match d_k")
    if v.shape[1] != params.d_v or v.shape[0] != k.shape[0]:
        raise ValueError("value shape does not match keys/d_v")
    scores = (q @ k.T) / (params.tau * np.sqrt(float(params.d_k)))
    return softmax(scores, axis=-1) @ v


@dataclass(frozen=True)
class HeadWeights:
    """Per-head projections stacked on axis 0, plus the output projection."""

    w_q: np.ndarray  # (heads, d_model, d_k)
    w_k: np.ndarray  # (heads, d_model, d_k)
    w_v: np.ndarray  # (heads, d_model, d_v)
    w_o: np.ndarray  # (heads * d_v, d_model)


def multi_head_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    weights: HeadWeights,
    params: AttentionParams,
) -> np.ndarray:
    """Project per head, attend, concatenate, project out."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    heads = weights.w_q.shape[0]
    if heads != params.heads:
        raise ValueError("weight stack does not match head count")
    outputs = []
    for h in range(heads):
        outputs.append(
            attention(q @ weights.w_q[h], k @ weights.w_k[h], v @ weights.w_v[h], params)
        )
    concat = np.concatenate(outputs, axis=1)
    return concat @ np.asarray(weights.w_o, dtype=np.float64)


# ---------------------------------------------------------------------------
# Content-addressed memory readout


@dataclass(frozen=True)
class MemoryContext:
    """Retrieved memory slots and their relevance scores at one step.

    ``position`` maps signed slot offsets (slot index minus current step) to
    learned scalars; offsets beyond the table clamp to its edge. An empty
    table contributes nothing.
    """

    values: np.ndarray  # (n, d_h)
    scores: np.ndarray  # (n,)
    t: int
    indices: tuple[int, ...]
    position: dict[int, float]


def _position_offset(ctx: MemoryContext, slot_index: int) -> float:
    if not ctx.position:
        return 0.0
    offset = slot_index - ctx.t
    lo = min(ctx.position)
    hi = max(ctx.position)
    clamped = min(max(offset, lo), hi)
    if clamped in ctx.position:
        return ctx.position[clamped]
    # Sparse table: fall back to the nearest defined offset.
    nearest = min(ctx.position, key=lambda k: (abs(k - clamped), k))
    return ctx.position[nearest]


def neural_memory_forward(ctx: MemoryContext) -> np.ndarray:
    """Softmax-weighted readout with positional offsets.

    y = sum_c softmax(s / sqrt(d_h))_c * (V_c + p(t, c))
    """
    values = np.asarray(ctx.values, dtype=np.float64)
    scores = np.asarray(ctx.scores, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ValueError("memory context must hold at least one slot")
    if scores.shape != (values.shape[0],):
        raise ValueError("scores must align with slots")
    if len(ctx.indices) != values.shape[0]:
        raise ValueError("indices must align with slots")
    d_h = values.shape[1]
    weights = softmax(scores / np.sqrt(float(d_h)), axis=-1)
    offsets = np.array(
        [_position_offset(ctx, idx) for idx in ctx.indices], dtype=np.float64
    )
    y = (weights[:, None] * (values + offsets[:, None])).sum(axis=0)
    return y.astype(np.float32)


# ---------------------------------------------------------------------------
# Error reporting


@dataclass(frozen=True)
class BitsErrors:
    bits: int
    max_abs_error: float
    half_step_bound: float
    rel_frobenius: float
    attention_cosine: float | None


@dataclass(frozen=True)
class ErrorReport:
    mode: str  # "dynamic" | "static"
    shape: tuple[int, ...]
    entries: tuple[BitsErrors, ...]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(a @ b / (na * nb))


def quant_error_report(
    w: np.ndarray,
    bits: tuple[int, ...] = SUPPORTED_BITS,
    probe: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    w_min: float | None = None,
    w_max: float | None = None,
) -> ErrorReport:
    """Round-trip error summary at each bit width.

    When ``probe`` supplies (q, k, v), the tensor is treated as a key
    projection and the report adds the cosine between attention outputs
    computed with exact and with dequantized weights.
    """
    arr = np.asarray(w, dtype=np.float64)
    entries = []
    for b in bits:
        qt = quantize(arr, b, w_min=w_min, w_max=w_max)
        decoded = dequantize(qt).astype(np.float64)
        reference = np.clip(arr, qt.w_min, qt.w_max) if w_min is not None else arr
        err = np.abs(decoded - reference)
        denom = np.linalg.norm(reference)
        rel = float(np.linalg.norm(decoded - reference) / denom) if denom else 0.0
        cosine = None
        if probe is not None:
            q, k, v = probe
            params = AttentionParams(d_k=arr.shape[1], d_v=np.asarray(v).shape[1])
            exact = attention(np.asarray(q) @ arr, k, v, params)
            approx = attention(np.asarray(q) @ decoded, k, v, params)
            cosine = _cosine(exact, approx)
        entries.append(
            BitsErrors(
                bits=b,
                max_abs_error=float(err.max()),
                half_step_bound=half_step_bound(qt),
                rel_frobenius=rel,
                attention_cosine=cosine,
            )
        )
    return ErrorReport(
        mode="static" if w_min is not None else "dynamic",
        shape=tuple(arr.shape),
        entries=tuple(entries),
    )
