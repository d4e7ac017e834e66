"""Forward-only DynamicSSM block on small feature maps.

Tensors are ``(batch, channel, width, height)``. The width axis is the panorama's
horizontal axis, so spatial filters pad it circularly; the height axis is
zero-padded.

Pipeline on one map ``x``:

    d = conv(x; distortion)          s = sigmoid(conv(x; scale))
    m = d * s
    D = sum_k softmax_k(route(pool(m))) * conv(x; kernel_k)     # dynamic convolution
    D* = mean over scan directions of the per-channel recurrence
         h_t = a h_{t-1} + b u_t,  y_t = c h_t
    F = fuse(conv(x; residual) + D*)                              # 1x1 channel mixing
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

SCAN_ORDERS = {
    1: ("forward",),
    2: ("forward", "backward"),
    4: ("forward", "backward", "vertical_forward", "vertical_backward"),
}


def _check_map(x: np.ndarray, name: str = "feature map") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"{name} must have four non-empty axes (B, C, W, H), got {x.shape}")
    return x


def _same_shape(*maps: np.ndarray) -> None:
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so that exp never overflows and the result stays inside (0, 1)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    # beyond |x| ~ 37 the exact value rounds onto a bound; keep the interval open
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """'Same' convolution (cross-correlation) with an odd square kernel ``(C_out, C_in, k, k)``."""
    x = _check_map(x)
    weight = np.asarray(weight, dtype=float)
    c_out, c_in, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got {k}x{k2}")
    if c_in != x.shape[1]:
        raise ValueError(f"kernel expects {c_in} channels, input has {x.shape[1]}")
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (0, 0)), mode="wrap")
    xp = np.pad(xp, ((0, 0), (0, 0), (0, 0), (r, r)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, W, H, k, k
    out = np.einsum("bcxyuv,ocuv->boxy", win, weight)
    if bias is not None:
        out = out + np.asarray(bias, dtype=float)[None, :, None, None]
    return out


def _identity_kernel(C: int, k: int) -> np.ndarray:
    w = np.zeros((C, C, k, k))
    w[np.arange(C), np.arange(C), k // 2, k // 2] = 1.0
    return w


@dataclass
class DssmParams:
    distortion_kernel: np.ndarray
    distortion_bias: np.ndarray
    scale_kernel: np.ndarray
    scale_bias: np.ndarray
    dyn_kernels: np.ndarray  # (K, C, C, k, k) candidate kernels
    dyn_bias: np.ndarray  # (K, C)
    router_weight: np.ndarray  # (K, C)
    router_bias: np.ndarray  # (K,)
    ssm_a: np.ndarray  # (C,)
    ssm_b: np.ndarray
    ssm_c: np.ndarray
    residual_kernel: np.ndarray
    residual_bias: np.ndarray
    fusion_weight: np.ndarray  # (C, C), 1x1 convolution
    fusion_bias: np.ndarray
    n_scans: int = 4
    pool_size: int = 3

    def __post_init__(self):
        for f in fields(self):
            if f.name not in ("n_scans", "pool_size"):
                setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=float))
        if self.n_scans not in SCAN_ORDERS:
            raise ValueError(f"n_scans must be one of {sorted(SCAN_ORDERS)}, got {self.n_scans}")
        C = self.channels
        for name in ("distortion_kernel", "scale_kernel", "residual_kernel"):
            if getattr(self, name).shape[:2] != (C, C):
                raise ValueError(f"{name} must be ({C}, {C}, k, k)")
        if self.dyn_kernels.ndim != 5 or self.dyn_kernels.shape[1:3] != (C, C):
            raise ValueError(f"dyn_kernels must be (K, {C}, {C}, k, k)")
        K = self.dyn_kernels.shape[0]
        if self.router_weight.shape != (K, C) or self.router_bias.shape != (K,):
            raise ValueError("router shapes inconsistent with dyn_kernels")
        if self.dyn_bias.shape != (K, C):
            raise ValueError("dyn_bias must be (K, C)")
        for name in ("ssm_a", "ssm_b", "ssm_c", "distortion_bias", "scale_bias", "residual_bias", "fusion_bias"):
            if getattr(self, name).shape != (C,):
                raise ValueError(f"{name} must have shape ({C},)")
        if self.fusion_weight.shape != (C, C):
            raise ValueError(f"fusion_weight must be ({C}, {C})")
        if self.pool_size < 1:
            raise ValueError("pool_size must be positive")

    @property
    def channels(self) -> int:
        return self.distortion_kernel.shape[0]

    @classmethod
    def identity(cls, C: int, k: int = 3, n_kernels: int = 2, n_scans: int = 4) -> "DssmParams":
        """Parameters under which the whole block is the identity map (the scan output is zeroed)."""
        def z():
            return np.zeros(C)

        return cls(
            distortion_kernel=_identity_kernel(C, k),
            distortion_bias=z(),
            scale_kernel=np.zeros((C, C, k, k)),
            scale_bias=z(),
            dyn_kernels=np.stack([_identity_kernel(C, k)] * n_kernels),
            dyn_bias=np.zeros((n_kernels, C)),
            router_weight=np.zeros((n_kernels, C)),
            router_bias=np.zeros(n_kernels),
            ssm_a=z(),
            ssm_b=np.ones(C),
            ssm_c=z(),
            residual_kernel=_identity_kernel(C, k),
            residual_bias=z(),
            fusion_weight=np.eye(C),
            fusion_bias=z(),
            n_scans=n_scans,
        )

    @classmethod
    def random(
        cls, C: int, seed: int = 0, k: int = 3, n_kernels: int = 2, n_scans: int = 4, scale: float = 0.3
    ) -> "DssmParams":
        rng = np.random.default_rng(seed)

        def n(*shape):
            return scale * rng.standard_normal(shape)

        return cls(
            distortion_kernel=n(C, C, k, k),
            distortion_bias=n(C),
            scale_kernel=n(C, C, k, k),
            scale_bias=n(C),
            dyn_kernels=n(n_kernels, C, C, k, k),
            dyn_bias=n(n_kernels, C),
            router_weight=n(n_kernels, C),
            router_bias=n(n_kernels),
            ssm_a=rng.uniform(-0.9, 0.9, C),
            ssm_b=n(C) + 1.0,
            ssm_c=n(C) + 1.0,
            residual_kernel=n(C, C, k, k),
            residual_bias=n(C),
            fusion_weight=np.eye(C) + n(C, C),
            fusion_bias=n(C),
            n_scans=n_scans,
        )

    def save(self, path: str | Path) -> None:
        """Store as ``.npz``: one array per field, names as in this class."""
        arrays = {f.name: np.asarray(getattr(self, f.name)) for f in fields(self)}
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "DssmParams":
        with np.load(path) as z:
            kw = {f.name: z[f.name] for f in fields(cls)}
        kw["n_scans"] = int(kw["n_scans"])
        kw["pool_size"] = int(kw["pool_size"])
        return cls(**kw)


def distortion_scale(s4: np.ndarray, p: DssmParams) -> tuple[np.ndarray, np.ndarray]:
    s4 = _check_map(s4, "S4")
    if s4.shape[1] != p.channels:
        raise ValueError(f"expected {p.channels} channels, got {s4.shape[1]}")
    d = conv2d(s4, p.distortion_kernel, p.distortion_bias)
    s = sigmoid(conv2d(s4, p.scale_kernel, p.scale_bias))
    return d, s


def mixing_weights(m: np.ndarray, p: DssmParams) -> np.ndarray:
    """Per-position softmax weights over the candidate kernels, shape ``(B, K, W, H)``."""
    size = (1, 1, p.pool_size, p.pool_size)
    pooled = uniform_filter(m, size=size, mode=("constant", "constant", "wrap", "nearest"))
    logits = np.einsum("kc,bcxy->bkxy", p.router_weight, pooled)
    logits = logits + p.router_bias[None, :, None, None]
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def mitigate_distortion(d: np.ndarray, s: np.ndarray, s4: np.ndarray, p: DssmParams) -> np.ndarray:
    d, s, s4 = _check_map(d, "d"), _check_map(s, "s"), _check_map(s4, "S4")
    _same_shape(d, s, s4)
    weights = mixing_weights(d * s, p)
    out = np.zeros_like(s4)
    for k in range(p.dyn_kernels.shape[0]):
        out += weights[:, k : k + 1] * conv2d(s4, p.dyn_kernels[k], p.dyn_bias[k])
    return out


def _scan_sequence(D: np.ndarray, direction: str) -> np.ndarray:
    # (B, C, W, H) -> (B, C, L) in scan order
    B, C, W, H = D.shape
    if direction in ("forward", "backward"):
        seq = D.transpose(0, 1, 3, 2).reshape(B, C, W * H)  # rows of constant y, x fastest
    else:
        seq = D.reshape(B, C, W * H)  # columns of constant x, y fastest
    if direction.endswith("backward"):
        seq = seq[..., ::-1]
    return seq


def _unscan(seq: np.ndarray, direction: str, shape) -> np.ndarray:
    B, C, W, H = shape
    if direction.endswith("backward"):
        seq = seq[..., ::-1]
    if direction in ("forward", "backward"):
        return seq.reshape(B, C, H, W).transpose(0, 1, 3, 2)
    return seq.reshape(B, C, W, H)


def recurrence(u: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``h_t = a h_{t-1} + b u_t``, ``y_t = c h_t``, ``h_0 = 0``, along the last axis.

    ``a``, ``b``, ``c`` broadcast against ``u[..., t]`` (per-channel coefficients).
    """
    h = np.zeros(u.shape[:-1])
    y = np.empty_like(u)
    for t in range(u.shape[-1]):
        h = a * h + b * u[..., t]
        y[..., t] = c * h
    return y


def ssm_scan(D: np.ndarray, p: DssmParams) -> np.ndarray:
    D = _check_map(D, "D")
    if p.n_scans not in SCAN_ORDERS:
        raise ValueError(f"unsupported number of scans: {p.n_scans}")
    a = p.ssm_a[None, :]
    b = p.ssm_b[None, :]
    c = p.ssm_c[None, :]
    out = np.zeros_like(D)
    dirs = SCAN_ORDERS[p.n_scans]
    for direction in dirs:
        y = recurrence(_scan_sequence(D, direction), a, b, c)
        out += _unscan(y, direction, D.shape)
    return out / len(dirs)


def fuse(s4: np.ndarray, d_star: np.ndarray, p: DssmParams) -> np.ndarray:
    s4, d_star = _check_map(s4, "S4"), _check_map(d_star, "D*")
    _same_shape(s4, d_star)
    r = conv2d(s4, p.residual_kernel, p.residual_bias) + d_star
    return np.einsum("oc,bcxy->boxy", p.fusion_weight, r) + p.fusion_bias[None, :, None, None]


def dynamic_ssm(x: np.ndarray, p: DssmParams) -> np.ndarray:
    d, s = distortion_scale(x, p)
    D = mitigate_distortion(d, s, x, p)
    return fuse(x, ssm_scan(D, p), p)


@dataclass
class CsemParams:
    dssm: DssmParams
    # plain per-level convolution: level -> (weight, bias)
    plain: dict = field(default_factory=dict)
    dssm_levels: tuple = ("s4",)

    @classmethod
    def identity(cls, C: int, k: int = 3) -> "CsemParams":
        plain = {lvl: (_identity_kernel(C, k), np.zeros(C)) for lvl in ("s3", "s4", "s5")}
        return cls(DssmParams.identity(C, k), plain)


def csem_forward(s3, s4, s5, p: CsemParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Process the three scales; levels listed in ``p.dssm_levels`` go through the DynamicSSM block."""
    maps = {"s3": _check_map(s3, "S3"), "s4": _check_map(s4, "S4"), "s5": _check_map(s5, "S5")}
    channels = {m.shape[1] for m in maps.values()}
    if len(channels) != 1:
        raise ValueError(f"all scales must share the channel count, got {sorted(channels)}")
    unknown = set(p.dssm_levels) - maps.keys()
    if unknown:
        raise ValueError(f"unknown levels {sorted(unknown)}")
    out = []
    for lvl in ("s3", "s4", "s5"):
        if lvl in p.dssm_levels:
            out.append(dynamic_ssm(maps[lvl], p.dssm))
        else:
            w, b = p.plain[lvl]
            out.append(conv2d(maps[lvl], w, b))
    return tuple(out)


def check_invariants(seed: int = 0, channels: int = 3, width: int = 6, height: int = 5) -> list[tuple[str, bool, str]]:
    """Run the block's invariants on random maps; returns ``(name, passed, detail)`` rows."""
    rng = np.random.default_rng(seed)
    p = DssmParams.random(channels, seed=seed)
    x = rng.standard_normal((2, channels, width, height))
    rows = []

    d, s = distortion_scale(x, p)
    D = mitigate_distortion(d, s, x, p)
    Ds = ssm_scan(D, p)
    F = fuse(x, Ds, p)
    shapes = {a.shape for a in (d, s, D, Ds, F)}
    rows.append(("shape_preserved", shapes == {x.shape}, str(sorted(shapes))))
    rows.append(("sigmoid_range", bool(np.all((s > 0) & (s < 1))), f"min={s.min():.3g} max={s.max():.3g}"))

    u, v = rng.standard_normal((2,) + x.shape)
    al, be = rng.standard_normal(2)
    err = np.abs(ssm_scan(al * u + be * v, p) - (al * ssm_scan(u, p) + be * ssm_scan(v, p))).max()
    rows.append(("scan_linearity", err <= 1e-10, f"max_err={err:.3g}"))

    y = recurrence(np.array([1.0, 0.0, 0.0]), 0.5, 1.0, 1.0)
    rows.append(("unrolled_recurrence", bool(np.allclose(y, [1.0, 0.5, 0.25], rtol=0, atol=1e-15)), str(y)))

    a, b, c, uu = 0.8, 0.7, 1.3, 2.0
    tail = recurrence(np.full(200, uu), a, b, c)[-1]
    steady = c * b * uu / (1 - a)
    rows.append(("steady_state", abs(tail - steady) <= 1e-6, f"{tail} vs {steady}"))

    F2 = fuse(x, ssm_scan(mitigate_distortion(*distortion_scale(x, p), x, p), p), p)
    rows.append(("deterministic", bool(np.array_equal(F, F2)), ""))
    return rows
