"""Forward kernels for the network layers.

Complex tensors are carried as (re, im) pairs of real arrays.  A complex
convolution with kernel K = Kr + j*Ki applied to W = Wr + j*Wi is

    H = (Kr*Wr - Ki*Wi) + j(Kr*Wi + Ki*Wr)

where * is a real cross-correlation.  All kernels accept either plain numpy
arrays or autodiff Vars and return Vars, so the same code path serves
inference and training.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, as_var, concat, lstm_cell, stack


@dataclass
class ComplexPair:
    re: object
    im: object

    def __post_init__(self):
        self.re = as_var(self.re)
        self.im = as_var(self.im)
        if self.re.shape != self.im.shape:
            raise ValueError("re/im shape mismatch")

    @property
    def shape(self):
        return self.re.shape

    def data(self):
        return self.re.data, self.im.data


@dataclass
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel_f: int
    kernel_t: int = 1
    stride_f: int = 1
    stride_t: int = 1
    pad_f: int = 0
    pad_t: int = 0
    transposed: bool = False

    def __post_init__(self):
        for name in ("in_ch", "out_ch", "kernel_f", "kernel_t", "stride_f", "stride_t"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.pad_f < 0 or self.pad_t < 0:
            raise ValueError("padding must be non-negative")

    def f_out(self, f_in):
        if self.transposed:
            return (f_in - 1) * self.stride_f + self.kernel_f - 2 * self.pad_f
        return (f_in + 2 * self.pad_f - self.kernel_f) // self.stride_f + 1

    def t_out(self, t_in):
        if self.transposed:
            return (t_in - 1) * self.stride_t + self.kernel_t - 2 * self.pad_t
        return (t_in + 2 * self.pad_t - self.kernel_t) // self.stride_t + 1


def _corr2d(x, k, spec):
    """Real cross-correlation: x (C_in, T, F), k (C_out, C_in, kt, kf)."""
    c_in, t_in, f_in = x.shape
    t_out = spec.t_out(t_in)
    f_out = spec.f_out(f_in)
    if f_out < 1 or t_out < 1:
        raise ValueError("output extent < 1")
    xp = x.pad(((0, 0), (spec.pad_t, spec.pad_t), (spec.pad_f, spec.pad_f)))
    out = None
    for dt in range(spec.kernel_t):
        for df in range(spec.kernel_f):
            xs = xp[:,
                    dt:dt + spec.stride_t * t_out:spec.stride_t,
                    df:df + spec.stride_f * f_out:spec.stride_f]
            kt = k[:, :, dt, df].contiguous()  # (C_out, C_in)
            contrib = (kt @ xs.reshape(c_in, t_out * f_out)).reshape(
                spec.out_ch, t_out, f_out)
            out = contrib if out is None else out + contrib
    return out


def _tcorr2d(x, k, spec):
    """Transposed counterpart of _corr2d (adjoint w.r.t. the input)."""
    c_in, t_in, f_in = x.shape
    t_out = spec.t_out(t_in)
    f_out = spec.f_out(f_in)
    if f_out < 1 or t_out < 1:
        raise ValueError("output extent < 1")
    full_t = (t_in - 1) * spec.stride_t + spec.kernel_t
    full_f = (f_in - 1) * spec.stride_f + spec.kernel_f
    xd = x.dilate(1, spec.stride_t).dilate(2, spec.stride_f)
    out = None
    for dt in range(spec.kernel_t):
        for df in range(spec.kernel_f):
            kt = k[:, :, dt, df].contiguous()  # (C_out, C_in), transposed output rows
            contrib = (kt @ xd.reshape(c_in, -1)).reshape(
                spec.out_ch, xd.shape[1], xd.shape[2])
            contrib = contrib.pad(((0, 0),
                                   (dt, full_t - dt - xd.shape[1]),
                                   (df, full_f - df - xd.shape[2])))
            out = contrib if out is None else out + contrib
    # crop the configured padding
    return out[:, spec.pad_t:full_t - spec.pad_t, spec.pad_f:full_f - spec.pad_f]


def _check_kernel(k_pair, spec):
    expect = (spec.out_ch, spec.in_ch, spec.kernel_t, spec.kernel_f)
    if tuple(k_pair.shape) != expect:
        raise ValueError(f"kernel shape {k_pair.shape} != {expect}")


def complex_conv2d(w: ComplexPair, k: ComplexPair, spec: ConvSpec) -> ComplexPair:
    """Complex 2-D cross-correlation over (time, frequency)."""
    if spec.transposed:
        raise ValueError("spec marked transposed; use complex_deconv2d")
    _check_kernel(k, spec)
    if w.shape[0] != spec.in_ch:
        raise ValueError("input channel mismatch")
    re = _corr2d(w.re, k.re, spec) - _corr2d(w.im, k.im, spec)
    im = _corr2d(w.im, k.re, spec) + _corr2d(w.re, k.im, spec)
    return ComplexPair(re, im)


def complex_deconv2d(w: ComplexPair, k: ComplexPair, spec: ConvSpec) -> ComplexPair:
    """Complex transposed convolution (adjoint of complex_conv2d)."""
    if not spec.transposed:
        raise ValueError("spec not marked transposed")
    _check_kernel(k, spec)
    if w.shape[0] != spec.in_ch:
        raise ValueError("input channel mismatch")
    re = _tcorr2d(w.re, k.re, spec) - _tcorr2d(w.im, k.im, spec)
    im = _tcorr2d(w.im, k.re, spec) + _tcorr2d(w.re, k.im, spec)
    return ComplexPair(re, im)


@dataclass
class LstmSpec:
    """LSTM dimensions plus gate weights, gate order (input, forget, cell, output).

    weights maps: w_ih (4H, I), w_hh (4H, H), b_ih (4H,), b_hh (4H,) and, when
    bidirectional, the same names with a "_rev" suffix.
    """

    input_dim: int
    hidden_dim: int
    bidirectional: bool = False
    weights: dict = field(default_factory=dict)

    def validate(self):
        names = ["w_ih", "w_hh", "b_ih", "b_hh"]
        if self.bidirectional:
            names += [n + "_rev" for n in names[:4]]
        h, i = self.hidden_dim, self.input_dim
        shapes = {"w_ih": (4 * h, i), "w_hh": (4 * h, h), "b_ih": (4 * h,), "b_hh": (4 * h,)}
        for n in names:
            base = n[:-4] if n.endswith("_rev") else n
            w = self.weights[n]
            got = w.shape if not isinstance(w, Var) else w.data.shape
            if tuple(got) != shapes[base]:
                raise ValueError(f"{n}: shape {got} != {shapes[base]}")

    @property
    def out_dim(self):
        return self.hidden_dim * (2 if self.bidirectional else 1)


def _lstm_direction(x, w_ih, w_hh, b_ih, b_hh, state, hidden):
    """Run one direction of the recurrence.

    x: Var (S, B, I).  Returns (y (S, B, H), (h, c)) with h, c shaped (B, H).
    """
    s, b, i = x.shape
    w_ih, w_hh = as_var(w_ih), as_var(w_hh)
    b_ih, b_hh = as_var(b_ih), as_var(b_hh)
    if state is None:
        h = as_var(np.zeros((b, hidden), dtype=x.data.dtype))
        c = as_var(np.zeros((b, hidden), dtype=x.data.dtype))
    else:
        h, c = as_var(state[0]), as_var(state[1])
    gx = (x.reshape(s * b, i) @ w_ih.transpose(1, 0).contiguous()
          + (b_ih + b_hh)).reshape(s, b, 4 * hidden)
    whh_t = w_hh.transpose(1, 0).contiguous()
    ys = []
    hd = hidden
    for t in range(s):
        g = gx[t] + h @ whh_t
        hc = lstm_cell(g, c, hd)
        h = hc[:, :hd].contiguous()
        c = hc[:, hd:].contiguous()
        ys.append(h)
    return stack(ys, 0), (h, c)


def lstm_seq(x, spec: LstmSpec, state=None):
    """Batched LSTM over x (S, B, I).

    Unidirectional: returns (y (S, B, H), (h, c)).  Bidirectional: full
    sequence only, returns (y (S, B, 2H), None); `state` must be None.
    """
    w = spec.weights
    if spec.bidirectional:
        if state is not None:
            raise ValueError("bidirectional LSTM has no streaming state")
        y_f, _ = _lstm_direction(x, w["w_ih"], w["w_hh"], w["b_ih"], w["b_hh"],
                                 None, spec.hidden_dim)
        y_b, _ = _lstm_direction(x[::-1], w["w_ih_rev"], w["w_hh_rev"],
                                 w["b_ih_rev"], w["b_hh_rev"], None, spec.hidden_dim)
        return concat([y_f, y_b[::-1]], axis=2), None
    return _lstm_direction(x, w["w_ih"], w["w_hh"], w["b_ih"], w["b_hh"],
                           state, spec.hidden_dim)


def lstm_forward(x, spec: LstmSpec, state=None):
    """LSTM over a single sequence x (S, input_dim); returns (y, state')."""
    xv = as_var(x)
    s, i = xv.shape
    if i != spec.input_dim:
        raise ValueError(f"input dim {i} != {spec.input_dim}")
    if state is not None:
        state = (as_var(state[0]).reshape(1, -1), as_var(state[1]).reshape(1, -1))
    y, st = lstm_seq(xv.reshape(s, 1, i), spec, state)
    y = y.reshape(s, spec.out_dim)
    if st is not None:
        st = (st[0].reshape(spec.hidden_dim), st[1].reshape(spec.hidden_dim))
    return y, st


def linear(x, w, b):
    """x (..., I) @ w.T + b with w (O, I)."""
    xv = as_var(x)
    lead = xv.shape[:-1]
    i = xv.shape[-1]
    n = int(np.prod(lead)) if lead else 1
    y = xv.reshape(n, i) @ as_var(w).transpose(1, 0).contiguous() + as_var(b)
    return y.reshape(*lead, as_var(w).shape[0])


def complex_linear(pair: ComplexPair, pr, pi, br, bi) -> ComplexPair:
    """Complex dense layer: (re + j im) @ (Pr + j Pi)^T + (br + j bi)."""
    re = linear(pair.re, pr, br) - linear(pair.im, pi, np.zeros_like(as_var(bi).data))
    im = linear(pair.im, pr, bi) + linear(pair.re, pi, np.zeros_like(as_var(br).data))
    return ComplexPair(re, im)


@dataclass
class FtLstmParams:
    """Per-part (real or imaginary) parameters of the F-T-LSTM block."""

    f_spec: LstmSpec   # bidirectional, scans frequency
    t_spec: LstmSpec   # unidirectional, scans time
    proj_f_w: object   # (C, 2H)
    proj_f_b: object   # (C,)
    proj_t_w: object   # (C, H)
    proj_t_b: object   # (C,)


def _ft_lstm_part(x, p: FtLstmParams, t_state=None):
    """One branch of the block; x Var (C, F, T); returns (out, t_state')."""
    c, f, t = x.shape
    # F-stage: bidirectional along frequency, each frame independent.
    xf = x.transpose(1, 2, 0)               # (F, T, C): seq F, batch T
    u, _ = lstm_seq(xf, p.f_spec)           # (F, T, 2H)
    u = linear(u, p.proj_f_w, p.proj_f_b)   # (F, T, C)
    v = x + u.transpose(2, 0, 1)            # residual, (C, F, T)
    # T-stage: unidirectional along time, each frequency independent.
    vt = v.transpose(2, 1, 0)               # (T, F, C): seq T, batch F
    z, t_state = lstm_seq(vt, p.t_spec, t_state)  # (T, F, H)
    z = linear(z, p.proj_t_w, p.proj_t_b)   # (T, F, C)
    out = v + z.transpose(2, 1, 0)
    return out, t_state


def ft_lstm_block(h: ComplexPair, params_re: FtLstmParams, params_im: FtLstmParams,
                  t_states=None):
    """Frequency-then-time recurrence with residual adds, separate per part.

    h: (C, F, T).  t_states carries the two time-LSTM states for streaming.
    """
    st_re, st_im = t_states if t_states is not None else (None, None)
    out_re, st_re = _ft_lstm_part(h.re, params_re, st_re)
    out_im, st_im = _ft_lstm_part(h.im, params_im, st_im)
    return ComplexPair(out_re, out_im), (st_re, st_im)


@dataclass
class ComplexLstmParams:
    spec_r: LstmSpec
    spec_i: LstmSpec
    proj_pr: object  # (D, H)
    proj_pi: object
    proj_br: object  # (D,)
    proj_bi: object


def complex_lstm(x: ComplexPair, p: ComplexLstmParams, states=None):
    """One complex LSTM layer over x (T, D) with complex dense projection.

    out_re = L_r(re) - L_i(im); out_im = L_r(im) + L_i(re).  states is a
    4-tuple of (h, c) pairs: (r on re, r on im, i on re, i on im).
    """
    s = states if states is not None else (None, None, None, None)
    tlen, d = x.shape
    xr = x.re.reshape(tlen, 1, d)
    xi = x.im.reshape(tlen, 1, d)
    rr, s0 = lstm_seq(xr, p.spec_r, s[0])
    ri, s1 = lstm_seq(xi, p.spec_r, s[1])
    ir, s2 = lstm_seq(xr, p.spec_i, s[2])
    ii, s3 = lstm_seq(xi, p.spec_i, s[3])
    h = p.spec_r.hidden_dim
    pair = ComplexPair((rr - ii).reshape(tlen, h), (ri + ir).reshape(tlen, h))
    out = complex_linear(pair, p.proj_pr, p.proj_pi, p.proj_br, p.proj_bi)
    return out, (s0, s1, s2, s3)


def deep_filter_apply(coef: ComplexPair, target: ComplexPair) -> ComplexPair:
    """Apply a 3x3 complex filter per T-F bin with one frame of lookahead.

    coef: (9, T, F) with channel 3*(i+1) + (j+1) holding the tap for
    frequency offset i and time offset j, i, j in {-1, 0, +1}.  target:
    (1, T, F).  Out-of-range neighbours read as zero.
    """
    if coef.shape[0] != 9:
        raise ValueError("deep filter needs 9 coefficient channels")
    if target.shape[0] != 1 or coef.shape[1:] != target.shape[1:]:
        raise ValueError("coef/target shape mismatch")
    _, t, f = coef.shape
    tp_re = target.re.pad(((0, 0), (1, 1), (1, 1)))
    tp_im = target.im.pad(((0, 0), (1, 1), (1, 1)))
    out_re = None
    out_im = None
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            ch = 3 * (i + 1) + (j + 1)
            sr = tp_re[0, 1 + j:1 + j + t, 1 + i:1 + i + f]
            si = tp_im[0, 1 + j:1 + j + t, 1 + i:1 + i + f]
            cr = coef.re[ch]
            ci = coef.im[ch]
            re = cr * sr - ci * si
            im = cr * si + ci * sr
            out_re = re if out_re is None else out_re + re
            out_im = im if out_im is None else out_im + im
    return ComplexPair(out_re.reshape(1, t, f), out_im.reshape(1, t, f))


def prelu(x, alpha):
    """PReLU with per-channel slope alpha (broadcast against x)."""
    xv = as_var(x)
    mask = (xv.data >= 0).astype(xv.data.dtype)
    return xv * mask + as_var(alpha) * (xv * (1.0 - mask))


def activation(x, kind, alpha=None):
    if kind == "identity":
        return as_var(x)
    if kind == "prelu":
        return prelu(x, alpha)
    raise ValueError(f"unknown activation kind {kind!r}")
