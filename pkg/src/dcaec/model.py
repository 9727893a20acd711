"""Network assembly: configuration, weight store, offline and streaming inference.

The pipeline stacks the microphone and far-end spectra as two complex input
channels, runs a complex conv encoder, the frequency-time recurrence block,
a complex deconv decoder, the deep filter and two complex LSTM layers, and
produces a complex mask that multiplies the microphone spectrum.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Var, as_var, no_grad
from .dsp import AudioBuffer, ComplexSpec, StftConfig, idft_matrices, istft, stft
from .nn import (ComplexLstmParams, ComplexPair, ConvSpec, FtLstmParams,
                 LstmSpec, activation, complex_conv2d, complex_deconv2d,
                 complex_lstm, deep_filter_apply, ft_lstm_block)


class NumericError(RuntimeError):
    """Non-finite value detected inside the network."""


class WeightError(ValueError):
    """Weight store inconsistent with the model configuration."""


MASK_CLAMP = 100.0


@dataclass
class ModelConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    enc_specs: tuple = ()
    dec_specs: tuple = ()
    df_spec: ConvSpec = None
    lstm_hidden: int = 128
    clstm_hidden: int = 128
    clstm_layers: int = 2
    activation: str = "prelu"
    df_wiring: str = "decoder"  # "decoder" or "input": what the taps filter
    seed: int = 0

    @classmethod
    def paper_mode(cls, seed=0, df_wiring="decoder"):
        return cls(
            stft=StftConfig(),
            enc_specs=(
                ConvSpec(in_ch=2, out_ch=32, kernel_f=5, stride_f=2, pad_f=0),
                ConvSpec(in_ch=32, out_ch=96, kernel_f=3, stride_f=1, pad_f=1),
            ),
            dec_specs=(
                ConvSpec(in_ch=96, out_ch=32, kernel_f=3, stride_f=1, pad_f=1,
                         transposed=True),
                ConvSpec(in_ch=32, out_ch=1, kernel_f=5, stride_f=2, pad_f=0,
                         transposed=True),
            ),
            df_spec=ConvSpec(in_ch=1, out_ch=9, kernel_f=3, kernel_t=3,
                             pad_f=1, pad_t=1),
            lstm_hidden=128,
            clstm_hidden=128,
            clstm_layers=2,
            seed=seed,
            df_wiring=df_wiring,
        )

    @classmethod
    def desk_mode(cls, seed=0, df_wiring="decoder"):
        """Small configuration for fast desk-scale training experiments."""
        return cls(
            stft=StftConfig(),
            enc_specs=(
                ConvSpec(in_ch=2, out_ch=4, kernel_f=5, stride_f=2, pad_f=0),
                ConvSpec(in_ch=4, out_ch=8, kernel_f=3, stride_f=1, pad_f=1),
            ),
            dec_specs=(
                ConvSpec(in_ch=8, out_ch=4, kernel_f=3, stride_f=1, pad_f=1,
                         transposed=True),
                ConvSpec(in_ch=4, out_ch=1, kernel_f=5, stride_f=2, pad_f=0,
                         transposed=True),
            ),
            df_spec=ConvSpec(in_ch=1, out_ch=9, kernel_f=3, kernel_t=3,
                             pad_f=1, pad_t=1),
            lstm_hidden=16,
            clstm_hidden=32,
            clstm_layers=1,
            seed=seed,
            df_wiring=df_wiring,
        )

    @property
    def n_bins(self):
        return self.stft.n_bins

    @property
    def bottleneck_bins(self):
        f = self.n_bins
        for s in self.enc_specs:
            f = s.f_out(f)
        return f

    @property
    def bottleneck_ch(self):
        return self.enc_specs[-1].out_ch

    def to_dict(self):
        return {
            "stft": {"win_len": self.stft.win_len, "hop": self.stft.hop,
                     "fft_size": self.stft.fft_size,
                     "sample_rate": self.stft.sample_rate},
            "enc": [[s.in_ch, s.out_ch, s.kernel_f, s.kernel_t, s.stride_f,
                     s.stride_t, s.pad_f, s.pad_t] for s in self.enc_specs],
            "dec": [[s.in_ch, s.out_ch, s.kernel_f, s.kernel_t, s.stride_f,
                     s.stride_t, s.pad_f, s.pad_t] for s in self.dec_specs],
            "df": [self.df_spec.in_ch, self.df_spec.out_ch, self.df_spec.kernel_f,
                   self.df_spec.kernel_t, self.df_spec.pad_f, self.df_spec.pad_t],
            "lstm_hidden": self.lstm_hidden,
            "clstm_hidden": self.clstm_hidden,
            "clstm_layers": self.clstm_layers,
            "activation": self.activation,
            "df_wiring": self.df_wiring,
            "input_order": "complex channels (mic, farend)",
        }

    @classmethod
    def from_dict(cls, d):
        stft = StftConfig(win_len=d["stft"]["win_len"], hop=d["stft"]["hop"],
                          fft_size=d["stft"]["fft_size"],
                          sample_rate=d["stft"]["sample_rate"])

        def conv(row, transposed):
            i, o, kf, kt, sf, st, pf, pt = row
            return ConvSpec(in_ch=i, out_ch=o, kernel_f=kf, kernel_t=kt,
                            stride_f=sf, stride_t=st, pad_f=pf, pad_t=pt,
                            transposed=transposed)

        df = d["df"]
        return cls(
            stft=stft,
            enc_specs=tuple(conv(r, False) for r in d["enc"]),
            dec_specs=tuple(conv(r, True) for r in d["dec"]),
            df_spec=ConvSpec(in_ch=df[0], out_ch=df[1], kernel_f=df[2],
                             kernel_t=df[3], pad_f=df[4], pad_t=df[5]),
            lstm_hidden=d["lstm_hidden"],
            clstm_hidden=d["clstm_hidden"],
            clstm_layers=d["clstm_layers"],
            activation=d["activation"],
            df_wiring=d["df_wiring"],
        )

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class WeightStore:
    tensors: OrderedDict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]


@dataclass
class MaskSpec:
    re: np.ndarray
    im: np.ndarray

    def magnitude(self):
        return np.hypot(self.re, self.im)

    def phase(self):
        return np.arctan2(self.im, self.re)


def count_params(store: WeightStore) -> int:
    return int(sum(t.size for t in store.tensors.values()))


# ---- weight initialization ----------------------------------------------


def _uniform(rng, shape, fan_in):
    # float32 so the weight-file round trip is bit-exact
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(np.float32)


def _init_lstm(rng, tensors, prefix, input_dim, hidden, bidirectional):
    suffixes = [""] if not bidirectional else ["", "_rev"]
    for suf in suffixes:
        tensors[f"{prefix}.w_ih{suf}"] = _uniform(rng, (4 * hidden, input_dim), input_dim)
        tensors[f"{prefix}.w_hh{suf}"] = _uniform(rng, (4 * hidden, hidden), hidden)
        b_ih = _uniform(rng, (4 * hidden,), hidden)
        b_ih[hidden:2 * hidden] += 1.0  # forget-gate bias
        tensors[f"{prefix}.b_ih{suf}"] = b_ih
        tensors[f"{prefix}.b_hh{suf}"] = _uniform(rng, (4 * hidden,), hidden)


def init_weights(cfg: ModelConfig, seed=None) -> WeightStore:
    """Seeded random weight store matching cfg."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    t = OrderedDict()
    for i, s in enumerate(cfg.enc_specs):
        fan = s.in_ch * s.kernel_t * s.kernel_f
        shape = (s.out_ch, s.in_ch, s.kernel_t, s.kernel_f)
        t[f"enc{i}.kr"] = _uniform(rng, shape, fan)
        t[f"enc{i}.ki"] = _uniform(rng, shape, fan)
        if cfg.activation == "prelu":
            t[f"enc{i}.alpha_r"] = np.full((s.out_ch, 1, 1), 0.25, dtype=np.float32)
            t[f"enc{i}.alpha_i"] = np.full((s.out_ch, 1, 1), 0.25, dtype=np.float32)
    c = cfg.bottleneck_ch
    h = cfg.lstm_hidden
    for part in ("re", "im"):
        _init_lstm(rng, t, f"ft.{part}.f", c, h, bidirectional=True)
        t[f"ft.{part}.proj_f.w"] = _uniform(rng, (c, 2 * h), 2 * h)
        t[f"ft.{part}.proj_f.b"] = _uniform(rng, (c,), 2 * h)
        _init_lstm(rng, t, f"ft.{part}.t", c, h, bidirectional=False)
        t[f"ft.{part}.proj_t.w"] = _uniform(rng, (c, h), h)
        t[f"ft.{part}.proj_t.b"] = _uniform(rng, (c,), h)
    n_dec = len(cfg.dec_specs)
    for i, s in enumerate(cfg.dec_specs):
        fan = s.in_ch * s.kernel_t * s.kernel_f
        shape = (s.out_ch, s.in_ch, s.kernel_t, s.kernel_f)
        j = n_dec - 1 - i  # mirror encoder numbering: dec0 is the last layer
        t[f"dec{j}.kr"] = _uniform(rng, shape, fan)
        t[f"dec{j}.ki"] = _uniform(rng, shape, fan)
        if cfg.activation == "prelu" and i < n_dec - 1:  # final deconv is linear
            t[f"dec{j}.alpha_r"] = np.full((s.out_ch, 1, 1), 0.25, dtype=np.float32)
            t[f"dec{j}.alpha_i"] = np.full((s.out_ch, 1, 1), 0.25, dtype=np.float32)
    s = cfg.df_spec
    fan = s.in_ch * s.kernel_t * s.kernel_f
    t["df.kr"] = _uniform(rng, (s.out_ch, s.in_ch, s.kernel_t, s.kernel_f), fan)
    t["df.ki"] = _uniform(rng, (s.out_ch, s.in_ch, s.kernel_t, s.kernel_f), fan)
    d = cfg.n_bins
    ch = cfg.clstm_hidden
    for i in range(cfg.clstm_layers):
        _init_lstm(rng, t, f"clstm{i}.r", d, ch, bidirectional=False)
        _init_lstm(rng, t, f"clstm{i}.i", d, ch, bidirectional=False)
        t[f"clstm{i}.proj.pr"] = _uniform(rng, (d, ch), ch)
        t[f"clstm{i}.proj.pi"] = _uniform(rng, (d, ch), ch)
        t[f"clstm{i}.proj.br"] = _uniform(rng, (d,), ch)
        t[f"clstm{i}.proj.bi"] = _uniform(rng, (d,), ch)
    meta = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
            "format_version": 1}
    return WeightStore(t, meta)


def expected_tensor_shapes(cfg: ModelConfig):
    """Name -> shape map implied by cfg (via a seeded dry init)."""
    ref = init_weights(cfg, seed=0)
    return {k: v.shape for k, v in ref.tensors.items()}


def validate_store(store: WeightStore, cfg: ModelConfig):
    expected = expected_tensor_shapes(cfg)
    for name, shape in expected.items():
        if name not in store.tensors:
            raise WeightError(f"missing tensor {name}")
        if tuple(store.tensors[name].shape) != tuple(shape):
            raise WeightError(
                f"{name}: shape {store.tensors[name].shape} != {shape}")
    extra = set(store.tensors) - set(expected)
    if extra:
        raise WeightError(f"unexpected tensors: {sorted(extra)}")


# ---- parameter bundling --------------------------------------------------


def _lstm_spec(params, prefix, input_dim, hidden, bidirectional):
    names = ["w_ih", "w_hh", "b_ih", "b_hh"]
    if bidirectional:
        names += [n + "_rev" for n in list(names)]
    weights = {n: params[f"{prefix}.{n}"] for n in names}
    return LstmSpec(input_dim, hidden, bidirectional, weights)


def bundle_params(params, cfg: ModelConfig):
    """Group a flat name->Var mapping into per-layer parameter objects."""
    c, h, d = cfg.bottleneck_ch, cfg.lstm_hidden, cfg.n_bins
    ft = {}
    for part in ("re", "im"):
        ft[part] = FtLstmParams(
            f_spec=_lstm_spec(params, f"ft.{part}.f", c, h, True),
            t_spec=_lstm_spec(params, f"ft.{part}.t", c, h, False),
            proj_f_w=params[f"ft.{part}.proj_f.w"],
            proj_f_b=params[f"ft.{part}.proj_f.b"],
            proj_t_w=params[f"ft.{part}.proj_t.w"],
            proj_t_b=params[f"ft.{part}.proj_t.b"],
        )
    clstm = []
    for i in range(cfg.clstm_layers):
        clstm.append(ComplexLstmParams(
            spec_r=_lstm_spec(params, f"clstm{i}.r", d, cfg.clstm_hidden, False),
            spec_i=_lstm_spec(params, f"clstm{i}.i", d, cfg.clstm_hidden, False),
            proj_pr=params[f"clstm{i}.proj.pr"],
            proj_pi=params[f"clstm{i}.proj.pi"],
            proj_br=params[f"clstm{i}.proj.br"],
            proj_bi=params[f"clstm{i}.proj.bi"],
        ))
    return ft, clstm


def _finite_check(name, pair):
    for comp in (pair.re, pair.im):
        d = comp.data if isinstance(comp, Var) else comp
        if not np.all(np.isfinite(d)):
            raise NumericError(f"non-finite values after layer {name}")


def build_mask_graph(y_spec: ComplexSpec, x_spec: ComplexSpec, params, cfg: ModelConfig,
                     collect=None, check=True, dtype=np.float64):
    """Run the network on stacked (Y, X) spectra; returns mask ComplexPair (T, F).

    params: flat name -> Var/ndarray map (expected to match dtype).  collect:
    optional dict that receives every intermediate activation shape, keyed by
    layer name.
    """
    t = y_spec.n_frames
    w = ComplexPair(np.stack([y_spec.re, x_spec.re]).astype(dtype),
                    np.stack([y_spec.im, x_spec.im]).astype(dtype))  # (2, T, F)
    ft, clstm = bundle_params(params, cfg)

    def note(name, pair):
        if collect is not None:
            collect[name] = tuple(pair.shape)
        if check:
            _finite_check(name, pair)

    note("input", w)
    for i, spec in enumerate(cfg.enc_specs):
        w = complex_conv2d(w, ComplexPair(params[f"enc{i}.kr"], params[f"enc{i}.ki"]), spec)
        if cfg.activation == "prelu":
            w = ComplexPair(activation(w.re, "prelu", params[f"enc{i}.alpha_r"]),
                            activation(w.im, "prelu", params[f"enc{i}.alpha_i"]))
        note(f"enc{i}", w)

    # (C, T, F') -> block layout (C, F', T)
    hb = ComplexPair(w.re.transpose(0, 2, 1), w.im.transpose(0, 2, 1))
    hb, _ = ft_lstm_block(hb, ft["re"], ft["im"])
    w = ComplexPair(hb.re.transpose(0, 2, 1), hb.im.transpose(0, 2, 1))
    note("ft_lstm", w)

    n_dec = len(cfg.dec_specs)
    for i, spec in enumerate(cfg.dec_specs):
        j = n_dec - 1 - i
        w = complex_deconv2d(w, ComplexPair(params[f"dec{j}.kr"], params[f"dec{j}.ki"]), spec)
        if cfg.activation == "prelu" and i < n_dec - 1:
            w = ComplexPair(activation(w.re, "prelu", params[f"dec{j}.alpha_r"]),
                            activation(w.im, "prelu", params[f"dec{j}.alpha_i"]))
        note(f"dec{j}", w)

    coef = complex_conv2d(w, ComplexPair(params["df.kr"], params["df.ki"]), cfg.df_spec)
    note("df_coef", coef)
    if cfg.df_wiring == "decoder":
        target = w
    elif cfg.df_wiring == "input":
        target = ComplexPair(y_spec.re[None].astype(dtype),
                             y_spec.im[None].astype(dtype))
    else:
        raise ValueError(f"unknown df_wiring {cfg.df_wiring!r}")
    w = deep_filter_apply(coef, target)
    note("deep_filter", w)

    m = ComplexPair(w.re.reshape(t, cfg.n_bins), w.im.reshape(t, cfg.n_bins))
    for i, layer in enumerate(clstm):
        m, _ = complex_lstm(m, layer)
        note(f"clstm{i}", m)
    return m


def params_as_vars(store: WeightStore, dtype=np.float64):
    """Tensors as Vars; float64 for gradient work, float32 for fast inference."""
    return {k: as_var(np.asarray(v, dtype=dtype)) for k, v in store.tensors.items()}


def apply_mask(y: ComplexSpec, m: MaskSpec) -> ComplexSpec:
    """S_hat = Y * M (complex multiply; equals magnitude product / phase sum)."""
    if y.re.shape != m.re.shape:
        raise ValueError("mask/spectrum shape mismatch")
    re = y.re * m.re - y.im * m.im
    im = y.re * m.im + y.im * m.re
    return ComplexSpec(re, im, y.cfg)


def ideal_crm(y: ComplexSpec, s: ComplexSpec, eps=1e-12) -> MaskSpec:
    """Complex ratio mask S/Y with an eps-guarded denominator."""
    if y.re.shape != s.re.shape:
        raise ValueError("shape mismatch")
    den = y.re ** 2 + y.im ** 2 + eps
    return MaskSpec((y.re * s.re + y.im * s.im) / den,
                    (y.re * s.im - y.im * s.re) / den)


def _clamp_mask(re, im, report=None):
    mag = np.hypot(re, im)
    over = mag > MASK_CLAMP
    if np.any(over):
        scale = np.ones_like(mag)
        scale[over] = MASK_CLAMP / mag[over]
        re = re * scale
        im = im * scale
        if report is not None:
            report["mask_clamped_bins"] = int(over.sum())
    return re, im


def _pad_to_match(y: AudioBuffer, x: AudioBuffer):
    n = max(len(y), len(x))
    ys = np.pad(y.samples, (0, n - len(y)))
    xs = np.pad(x.samples, (0, n - len(x)))
    return AudioBuffer(ys, y.sample_rate), AudioBuffer(xs, x.sample_rate)


def forward(y: AudioBuffer, x: AudioBuffer, store: WeightStore, cfg: ModelConfig,
            collect=None, report=None):
    """Offline inference: (mic, farend) -> (mask, estimated near-end signal)."""
    validate_store(store, cfg)
    y, x = _pad_to_match(y, x)
    y_spec = stft(y, cfg.stft)
    x_spec = stft(x, cfg.stft)
    # single precision through the network: ~4x faster on typical CPUs and
    # well inside the mask's accuracy needs; synthesis stays double
    with no_grad():
        m = build_mask_graph(y_spec, x_spec, params_as_vars(store, np.float32),
                             cfg, collect=collect, dtype=np.float32)
    m_re, m_im = _clamp_mask(m.re.data, m.im.data, report)
    mask = MaskSpec(m_re, m_im)
    s_hat = istft(apply_mask(y_spec, mask))
    return mask, s_hat


# ---- streaming -----------------------------------------------------------


class StreamingSession:
    """Frame-by-frame inference with carried recurrent state.

    Feed 160-sample chunks of the microphone and far-end signals; output
    chunks appear after the algorithmic latency of win_len + hop samples
    (analysis window plus one frame of deep-filter lookahead).
    """

    def __init__(self, store: WeightStore, cfg: ModelConfig):
        validate_store(store, cfg)
        self.cfg = cfg
        self.params = params_as_vars(store, np.float32)
        self.ft, self.clstm = bundle_params(self.params, cfg)
        self.hop = cfg.stft.hop
        self.win = cfg.stft.win_len
        self.y_pending = np.zeros(0)
        self.x_pending = np.zeros(0)
        self.n_fed = 0
        self.frame_idx = 0          # next analysis frame index
        self.emit_idx = 0           # next output frame to emit
        self.t_states = (None, None)
        self.clstm_states = [None] * cfg.clstm_layers
        self.dec_hist = []          # decoder output frames (re, im) of shape (1, 1, F)
        self.target_hist = []       # deep-filter target frames
        self.y_frames = []          # microphone spectra per frame
        self.ola = np.zeros(self.win)  # overlap-add tail accumulator
        self.done = False

    @property
    def algorithmic_latency(self):
        return self.win + self.hop

    def _analysis(self, y_frame, x_frame):
        w = self.cfg.stft.window
        yf = np.fft.rfft(y_frame * w, n=self.cfg.stft.fft_size)
        xf = np.fft.rfft(x_frame * w, n=self.cfg.stft.fft_size)
        return yf, xf

    def _encode_frame(self, yf, xf):
        cfg = self.cfg
        w = ComplexPair(np.stack([yf.real, xf.real])[:, None, :].astype(np.float32),
                        np.stack([yf.imag, xf.imag])[:, None, :].astype(np.float32))  # (2, 1, F)
        with no_grad():
            for i, spec in enumerate(cfg.enc_specs):
                w = complex_conv2d(
                    w, ComplexPair(self.params[f"enc{i}.kr"], self.params[f"enc{i}.ki"]), spec)
                if cfg.activation == "prelu":
                    w = ComplexPair(
                        activation(w.re, "prelu", self.params[f"enc{i}.alpha_r"]),
                        activation(w.im, "prelu", self.params[f"enc{i}.alpha_i"]))
            hb = ComplexPair(w.re.transpose(0, 2, 1), w.im.transpose(0, 2, 1))
            hb, self.t_states = ft_lstm_block(hb, self.ft["re"], self.ft["im"],
                                              self.t_states)
            w = ComplexPair(hb.re.transpose(0, 2, 1), hb.im.transpose(0, 2, 1))
            n_dec = len(cfg.dec_specs)
            for i, spec in enumerate(cfg.dec_specs):
                j = n_dec - 1 - i
                w = complex_deconv2d(
                    w, ComplexPair(self.params[f"dec{j}.kr"], self.params[f"dec{j}.ki"]), spec)
                if cfg.activation == "prelu" and i < n_dec - 1:
                    w = ComplexPair(
                        activation(w.re, "prelu", self.params[f"dec{j}.alpha_r"]),
                        activation(w.im, "prelu", self.params[f"dec{j}.alpha_i"]))
        return w.re.data, w.im.data  # (1, 1, F)

    def _mask_frame(self, tau):
        """Mask for output frame tau; needs decoder frames tau-1..tau+1."""
        cfg = self.cfg
        f = cfg.n_bins
        zero = np.zeros((1, 1, f), dtype=np.float32)

        def dec(i):
            if 0 <= i < len(self.dec_hist):
                return self.dec_hist[i]
            return zero, zero

        d_re = np.concatenate([dec(tau - 1)[0], dec(tau)[0], dec(tau + 1)[0]], axis=1)
        d_im = np.concatenate([dec(tau - 1)[1], dec(tau)[1], dec(tau + 1)[1]], axis=1)
        with no_grad():
            coef = complex_conv2d(ComplexPair(d_re, d_im),
                                  ComplexPair(self.params["df.kr"], self.params["df.ki"]),
                                  ConvSpec(in_ch=cfg.df_spec.in_ch,
                                           out_ch=cfg.df_spec.out_ch,
                                           kernel_f=cfg.df_spec.kernel_f,
                                           kernel_t=cfg.df_spec.kernel_t,
                                           pad_f=cfg.df_spec.pad_f, pad_t=0))
            # coef now (9, 1, F): the filter output at frame tau

            def tgt(i):
                if 0 <= i < len(self.target_hist):
                    return self.target_hist[i]
                return zero, zero

            t_re = np.concatenate([tgt(tau - 1)[0], tgt(tau)[0], tgt(tau + 1)[0]], axis=1)
            t_im = np.concatenate([tgt(tau - 1)[1], tgt(tau)[1], tgt(tau + 1)[1]], axis=1)
            # tap sum for the centre frame only, replicating deep_filter_apply
            out_re = np.zeros((1, f), dtype=np.float32)
            out_im = np.zeros((1, f), dtype=np.float32)
            tr = np.pad(t_re[0], ((0, 0), (1, 1)))
            ti = np.pad(t_im[0], ((0, 0), (1, 1)))
            cr = coef.re.data[:, 0, :]
            ci = coef.im.data[:, 0, :]
            for i_off in (-1, 0, 1):
                for j_off in (-1, 0, 1):
                    ch = 3 * (i_off + 1) + (j_off + 1)
                    sr = tr[1 + j_off, 1 + i_off:1 + i_off + f]
                    si = ti[1 + j_off, 1 + i_off:1 + i_off + f]
                    out_re[0] += cr[ch] * sr - ci[ch] * si
                    out_im[0] += cr[ch] * si + ci[ch] * sr
            m = ComplexPair(out_re, out_im)  # (1, F) frame
            for i, layer in enumerate(self.clstm):
                m, self.clstm_states[i] = complex_lstm(m, layer, self.clstm_states[i])
        return m.re.data[0], m.im.data[0]

    def _process_ready_frames(self):
        out = []
        # make analysis frames while a full window is available
        while len(self.y_pending) >= self.win:
            yf, xf = self._analysis(self.y_pending[:self.win], self.x_pending[:self.win])
            self._push_frame(yf, xf)
            self.y_pending = self.y_pending[self.hop:]
            self.x_pending = self.x_pending[self.hop:]
            if self.emit_idx < self.frame_idx - 1:
                out.append(self._emit(self.emit_idx, last=False))
                self.emit_idx += 1
        return out

    def _push_frame(self, yf, xf):
        d_re, d_im = self._encode_frame(yf, xf)
        self.dec_hist.append((d_re, d_im))
        if self.cfg.df_wiring == "decoder":
            self.target_hist.append((d_re, d_im))
        else:
            self.target_hist.append((yf.real[None, None, :].astype(np.float32),
                                     yf.imag[None, None, :].astype(np.float32)))
        self.y_frames.append(yf)
        self.frame_idx += 1

    def _emit(self, tau, last):
        cfg = self.cfg
        m_re, m_im = self._mask_frame(tau)
        m_re, m_im = _clamp_mask(m_re, m_im)
        yf = self.y_frames[tau]
        s_re = yf.real * m_re - yf.imag * m_im
        s_im = yf.real * m_im + yf.imag * m_re
        frame = np.fft.irfft(s_re + 1j * s_im, n=cfg.stft.fft_size)[:self.win]
        frame *= cfg.stft.window
        self.ola += frame
        if last:
            chunk = self.ola.copy()
            self.ola = np.zeros(self.win)
        else:
            chunk = self.ola[:self.hop].copy()
            self.ola = np.concatenate([self.ola[self.hop:], np.zeros(self.hop)])
        return chunk

    def feed(self, y_chunk, x_chunk):
        """Feed aligned hop-sized (160-sample) chunks; returns output samples."""
        y_chunk = np.asarray(y_chunk, dtype=np.float64).reshape(-1)
        x_chunk = np.asarray(x_chunk, dtype=np.float64).reshape(-1)
        if self.done:
            raise RuntimeError("session already flushed")
        if len(y_chunk) != self.hop or len(x_chunk) != self.hop:
            raise ValueError(f"chunks must be {self.hop} samples")
        self.y_pending = np.concatenate([self.y_pending, y_chunk])
        self.x_pending = np.concatenate([self.x_pending, x_chunk])
        self.n_fed += len(y_chunk)
        chunks = self._process_ready_frames()
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def flush(self):
        """Complete the tail; returns the remaining output samples."""
        if self.done:
            return np.zeros(0)
        self.done = True
        total_frames = self.cfg.stft.n_frames(self.n_fed)
        # zero-pad the pending tail so the remaining frames can be formed
        need = (total_frames - self.frame_idx) * self.hop + (self.win - self.hop) - len(self.y_pending)
        if need > 0:
            self.y_pending = np.pad(self.y_pending, (0, need))
            self.x_pending = np.pad(self.x_pending, (0, need))
        chunks = self._process_ready_frames()
        while self.emit_idx < total_frames:
            chunks.append(self._emit(self.emit_idx, last=(self.emit_idx == total_frames - 1)))
            self.emit_idx += 1
        return np.concatenate(chunks) if chunks else np.zeros(0)
