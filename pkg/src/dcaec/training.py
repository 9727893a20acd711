"""Training machinery: differentiable objective, Adam, gradient checking.

The objective is the negative segmented SI-SNR (standard projection form,
chunk counts summed) computed on the time-domain network output, so the
synthesis path (mask multiply, inverse DFT, overlap-add) is part of the
differentiated graph.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, as_var, log10, stack
from .dsp import AudioBuffer, idft_matrices, stft
from .metrics import EPS, ChunkPlan
from .model import ModelConfig, WeightStore, build_mask_graph, bundle_params
from .nn import (ComplexPair, activation, complex_conv2d, complex_deconv2d,
                 complex_linear, deep_filter_apply, linear, lstm_seq)

# ---- differentiable synthesis and objective ------------------------------


def istft_graph(s_re, s_im, cfg):
    """Differentiable overlap-add synthesis of a (T, F) Var spectrum."""
    ci, si = idft_matrices(cfg.fft_size)
    frames = s_re @ ci + s_im @ si          # (T, fft_size)
    frames = frames[:, :cfg.win_len] * cfg.window
    t = frames.shape[0]
    n_out = (t - 1) * cfg.hop + cfg.win_len
    if cfg.win_len != 2 * cfg.hop:
        parts = [frames[i].pad(((i * cfg.hop, n_out - i * cfg.hop - cfg.win_len),))
                 for i in range(t)]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    # 50% overlap: even and odd frames are internally non-overlapping
    even = frames[0::2].reshape(-1)
    out = even.pad(((0, n_out - even.shape[0]),))
    if t > 1:
        odd = frames[1::2].reshape(-1)
        out = out + odd.pad(((cfg.hop, n_out - cfg.hop - odd.shape[0]),))
    return out


def si_snr_var(s_hat: Var, s: np.ndarray, mode="standard"):
    """Differentiable SI-SNR of a Var estimate against a constant reference."""
    s = np.asarray(s, dtype=np.float64)
    e_s = float(np.dot(s, s))
    if e_s <= 0:
        raise ValueError("zero-energy reference")
    proj = (s_hat * s).sum() * (1.0 / e_s)
    target = proj * s
    if mode == "standard":
        err = s_hat - target
    elif mode == "literal":
        err = s_hat - as_var(s)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    num = (target * target).sum() + EPS
    den = (err * err).sum() + EPS
    return log10(num / den) * 10.0


def seg_sisnr_var(s_hat: Var, s: np.ndarray, plan: ChunkPlan = None,
                  mode="standard"):
    """Differentiable segmented SI-SNR (sum over chunk counts)."""
    if plan is None:
        plan = ChunkPlan()
    s = np.asarray(s, dtype=np.float64)
    n = len(s)
    floor = 10.0 ** (plan.min_ref_energy_db / 10.0)
    total = None
    for c in plan.chunk_counts:
        size = n // c
        bounds = [i * size for i in range(c)] + [n]
        vals = []
        for i in range(c):
            lo, hi = bounds[i], bounds[i + 1]
            if np.mean(s[lo:hi] ** 2) < floor:
                continue
            vals.append(si_snr_var(s_hat[lo:hi], s[lo:hi], mode=mode))
        if not vals:
            continue
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        acc = acc * (1.0 / len(vals))
        total = acc if total is None else total + acc
    if total is None:
        raise ValueError("all chunks below the reference-energy threshold")
    return total


def example_loss(example, params, cfg: ModelConfig, plan: ChunkPlan = None,
                 mode="standard"):
    """Negative Seg-SiSNR of the network output for one scene example."""
    y_spec = stft(example.y, cfg.stft)
    x_spec = stft(example.x, cfg.stft)
    m = build_mask_graph(y_spec, x_spec, params, cfg, check=False)
    s_re = m.re * y_spec.re - m.im * y_spec.im
    s_im = m.re * y_spec.im + m.im * y_spec.re
    s_hat = istft_graph(s_re, s_im, cfg.stft)
    ref = np.pad(example.s.samples, (0, max(0, s_hat.shape[0] - len(example.s))))
    ref = ref[:s_hat.shape[0]]
    return seg_sisnr_var(s_hat, ref, plan, mode) * (-1.0)


def _batched_ft_part(x, p, b, t, f):
    """F-T recurrence branch on x (C, B*T, F) with per-example time sequences."""
    c = x.shape[0]
    u, _ = lstm_seq(x.transpose(2, 1, 0), p.f_spec)       # (F, B*T, 2H)
    u = linear(u, p.proj_f_w, p.proj_f_b)
    v = x + u.transpose(2, 1, 0)
    vt = v.reshape(c, b, t, f).transpose(2, 1, 3, 0).reshape(t, b * f, c)
    z, _ = lstm_seq(vt, p.t_spec)                         # (T, B*F, H)
    z = linear(z, p.proj_t_w, p.proj_t_b)
    z = z.reshape(t, b, f, c).transpose(3, 1, 0, 2).reshape(c, b * t, f)
    return v + z


def batched_loss(examples, params, cfg: ModelConfig, plan: ChunkPlan = None,
                 mode="standard"):
    """Mean negative Seg-SiSNR over same-length examples in one graph.

    The convolutions have no time extent (kernel_t = 1), so examples can
    share the graph concatenated along the frame axis; the recurrent stages
    run with the examples folded into the batch dimension, keeping every
    per-example state separate.  Equivalent to averaging example_loss but
    with the Python-level graph overhead amortized across the batch.
    """
    for s in (*cfg.enc_specs, *cfg.dec_specs):
        if s.kernel_t != 1 or s.stride_t != 1 or s.pad_t != 0:
            raise ValueError("batched_loss requires frame-local conv stages")
    y_specs = [stft(ex.y, cfg.stft) for ex in examples]
    x_specs = [stft(ex.x, cfg.stft) for ex in examples]
    t = y_specs[0].n_frames
    if any(sp.n_frames != t for sp in y_specs):
        raise ValueError("examples must have equal length")
    b = len(examples)
    ft, clstm = bundle_params(params, cfg)

    w = ComplexPair(
        np.concatenate([np.stack([ys.re, xs.re])
                        for ys, xs in zip(y_specs, x_specs)], axis=1),
        np.concatenate([np.stack([ys.im, xs.im])
                        for ys, xs in zip(y_specs, x_specs)], axis=1))
    for i, spec in enumerate(cfg.enc_specs):
        w = complex_conv2d(w, ComplexPair(params[f"enc{i}.kr"], params[f"enc{i}.ki"]), spec)
        if cfg.activation == "prelu":
            w = ComplexPair(activation(w.re, "prelu", params[f"enc{i}.alpha_r"]),
                            activation(w.im, "prelu", params[f"enc{i}.alpha_i"]))

    fb = cfg.bottleneck_bins
    w = ComplexPair(_batched_ft_part(w.re, ft["re"], b, t, fb),
                    _batched_ft_part(w.im, ft["im"], b, t, fb))

    n_dec = len(cfg.dec_specs)
    for i, spec in enumerate(cfg.dec_specs):
        j = n_dec - 1 - i
        w = complex_deconv2d(w, ComplexPair(params[f"dec{j}.kr"], params[f"dec{j}.ki"]), spec)
        if cfg.activation == "prelu" and i < n_dec - 1:
            w = ComplexPair(activation(w.re, "prelu", params[f"dec{j}.alpha_r"]),
                            activation(w.im, "prelu", params[f"dec{j}.alpha_i"]))

    # deep filtering has time taps, so it runs per example
    dfk = ComplexPair(params["df.kr"], params["df.ki"])
    m_re, m_im = [], []
    for k in range(b):
        wk = ComplexPair(w.re[:, k * t:(k + 1) * t, :], w.im[:, k * t:(k + 1) * t, :])
        coef = complex_conv2d(wk, dfk, cfg.df_spec)
        if cfg.df_wiring == "decoder":
            target = wk
        else:
            target = ComplexPair(y_specs[k].re[None], y_specs[k].im[None])
        mk = deep_filter_apply(coef, target)
        m_re.append(mk.re.reshape(t, cfg.n_bins))
        m_im.append(mk.im.reshape(t, cfg.n_bins))
    mr = stack(m_re, 1)   # (T, B, F)
    mi = stack(m_im, 1)

    for layer in clstm:
        rr, _ = lstm_seq(mr, layer.spec_r)
        ri, _ = lstm_seq(mi, layer.spec_r)
        ir, _ = lstm_seq(mr, layer.spec_i)
        ii, _ = lstm_seq(mi, layer.spec_i)
        pair = complex_linear(ComplexPair(rr - ii, ri + ir), layer.proj_pr,
                              layer.proj_pi, layer.proj_br, layer.proj_bi)
        mr, mi = pair.re, pair.im

    total = None
    for k, ex in enumerate(examples):
        ys = y_specs[k]
        mk_re = mr[:, k, :]
        mk_im = mi[:, k, :]
        s_re = mk_re * ys.re - mk_im * ys.im
        s_im = mk_re * ys.im + mk_im * ys.re
        s_hat = istft_graph(s_re, s_im, cfg.stft)
        ref = np.pad(ex.s.samples, (0, max(0, s_hat.shape[0] - len(ex.s))))
        ref = ref[:s_hat.shape[0]]
        l = seg_sisnr_var(s_hat, ref, plan, mode) * (-1.0)
        total = l if total is None else total + l
    return total * (1.0 / b)


# ---- backward driver -----------------------------------------------------


def backward(loss: Var, params: dict):
    """Gradients of a scalar loss for every named parameter Var.

    Unreached parameters get zero gradients; non-finite gradients raise.
    """
    if loss.data.size != 1:
        raise ValueError("loss must be scalar")
    loss.backward()
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        grads[name] = g
    return grads


# ---- Adam and plateau schedule ------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """In-place Adam update with bias correction; returns (params, state)."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


class PlateauScheduler:
    """Halve the learning rate after `patience` epochs without improvement."""

    def __init__(self, state: AdamState, patience=2, min_delta=0.0):
        self.state = state
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.bad_epochs = 0

    def update(self, metric):
        """Call once per evaluation epoch with the validation loss."""
        if self.best is None or metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.state.lr *= 0.5
            self.bad_epochs = 0
            return True
        return False


# ---- toy training --------------------------------------------------------


def toy_train(store: WeightStore, cfg: ModelConfig, examples, steps=50,
              lr=1e-3, plan: ChunkPlan = None, eval_every=None,
              scheduler_patience=2, log_fn=None):
    """Full-batch Adam on a fixed set of scene examples.

    Returns (store, log) where log is a list of {step, loss, lr, wall} records.
    Deterministic for fixed inputs.
    """
    params_np = {k: np.asarray(v, dtype=np.float64).copy()
                 for k, v in store.tensors.items()}
    state = AdamState(lr=lr)
    sched = PlateauScheduler(state, patience=scheduler_patience)
    log = []
    for step in range(steps):
        t0 = time.perf_counter()
        params = {k: as_var(v) for k, v in params_np.items()}
        frame_local = all(s.kernel_t == 1 and s.stride_t == 1 and s.pad_t == 0
                          for s in (*cfg.enc_specs, *cfg.dec_specs))
        equal_len = len({len(ex.y) for ex in examples}) == 1
        if frame_local and equal_len:
            total = batched_loss(examples, params, cfg, plan)
        else:
            total = None
            for ex in examples:
                l = example_loss(ex, params, cfg, plan)
                total = l if total is None else total + l
            total = total * (1.0 / len(examples))
        loss_val = float(total.data)
        if not np.isfinite(loss_val):
            raise FloatingPointError(f"training diverged at step {step}")
        grads = backward(total, params)
        adam_step(params_np, grads, state)
        rec = {"step": step, "loss": loss_val, "lr": state.lr,
               "wall": time.perf_counter() - t0}
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if eval_every and (step + 1) % eval_every == 0:
            sched.update(loss_val)
    out = WeightStore(
        type(store.tensors)((k, params_np[k].astype(np.float32))
                            for k in store.tensors),
        dict(store.meta))
    return out, log


# ---- finite-difference gradient checking --------------------------------


def finite_diff(f, arrays, h=1e-3):
    """Central finite differences of scalar f w.r.t. a dict of float64 arrays."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def rel_error(g_ad, g_fd):
    num = np.max(np.abs(g_ad - g_fd))
    den = np.max(np.abs(g_fd)) + 1e-12
    return num / den


def check_gradients(build_loss, arrays, h=1e-3):
    """Compare reverse-mode and finite-difference gradients.

    build_loss(params: name->Var) must return a scalar Var; arrays holds the
    float64 parameter values (perturbed in place by the checker).
    """
    params = {k: as_var(v) for k, v in arrays.items()}
    loss = build_loss(params)
    grads = backward(loss, params)

    def f():
        ps = {k: as_var(v) for k, v in arrays.items()}
        return float(build_loss(ps).data)

    fd = finite_diff(f, arrays, h=h)
    return max(rel_error(grads[k], fd[k]) for k in arrays)
