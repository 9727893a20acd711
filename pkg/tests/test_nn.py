"""Network kernels against brute-force loop oracles and algebraic identities."""

import numpy as np
import pytest

from dcaec.autodiff import as_var
from dcaec.nn import (ComplexLstmParams, ComplexPair, ConvSpec, FtLstmParams,
                      LstmSpec, complex_conv2d, complex_deconv2d,
                      complex_linear, complex_lstm, deep_filter_apply,
                      ft_lstm_block, linear, lstm_forward, lstm_seq, prelu)


# ---- oracles -------------------------------------------------------------


def conv2d_loops(x, k, spec):
    """Quadruple-nested-loop real cross-correlation."""
    c_in, t_in, f_in = x.shape
    t_out, f_out = spec.t_out(t_in), spec.f_out(f_in)
    xp = np.pad(x, ((0, 0), (spec.pad_t, spec.pad_t), (spec.pad_f, spec.pad_f)))
    out = np.zeros((spec.out_ch, t_out, f_out))
    for o in range(spec.out_ch):
        for t in range(t_out):
            for f in range(f_out):
                acc = 0.0
                for ci in range(c_in):
                    for dt in range(spec.kernel_t):
                        for df in range(spec.kernel_f):
                            acc += (k[o, ci, dt, df]
                                    * xp[ci, t * spec.stride_t + dt,
                                         f * spec.stride_f + df])
                out[o, t, f] = acc
    return out


def complex_conv_oracle(w, k, spec):
    wr, wi = w
    kr, ki = k
    re = conv2d_loops(wr, kr, spec) - conv2d_loops(wi, ki, spec)
    im = conv2d_loops(wi, kr, spec) + conv2d_loops(wr, ki, spec)
    return re, im


def lstm_loops(x, w_ih, w_hh, b_ih, b_hh, h0=None, c0=None):
    """Scalar-level recurrence, gate order (input, forget, cell, output)."""
    s, i = x.shape
    hd = w_hh.shape[1]
    h = np.zeros(hd) if h0 is None else h0.copy()
    c = np.zeros(hd) if c0 is None else c0.copy()
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    ys = np.zeros((s, hd))
    for t in range(s):
        g = w_ih @ x[t] + b_ih + w_hh @ h + b_hh
        gi, gf, gc, go = (sig(g[:hd]), sig(g[hd:2 * hd]),
                          np.tanh(g[2 * hd:3 * hd]), sig(g[3 * hd:]))
        c = gf * c + gi * gc
        h = go * np.tanh(c)
        ys[t] = h
    return ys, h, c


def rand_lstm_spec(rng, i, hd, bidirectional=False):
    names = ["w_ih", "w_hh", "b_ih", "b_hh"]
    if bidirectional:
        names += [n + "_rev" for n in names[:4]]
    shapes = {"w_ih": (4 * hd, i), "w_hh": (4 * hd, hd),
              "b_ih": (4 * hd,), "b_hh": (4 * hd,)}
    w = {n: 0.4 * rng.normal(size=shapes[n[:-4] if n.endswith("_rev") else n])
         for n in names}
    return LstmSpec(i, hd, bidirectional, w)


# ---- complex conv --------------------------------------------------------


def test_identity_kernel():
    rng = np.random.default_rng(0)
    w = ComplexPair(rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8)))
    spec = ConvSpec(in_ch=1, out_ch=1, kernel_f=1)
    k = ComplexPair(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    out = complex_conv2d(w, k, spec)
    np.testing.assert_allclose(out.re.data, w.re.data, atol=1e-12)
    np.testing.assert_allclose(out.im.data, w.im.data, atol=1e-12)


def test_j_kernel_rotates():
    rng = np.random.default_rng(1)
    w = ComplexPair(rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8)))
    spec = ConvSpec(in_ch=1, out_ch=1, kernel_f=1)
    k = ComplexPair(np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)))
    out = complex_conv2d(w, k, spec)
    np.testing.assert_allclose(out.re.data, -w.im.data, atol=1e-12)
    np.testing.assert_allclose(out.im.data, w.re.data, atol=1e-12)


def test_paper_geometry_conv():
    rng = np.random.default_rng(2)
    spec = ConvSpec(in_ch=2, out_ch=3, kernel_f=5, stride_f=2, pad_f=0)
    assert spec.f_out(161) == 79
    wr, wi = rng.normal(size=(2, 2, 4, 161))
    kr, ki = 0.3 * rng.normal(size=(2, 3, 2, 1, 5))
    out = complex_conv2d(ComplexPair(wr, wi), ComplexPair(kr, ki), spec)
    re_ref, im_ref = complex_conv_oracle((wr, wi), (kr, ki), spec)
    assert out.shape == (3, 4, 79)
    np.testing.assert_allclose(out.re.data, re_ref, atol=1e-5)
    np.testing.assert_allclose(out.im.data, im_ref, atol=1e-5)


def test_conv_random_small_shapes_vs_loops():
    rng = np.random.default_rng(3)
    for _ in range(100):
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 3))
        kf = int(rng.integers(1, 4))
        kt = int(rng.integers(1, 3))
        sf = int(rng.integers(1, 3))
        pf = int(rng.integers(0, 2))
        pt = int(rng.integers(0, kt))
        f_in = int(rng.integers(kf, kf + 5))
        t_in = int(rng.integers(kt, kt + 3))
        spec = ConvSpec(in_ch=c_in, out_ch=c_out, kernel_f=kf, kernel_t=kt,
                        stride_f=sf, pad_f=pf, pad_t=pt)
        wr, wi = rng.normal(size=(2, c_in, t_in, f_in))
        kr, ki = rng.normal(size=(2, c_out, c_in, kt, kf))
        out = complex_conv2d(ComplexPair(wr, wi), ComplexPair(kr, ki), spec)
        re_ref, im_ref = complex_conv_oracle((wr, wi), (kr, ki), spec)
        np.testing.assert_allclose(out.re.data, re_ref, atol=1e-5)
        np.testing.assert_allclose(out.im.data, im_ref, atol=1e-5)


def test_deconv_paper_geometry():
    spec = ConvSpec(in_ch=1, out_ch=1, kernel_f=5, stride_f=2, transposed=True)
    assert spec.f_out(79) == 161


def test_deconv_identity():
    rng = np.random.default_rng(4)
    w = ComplexPair(rng.normal(size=(1, 2, 6)), rng.normal(size=(1, 2, 6)))
    spec = ConvSpec(in_ch=1, out_ch=1, kernel_f=1, transposed=True)
    k = ComplexPair(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    out = complex_deconv2d(w, k, spec)
    np.testing.assert_allclose(out.re.data, w.re.data, atol=1e-12)


def test_deconv_is_adjoint_of_conv():
    rng = np.random.default_rng(5)
    for _ in range(20):
        kf = int(rng.integers(1, 4))
        sf = int(rng.integers(1, 3))
        pf = int(rng.integers(0, 2))
        # keep the stride dividing the padded extent so the transposed
        # output-shape formula recovers f_in exactly
        f_in = kf - 2 * pf + sf * int(rng.integers(1, 5))
        if f_in < kf:
            continue
        fwd = ConvSpec(in_ch=2, out_ch=3, kernel_f=kf, stride_f=sf, pad_f=pf)
        back = ConvSpec(in_ch=3, out_ch=2, kernel_f=kf, stride_f=sf, pad_f=pf,
                        transposed=True)
        f_out = fwd.f_out(f_in)
        k = rng.normal(size=(3, 2, 1, kf))
        x = rng.normal(size=(2, 2, f_in))
        y = rng.normal(size=(3, 2, f_out))
        cx = complex_conv2d(ComplexPair(x, np.zeros_like(x)),
                            ComplexPair(k, np.zeros_like(k)), fwd)
        kb = np.ascontiguousarray(k.swapaxes(0, 1))
        dy = complex_deconv2d(ComplexPair(y, np.zeros_like(y)),
                              ComplexPair(kb, np.zeros_like(kb)), back)
        lhs = np.sum(cx.re.data * y)
        rhs = np.sum(x * dy.re.data)
        assert abs(lhs - rhs) < 1e-6 * max(1.0, abs(lhs))


def test_kernel_shape_validated():
    spec = ConvSpec(in_ch=2, out_ch=3, kernel_f=3)
    w = ComplexPair(np.zeros((2, 2, 8)), np.zeros((2, 2, 8)))
    bad = ComplexPair(np.zeros((3, 2, 1, 5)), np.zeros((3, 2, 1, 5)))
    with pytest.raises(ValueError):
        complex_conv2d(w, bad, spec)


# ---- LSTM ----------------------------------------------------------------


def test_lstm_zero_weights_zero_output():
    spec = LstmSpec(3, 4, False, {"w_ih": np.zeros((16, 3)),
                                  "w_hh": np.zeros((16, 4)),
                                  "b_ih": np.zeros(16), "b_hh": np.zeros(16)})
    y, _ = lstm_forward(np.random.default_rng(0).normal(size=(7, 3)), spec)
    assert not y.data.any()


def test_lstm_matches_scalar_recurrence():
    rng = np.random.default_rng(6)
    spec = rand_lstm_spec(rng, 3, 4)
    x = rng.normal(size=(9, 3))
    y, (h, c) = lstm_forward(x, spec)
    w = spec.weights
    y_ref, h_ref, c_ref = lstm_loops(x, w["w_ih"], w["w_hh"], w["b_ih"], w["b_hh"])
    np.testing.assert_allclose(y.data, y_ref, atol=1e-10)
    np.testing.assert_allclose(h.data, h_ref, atol=1e-10)
    np.testing.assert_allclose(c.data, c_ref, atol=1e-10)


def test_lstm_forced_gates():
    rng = np.random.default_rng(7)
    hd = 3
    w = {"w_ih": np.zeros((4 * hd, 2)), "w_hh": np.zeros((4 * hd, hd)),
         "b_ih": np.zeros(4 * hd), "b_hh": np.zeros(4 * hd)}
    w["w_ih"][2 * hd:3 * hd] = rng.normal(size=(hd, 2))  # cell candidate only
    w["b_ih"][:hd] = 50.0          # input gate open
    w["b_ih"][hd:2 * hd] = -50.0   # forget gate closed
    w["b_ih"][3 * hd:] = 50.0      # output gate open
    x = rng.normal(size=(4, 2))
    y, _ = lstm_forward(x, LstmSpec(2, hd, False, w))
    ref = np.tanh(np.tanh(x @ w["w_ih"][2 * hd:3 * hd].T))
    np.testing.assert_allclose(y.data, ref, atol=1e-8)


def test_lstm_state_carry_equivalence():
    rng = np.random.default_rng(8)
    spec = rand_lstm_spec(rng, 3, 5)
    x = rng.normal(size=(20, 3))
    y_full, _ = lstm_forward(x, spec)
    y1, st = lstm_forward(x[:10], spec)
    y2, _ = lstm_forward(x[10:], spec, st)
    np.testing.assert_allclose(
        np.concatenate([y1.data, y2.data]), y_full.data, atol=1e-12)


def test_bidirectional_lstm_reverses_cleanly():
    rng = np.random.default_rng(9)
    spec = rand_lstm_spec(rng, 2, 3, bidirectional=True)
    x = as_var(rng.normal(size=(6, 2, 2)))
    y, st = lstm_seq(x, spec)
    assert st is None
    assert y.shape == (6, 2, 3 * 2)
    # forward half matches the unidirectional run on the same weights
    uni = LstmSpec(2, 3, False, {k: v for k, v in spec.weights.items()
                                 if not k.endswith("_rev")})
    yf, _ = lstm_seq(x, uni)
    np.testing.assert_allclose(y.data[:, :, :3], yf.data, atol=1e-12)
    # backward half equals the forward run on the reversed sequence, reversed
    rev = LstmSpec(2, 3, False, {k[:-4]: v for k, v in spec.weights.items()
                                 if k.endswith("_rev")})
    yb, _ = lstm_seq(as_var(x.data[::-1].copy()), rev)
    np.testing.assert_allclose(y.data[:, :, 3:], yb.data[::-1], atol=1e-12)
    with pytest.raises(ValueError):
        lstm_seq(x, spec, state=(np.zeros((2, 3)), np.zeros((2, 3))))


def test_lstm_spec_validation():
    spec = rand_lstm_spec(np.random.default_rng(0), 3, 4)
    spec.validate()
    spec.weights["w_ih"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        spec.validate()


# ---- F-T block, complex LSTM, deep filter, activations -------------------


def test_ft_lstm_pure_residual_when_projections_zero():
    rng = np.random.default_rng(10)
    c, f, t, hd = 3, 5, 4, 2

    def params():
        return FtLstmParams(
            f_spec=rand_lstm_spec(rng, c, hd, True),
            t_spec=rand_lstm_spec(rng, c, hd, False),
            proj_f_w=np.zeros((c, 2 * hd)), proj_f_b=np.zeros(c),
            proj_t_w=np.zeros((c, hd)), proj_t_b=np.zeros(c))

    h = ComplexPair(rng.normal(size=(c, f, t)), rng.normal(size=(c, f, t)))
    out, _ = ft_lstm_block(h, params(), params())
    np.testing.assert_allclose(out.re.data, h.re.data, atol=1e-12)
    np.testing.assert_allclose(out.im.data, h.im.data, atol=1e-12)


def test_ft_lstm_f_stage_is_frame_independent():
    rng = np.random.default_rng(11)
    c, f, t, hd = 2, 4, 5, 2
    p = FtLstmParams(
        f_spec=rand_lstm_spec(rng, c, hd, True),
        t_spec=rand_lstm_spec(rng, c, hd, False),
        proj_f_w=0.3 * rng.normal(size=(c, 2 * hd)), proj_f_b=np.zeros(c),
        proj_t_w=np.zeros((c, hd)), proj_t_b=np.zeros(c))
    x = rng.normal(size=(c, f, t))
    perm = np.array([3, 1, 4, 0, 2])
    out, _ = ft_lstm_block(ComplexPair(x, np.zeros_like(x)), p, p)
    out_p, _ = ft_lstm_block(
        ComplexPair(x[:, :, perm].copy(), np.zeros_like(x)), p, p)
    # with the T-stage projection zeroed, permuting frames permutes outputs
    np.testing.assert_allclose(out.re.data[:, :, perm], out_p.re.data, atol=1e-10)


def test_ft_lstm_paper_shape():
    rng = np.random.default_rng(12)
    c, f, t, hd = 96, 79, 3, 8

    def params():
        return FtLstmParams(
            f_spec=rand_lstm_spec(rng, c, hd, True),
            t_spec=rand_lstm_spec(rng, c, hd, False),
            proj_f_w=0.1 * rng.normal(size=(c, 2 * hd)), proj_f_b=np.zeros(c),
            proj_t_w=0.1 * rng.normal(size=(c, hd)), proj_t_b=np.zeros(c))

    h = ComplexPair(rng.normal(size=(c, f, t)), rng.normal(size=(c, f, t)))
    out, states = ft_lstm_block(h, params(), params())
    assert out.shape == (c, f, t)
    assert len(states) == 2


def test_complex_lstm_zero_imag_weights_decouples():
    rng = np.random.default_rng(13)
    t, d, hd = 6, 3, 2
    spec_r = rand_lstm_spec(rng, d, hd)
    zero = LstmSpec(d, hd, False, {"w_ih": np.zeros((4 * hd, d)),
                                   "w_hh": np.zeros((4 * hd, hd)),
                                   "b_ih": np.zeros(4 * hd),
                                   "b_hh": np.zeros(4 * hd)})
    p = ComplexLstmParams(spec_r=spec_r, spec_i=zero,
                          proj_pr=np.eye(d, hd), proj_pi=np.zeros((d, hd)),
                          proj_br=np.zeros(d), proj_bi=np.zeros(d))
    xr = rng.normal(size=(t, d))
    xi = rng.normal(size=(t, d))
    out, _ = complex_lstm(ComplexPair(xr, xi), p)
    yr, _ = lstm_forward(xr, spec_r)
    yi, _ = lstm_forward(xi, spec_r)
    np.testing.assert_allclose(out.re.data, yr.data @ np.eye(d, hd).T, atol=1e-10)
    np.testing.assert_allclose(out.im.data, yi.data @ np.eye(d, hd).T, atol=1e-10)


def test_complex_lstm_real_input_imag_path():
    rng = np.random.default_rng(14)
    t, d, hd = 5, 3, 2
    spec_r = rand_lstm_spec(rng, d, hd)
    spec_i = rand_lstm_spec(rng, d, hd)
    pr, pi = 0.3 * rng.normal(size=(2, d, hd))
    br, bi = 0.3 * rng.normal(size=(2, d))
    p = ComplexLstmParams(spec_r, spec_i, pr, pi, br, bi)
    x = rng.normal(size=(t, d))
    out, _ = complex_lstm(ComplexPair(x, np.zeros((t, d))), p)
    # biases make an LSTM on silence nonzero, so both branches contribute
    yr, _ = lstm_forward(x, spec_r)
    yr0, _ = lstm_forward(np.zeros((t, d)), spec_r)
    yi, _ = lstm_forward(x, spec_i)
    yi0, _ = lstm_forward(np.zeros((t, d)), spec_i)
    ref = complex_linear(ComplexPair(yr.data - yi0.data, yr0.data + yi.data),
                         pr, pi, br, bi)
    np.testing.assert_allclose(out.re.data, ref.re.data, atol=1e-10)
    np.testing.assert_allclose(out.im.data, ref.im.data, atol=1e-10)


def test_complex_lstm_state_carry():
    rng = np.random.default_rng(15)
    t, d, hd = 8, 3, 2
    p = ComplexLstmParams(rand_lstm_spec(rng, d, hd), rand_lstm_spec(rng, d, hd),
                          0.3 * rng.normal(size=(d, hd)), 0.3 * rng.normal(size=(d, hd)),
                          np.zeros(d), np.zeros(d))
    x = ComplexPair(rng.normal(size=(t, d)), rng.normal(size=(t, d)))
    full, _ = complex_lstm(x, p)
    a, st = complex_lstm(ComplexPair(x.re.data[:4], x.im.data[:4]), p)
    b, _ = complex_lstm(ComplexPair(x.re.data[4:], x.im.data[4:]), p, st)
    np.testing.assert_allclose(
        np.concatenate([a.re.data, b.re.data]), full.re.data, atol=1e-12)
    np.testing.assert_allclose(
        np.concatenate([a.im.data, b.im.data]), full.im.data, atol=1e-12)


def deep_filter_loops(coef_re, coef_im, t_re, t_im):
    _, T, F = t_re.shape
    out = np.zeros((T, F), dtype=complex)
    tgt = (t_re[0] + 1j * t_im[0])
    for tt in range(T):
        for ff in range(F):
            for i in (-1, 0, 1):
                for j in (-1, 0, 1):
                    ti, fi = tt + j, ff + i
                    if not (0 <= ti < T and 0 <= fi < F):
                        continue
                    ch = 3 * (i + 1) + (j + 1)
                    out[tt, ff] += (coef_re[ch, tt, ff] + 1j * coef_im[ch, tt, ff]) * tgt[ti, fi]
    return out


def test_deep_filter_delta_tap():
    rng = np.random.default_rng(16)
    t, f = 4, 6
    coef_re = np.zeros((9, t, f))
    coef_re[4] = 1.0  # (0, 0) offset tap
    tr, ti = rng.normal(size=(2, 1, t, f))
    out = deep_filter_apply(ComplexPair(coef_re, np.zeros_like(coef_re)),
                            ComplexPair(tr, ti))
    np.testing.assert_allclose(out.re.data, tr, atol=1e-12)
    np.testing.assert_allclose(out.im.data, ti, atol=1e-12)


def test_deep_filter_lookahead_tap():
    rng = np.random.default_rng(17)
    t, f = 5, 4
    coef_re = np.zeros((9, t, f))
    coef_re[5] = 1.0  # frequency offset 0, time offset +1
    tr = rng.normal(size=(1, t, f))
    out = deep_filter_apply(ComplexPair(coef_re, np.zeros_like(coef_re)),
                            ComplexPair(tr, np.zeros_like(tr)))
    np.testing.assert_allclose(out.re.data[0, :-1], tr[0, 1:], atol=1e-12)
    assert not out.re.data[0, -1].any()  # last frame reads zero


def test_deep_filter_matches_loop_oracle():
    rng = np.random.default_rng(18)
    for _ in range(20):
        t, f = 5, 7
        cr, ci = rng.normal(size=(2, 9, t, f))
        tr, ti = rng.normal(size=(2, 1, t, f))
        out = deep_filter_apply(ComplexPair(cr, ci), ComplexPair(tr, ti))
        ref = deep_filter_loops(cr, ci, tr, ti)
        np.testing.assert_allclose(out.re.data[0], ref.real, atol=1e-6)
        np.testing.assert_allclose(out.im.data[0], ref.imag, atol=1e-6)


def test_prelu_identity_and_zero_slope():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_allclose(prelu(x, np.ones((2, 1, 1))).data, x, atol=1e-12)
    neg = -np.abs(x)
    assert not prelu(neg, np.zeros((2, 1, 1))).data.any()


def test_prelu_gradient_at_unit_inputs():
    for sign in (1.0, -1.0):
        x = as_var(np.full((1, 2, 2), sign))
        alpha = as_var(np.full((1, 1, 1), 0.3))
        prelu(x, alpha).sum().backward()
        h = 1e-6
        fd = (np.sum(prelu(np.full((1, 2, 2), sign + h), 0.3 * np.ones((1, 1, 1))).data)
              - np.sum(prelu(np.full((1, 2, 2), sign - h), 0.3 * np.ones((1, 1, 1))).data)) / (2 * h)
        assert abs(x.grad.sum() - fd) < 1e-6


def test_linear_matches_numpy():
    rng = np.random.default_rng(20)
    x = rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(2, 5))
    b = rng.normal(size=2)
    np.testing.assert_allclose(linear(x, w, b).data, x @ w.T + b, atol=1e-12)
