"""Literal loop implementations used only to cross-check the vectorized code paths.

Nothing here imports from the numerical modules; every formula is spelled out
with plain Python loops and the ``math`` module so agreement is meaningful.
"""
import math


def reference_conv2d(grid, kernel, bias=None):
    """Same-padded cross-correlation of nested lists/arrays ``grid[c][i][j]``.

    Padding before = (k - 1) // 2, the remainder after; out-of-range taps read 0.
    """
    channels = len(grid)
    height = len(grid[0])
    width = len(grid[0][0])
    out_ch = len(kernel)
    kh = len(kernel[0][0])
    kw = len(kernel[0][0][0])
    top = (kh - 1) // 2
    left = (kw - 1) // 2
    out = []
    for o in range(out_ch):
        plane = []
        for i in range(height):
            row = []
            for j in range(width):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(channels):
                    for a in range(kh):
                        for b in range(kw):
                            ii = i + a - top
                            jj = j + b - left
                            if 0 <= ii < height and 0 <= jj < width:
                                acc += float(grid[c][ii][jj]) * float(kernel[o][c][a][b])
                row.append(acc)
            plane.append(row)
        out.append(plane)
    return out


def _sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _act(name, v):
    if name == "tanh":
        return math.tanh(v)
    if name == "relu":
        return v if v > 0 else 0.0
    raise ValueError(name)


def reference_cell_step(p, x, h_prev, c_prev, activation="tanh"):
    """One ConvLSTM step on a single sample, gate by gate.

    ``p`` maps the tensor names W_xi..b_o to nested sequences. Returns ``(H, C)``
    as nested lists shaped (filters, h, w).
    """
    filters = len(p["b_i"])
    height = len(x[0])
    width = len(x[0][0])

    def pre(wx, wh, bias):
        a = reference_conv2d(x, wx, bias)
        b = reference_conv2d(h_prev, wh)
        return [[[a[f][i][j] + b[f][i][j] for j in range(width)] for i in range(height)] for f in range(filters)]

    zi = pre(p["W_xi"], p["W_hi"], p["b_i"])
    zf = pre(p["W_xf"], p["W_hf"], p["b_f"])
    zc = pre(p["W_xc"], p["W_hc"], p["b_c"])
    zo = pre(p["W_xo"], p["W_ho"], p["b_o"])
    H = [[[0.0] * width for _ in range(height)] for _ in range(filters)]
    C = [[[0.0] * width for _ in range(height)] for _ in range(filters)]
    for f in range(filters):
        for i in range(height):
            for j in range(width):
                cp = float(c_prev[f][i][j])
                ig = _sigmoid(zi[f][i][j] + float(p["W_ci"][f][i][j]) * cp)
                fg = _sigmoid(zf[f][i][j] + float(p["W_cf"][f][i][j]) * cp)
                c = fg * cp + ig * _act(activation, zc[f][i][j])
                og = _sigmoid(zo[f][i][j] + float(p["W_co"][f][i][j]) * c)
                C[f][i][j] = c
                H[f][i][j] = og * _act(activation, c)
    return H, C


def _mean(xs):
    total = 0.0
    for v in xs:
        total += v
    return total / len(xs)


def reference_pearson(obs, pred):
    mo = _mean(obs)
    mp = _mean(pred)
    sxy = sxx = syy = 0.0
    for o, q in zip(obs, pred):
        sxy += (o - mo) * (q - mp)
        sxx += (o - mo) ** 2
        syy += (q - mp) ** 2
    return sxy / math.sqrt(sxx * syy)


def reference_nse(obs, pred):
    mo = _mean(obs)
    num = den = 0.0
    for o, q in zip(obs, pred):
        num += (o - q) ** 2
        den += (o - mo) ** 2
    return 1.0 - num / den


def reference_nrmse(obs, pred):
    sse = 0.0
    for o, q in zip(obs, pred):
        sse += (o - q) ** 2
    return math.sqrt(sse / len(obs)) / _mean(obs)


def reference_metrics(obs, pred):
    obs = [float(v) for v in obs]
    pred = [float(v) for v in pred]
    return {
        "cc": reference_pearson(obs, pred),
        "nse": reference_nse(obs, pred),
        "nrmse": reference_nrmse(obs, pred),
    }


def count_windows_brute_force(hours, input_length, lead):
    """Count anchors t whose inputs t-L+1..t and target t+lead all lie inside 0..hours-1."""
    n = 0
    for t in range(hours):
        if t - input_length + 1 >= 0 and t + lead <= hours - 1:
            n += 1
    return n
