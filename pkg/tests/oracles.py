"""Independent brute-force reference implementations used by the tests.

Everything here is written with explicit Python loops against the plain
mathematical definitions, deliberately avoiding the library's vectorized
code paths. Shared conventions (binarization by >=, floor(x+0.5) rounding,
nearest-foreground ties by smallest column then smallest row, thresholds
t/255) are re-stated locally rather than imported.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

EPS = 2.220446049250313e-16  # double-precision machine epsilon


# ---------------------------------------------------------------------------
# discrete Fourier transform


def dft2_brute(x: np.ndarray) -> np.ndarray:
    """O(N^2 * M^2) double loop over frequency bins."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for i in range(h):
                for j in range(w):
                    acc += x[i, j] * cmath.exp(-2j * math.pi * (u * i / h + v * j / w))
            out[u, v] = acc
    return out


def idft2_brute(spec: np.ndarray) -> np.ndarray:
    h, w = spec.shape
    out = np.zeros((h, w), dtype=complex)
    for i in range(h):
        for j in range(w):
            acc = 0.0 + 0.0j
            for u in range(h):
                for v in range(w):
                    acc += spec[u, v] * cmath.exp(2j * math.pi * (u * i / h + v * j / w))
            out[i, j] = acc / (h * w)
    return out


def _mask_extent(size: int, ratio: float) -> int:
    v = ratio * size
    nearest = round(v)
    if abs(v - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(v))


def hfc_residual_oracle(image_hwc: np.ndarray, ratio: float) -> np.ndarray:
    """Brute-force high-frequency residual, before any rescaling."""
    h, w, c = image_hwc.shape
    mh = _mask_extent(h, ratio)
    mw = _mask_extent(w, ratio)
    h0 = h // 2 - mh // 2
    w0 = w // 2 - mw // 2
    out = np.zeros((h, w, c))
    for ch in range(c):
        spec = dft2_brute(image_hwc[:, :, ch].astype(np.float64))
        for u in range(h):
            for v in range(w):
                su = (u + h // 2) % h  # position after a centering shift
                sv = (v + w // 2) % w
                if h0 <= su < h0 + mh and w0 <= sv < w0 + mw:
                    spec[u, v] = 0.0
        out[:, :, ch] = idft2_brute(spec).real
    return out


def hfc_oracle(image_hwc: np.ndarray, ratio: float) -> np.ndarray:
    """Residual followed by the per-image min-max rescale to [0, 1]."""
    res = hfc_residual_oracle(image_hwc, ratio)
    lo = res.min()
    hi = res.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(res)
    return (res - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# dense algebra


def linear_oracle(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """y[n, o] = sum_i x[n, i] * weight[o, i] + bias[o], by explicit loops."""
    n, d_in = x.shape
    d_out = weight.shape[0]
    out = np.zeros((n, d_out))
    for r in range(n):
        for o in range(d_out):
            acc = float(bias[o])
            for i in range(d_in):
                acc += float(x[r, i]) * float(weight[o, i])
            out[r, o] = acc
    return out


def gelu_exact(v: float) -> float:
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def adapter_oracle(features, w_tune, b_tune, w_up, b_up) -> np.ndarray:
    hidden = linear_oracle(features, w_tune, b_tune)
    for r in range(hidden.shape[0]):
        for c in range(hidden.shape[1]):
            hidden[r, c] = gelu_exact(hidden[r, c])
    return linear_oracle(hidden, w_up, b_up)


def softmax_oracle(row: list) -> list:
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def layernorm_oracle(row: list, weight: list, bias: list, eps: float) -> list:
    n = len(row)
    mean = sum(row) / n
    var = sum((v - mean) ** 2 for v in row) / n
    return [
        (row[i] - mean) / math.sqrt(var + eps) * weight[i] + bias[i]
        for i in range(n)
    ]


def single_block_encoder_oracle(image_chw, params, patch_size, embed_dim):
    """Step-by-step ViT forward for one global-attention single-head block.

    params holds numpy arrays: patch_weight (D, C, P, P), patch_bias,
    pos_embed (gh, gw, D), norm1_w/b, qkv_w (3D, D), qkv_b, proj_w, proj_b,
    norm2_w/b, lin1_w/b, lin2_w/b. Returns (N, D).
    """
    c, h, w = image_chw.shape
    gh, gw = h // patch_size, w // patch_size
    n = gh * gw

    tokens = np.zeros((n, embed_dim))
    for py in range(gh):
        for px in range(gw):
            for d in range(embed_dim):
                acc = float(params["patch_bias"][d])
                for ch in range(c):
                    for iy in range(patch_size):
                        for ix in range(patch_size):
                            acc += float(
                                image_chw[ch, py * patch_size + iy, px * patch_size + ix]
                            ) * float(params["patch_weight"][d, ch, iy, ix])
                tokens[py * gw + px, d] = acc

    for py in range(gh):
        for px in range(gw):
            for d in range(embed_dim):
                tokens[py * gw + px, d] += float(params["pos_embed"][py, px, d])

    normed = np.zeros_like(tokens)
    for t in range(n):
        normed[t] = layernorm_oracle(
            list(tokens[t]), list(params["norm1_w"]), list(params["norm1_b"]), 1e-6
        )

    qkv = linear_oracle(normed, params["qkv_w"], params["qkv_b"])
    q, k, v = qkv[:, :embed_dim], qkv[:, embed_dim : 2 * embed_dim], qkv[:, 2 * embed_dim :]
    scale = 1.0 / math.sqrt(embed_dim)  # single head: head_dim == embed_dim

    attended = np.zeros((n, embed_dim))
    for t in range(n):
        scores = [
            sum(float(q[t, d]) * scale * float(k[s, d]) for d in range(embed_dim))
            for s in range(n)
        ]
        weights = softmax_oracle(scores)
        for d in range(embed_dim):
            attended[t, d] = sum(weights[s] * float(v[s, d]) for s in range(n))

    attended = linear_oracle(attended, params["proj_w"], params["proj_b"])
    after_attn = tokens + attended

    normed2 = np.zeros_like(after_attn)
    for t in range(n):
        normed2[t] = layernorm_oracle(
            list(after_attn[t]), list(params["norm2_w"]), list(params["norm2_b"]), 1e-6
        )
    hidden = linear_oracle(normed2, params["lin1_w"], params["lin1_b"])
    for r in range(hidden.shape[0]):
        for cc in range(hidden.shape[1]):
            hidden[r, cc] = gelu_exact(hidden[r, cc])
    mlp_out = linear_oracle(hidden, params["lin2_w"], params["lin2_b"])
    return after_attn + mlp_out


# ---------------------------------------------------------------------------
# losses


def bce_oracle(pred, gt, eps=1e-6):
    h, w = pred.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            p = min(max(float(pred[i, j]), eps), 1.0 - eps)
            g = float(gt[i, j])
            total += -(g * math.log(p) + (1.0 - g) * math.log(1.0 - p))
    return total / (h * w)


def balanced_bce_oracle(pred, gt, eps=1e-6):
    h, w = pred.shape
    n = h * w
    n_pos = sum(float(gt[i, j]) for i in range(h) for j in range(w))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return bce_oracle(pred, gt, eps)
    w_pos = n_neg / n
    w_neg = n_pos / n
    total = 0.0
    for i in range(h):
        for j in range(w):
            p = min(max(float(pred[i, j]), eps), 1.0 - eps)
            g = float(gt[i, j])
            total += -(w_pos * g * math.log(p) + w_neg * (1.0 - g) * math.log(1.0 - p))
    return total / n


def iou_oracle(pred, gt, eps=1e-6):
    h, w = pred.shape
    inter = 0.0
    p_sum = 0.0
    g_sum = 0.0
    for i in range(h):
        for j in range(w):
            p = float(pred[i, j])
            g = float(gt[i, j])
            inter += p * g
            p_sum += p
            g_sum += g
    return 1.0 - (inter + eps) / (p_sum + g_sum - inter + eps)


# ---------------------------------------------------------------------------
# metrics


def mae_oracle(pred, gt):
    h, w = pred.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += abs(float(pred[i, j]) - float(gt[i, j]))
    return total / (h * w)


def ber_oracle(pred, gt, threshold=0.5):
    tp = fn = tn = fp = 0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            positive = float(pred[i, j]) >= threshold
            truth = float(gt[i, j]) >= 0.5
            if truth and positive:
                tp += 1
            elif truth:
                fn += 1
            elif positive:
                fp += 1
            else:
                tn += 1
    pos_acc = tp / (tp + fn) if (tp + fn) else 1.0
    neg_acc = tn / (tn + fp) if (tn + fp) else 1.0
    return 100.0 * (1.0 - 0.5 * (pos_acc + neg_acc))


def dice_iou_oracle(pred, gt, threshold=0.5):
    inter = p = g = 0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            bp = float(pred[i, j]) >= threshold
            bg = float(gt[i, j]) >= 0.5
            inter += bp and bg
            p += bp
            g += bg
    if p == 0 and g == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (p + g)
    union = p + g - inter
    iou = inter / union if union else 1.0
    return dice, iou


def _s_object_term(values):
    n = len(values)
    if n == 0:
        return 0.0
    x = sum(values) / n
    if n > 1:
        sigma = math.sqrt(sum((v - x) ** 2 for v in values) / (n - 1))
    else:
        sigma = 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_ssim_term(pred_block, gt_block):
    n = len(pred_block)
    if n == 0:
        return 0.0
    x = sum(pred_block) / n
    y = sum(gt_block) / n
    if n > 1:
        sx = sum((v - x) ** 2 for v in pred_block) / (n - 1)
        sy = sum((v - y) ** 2 for v in gt_block) / (n - 1)
        sxy = sum((pred_block[i] - x) * (gt_block[i] - y) for i in range(n)) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return a / (b + EPS)
    return 1.0 if b == 0.0 else 0.0


def s_measure_oracle(pred, gt, alpha=0.5):
    h, w = pred.shape
    n = h * w
    fg = [(i, j) for i in range(h) for j in range(w) if float(gt[i, j]) >= 0.5]
    mu = len(fg) / n
    if mu == 0.0:
        return 1.0 - sum(float(pred[i, j]) for i in range(h) for j in range(w)) / n
    if mu == 1.0:
        return sum(float(pred[i, j]) for i in range(h) for j in range(w)) / n

    fg_vals = [float(pred[i, j]) for (i, j) in fg]
    bg_vals = [
        1.0 - float(pred[i, j])
        for i in range(h)
        for j in range(w)
        if float(gt[i, j]) < 0.5
    ]
    s_obj = mu * _s_object_term(fg_vals) + (1.0 - mu) * _s_object_term(bg_vals)

    cy = math.floor(sum(i for i, _ in fg) / len(fg) + 0.5) + 1
    cx = math.floor(sum(j for _, j in fg) / len(fg) + 0.5) + 1
    s_reg = 0.0
    for r0, r1, c0, c1 in ((0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)):
        p_blk = [float(pred[i, j]) for i in range(r0, r1) for j in range(c0, c1)]
        g_blk = [float(gt[i, j]) for i in range(r0, r1) for j in range(c0, c1)]
        s_reg += (len(p_blk) / n) * _s_ssim_term(p_blk, g_blk)

    return max(0.0, alpha * s_obj + (1.0 - alpha) * s_reg)


def e_measure_oracle(pred, gt):
    h, w = pred.shape
    n = h * w
    fg = sum(1 for i in range(h) for j in range(w) if float(gt[i, j]) >= 0.5)
    gt_mean = fg / n
    total = 0.0
    for t in range(256):
        thr = t / 255.0
        binarized = [
            [1.0 if float(pred[i, j]) >= thr else 0.0 for j in range(w)] for i in range(h)
        ]
        if fg == 0:
            total += sum(1.0 - binarized[i][j] for i in range(h) for j in range(w)) / n
            continue
        if fg == n:
            total += sum(binarized[i][j] for i in range(h) for j in range(w)) / n
            continue
        bin_mean = sum(binarized[i][j] for i in range(h) for j in range(w)) / n
        acc = 0.0
        for i in range(h):
            for j in range(w):
                dg = float(gt[i, j]) - gt_mean
                dp = binarized[i][j] - bin_mean
                align = 2.0 * dg * dp / (dg * dg + dp * dp + EPS)
                acc += (align + 1.0) ** 2 / 4.0
        total += acc / n
    return total / 256.0


def weighted_fbeta_oracle(pred, gt, beta2=1.0):
    h, w = pred.shape
    fg = [(i, j) for i in range(h) for j in range(w) if float(gt[i, j]) >= 0.5]
    if not fg:
        return 0.0

    err = [[abs(float(pred[i, j]) - float(gt[i, j])) for j in range(w)] for i in range(h)]

    # Nearest foreground pixel per background pixel; ties resolve toward the
    # smallest column, then the smallest row.
    dep_err = [row[:] for row in err]
    dist = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            if float(gt[i, j]) >= 0.5:
                continue
            best = None
            for (fi, fj) in fg:
                d2 = (fi - i) ** 2 + (fj - j) ** 2
                key = (d2, fj, fi)
                if best is None or key < best[0]:
                    best = (key, fi, fj)
            dist[i][j] = math.sqrt(best[0][0])
            dep_err[i][j] = err[best[1]][best[2]]

    # 7x7 gaussian (sigma 5), normalized, correlated with edge replication.
    kernel = [
        [math.exp(-((ky - 3) ** 2 + (kx - 3) ** 2) / 50.0) for kx in range(7)]
        for ky in range(7)
    ]
    ksum = sum(sum(row) for row in kernel)
    kernel = [[v / ksum for v in row] for row in kernel]
    blurred = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for ky in range(7):
                for kx in range(7):
                    src_i = min(max(i + ky - 3, 0), h - 1)
                    src_j = min(max(j + kx - 3, 0), w - 1)
                    acc += kernel[ky][kx] * dep_err[src_i][src_j]
            blurred[i][j] = acc

    min_err = [row[:] for row in err]
    for i in range(h):
        for j in range(w):
            if float(gt[i, j]) >= 0.5 and blurred[i][j] < err[i][j]:
                min_err[i][j] = blurred[i][j]

    log_half = math.log(0.5)
    tp_w = 0.0
    fp_w = 0.0
    fg_err_sum = 0.0
    for i in range(h):
        for j in range(w):
            if float(gt[i, j]) >= 0.5:
                fg_err_sum += min_err[i][j]
            else:
                weight = 2.0 - math.exp(log_half / 5.0 * dist[i][j])
                fp_w += min_err[i][j] * weight
    tp_w = len(fg) - fg_err_sum
    recall = 1.0 - fg_err_sum / len(fg)
    precision = tp_w / (tp_w + fp_w + EPS)
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall + EPS)
