"""Slow loop-based numpy references used as independent oracles.

Nothing here calls into torch's conv/pool/interpolate kernels; parameters are
read off modules as plain arrays.
"""
import math

import numpy as np


def arr(t):
    return t.detach().cpu().double().numpy()


def conv2d(x, w, b=None, padding=0, dilation=1):
    """x: C x H x W, w: O x C x k x k. Zero padding, stride 1."""
    c, h, wd = x.shape
    o, c2, k, _ = w.shape
    assert c == c2
    out_h = h + 2 * padding - dilation * (k - 1)
    out_w = wd + 2 * padding - dilation * (k - 1)
    out = np.zeros((o, out_h, out_w))
    for y in range(out_h):
        for xx in range(out_w):
            acc = np.zeros(o)
            for ky in range(k):
                for kx in range(k):
                    iy = y - padding + ky * dilation
                    ix = xx - padding + kx * dilation
                    if 0 <= iy < h and 0 <= ix < wd:
                        acc += w[:, :, ky, kx] @ x[:, iy, ix]
            out[:, y, xx] = acc
    if b is not None:
        out += b[:, None, None]
    return out


def batchnorm_eval(x, bn):
    mean, var = arr(bn.running_mean), arr(bn.running_var)
    gamma, beta = arr(bn.weight), arr(bn.bias)
    return (x - mean[:, None, None]) / np.sqrt(var[:, None, None] + bn.eps) * gamma[:, None, None] + beta[:, None, None]


def relu(x):
    return np.maximum(x, 0.0)


def cbr(x, seq):
    """Conv-BN-ReLU nn.Sequential applied in eval mode."""
    conv, bn = seq[0], seq[1]
    y = conv2d(x, arr(conv.weight), None if conv.bias is None else arr(conv.bias),
               padding=conv.padding[0], dilation=conv.dilation[0])
    return relu(batchnorm_eval(y, bn))


def bilinear(x, out_h, out_w):
    """Half-pixel-centre bilinear resize (align_corners=False), C x H x W."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))

    def coords(dst, n_in, n_out):
        src = (dst + 0.5) * n_in / n_out - 0.5
        src = max(src, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    for y in range(out_h):
        y0, y1, ly = coords(y, h, out_h)
        for xx in range(out_w):
            x0, x1, lx = coords(xx, w, out_w)
            out[:, y, xx] = ((1 - ly) * ((1 - lx) * x[:, y0, x0] + lx * x[:, y0, x1])
                             + ly * ((1 - lx) * x[:, y1, x0] + lx * x[:, y1, x1]))
    return out


def adaptive_pool(x, out_h, out_w, reduce):
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for i in range(out_h):
        ys, ye = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            xs, xe = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            for ch in range(c):
                out[ch, i, j] = reduce(x[ch, ys:ye, xs:xe])
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def hcdu_pyramid(unit, f):
    """Straight-line replay of one HCDU body (eval mode) on a C x H x W array."""
    c = unit.out_channels
    cu = unit.group_width
    e = cbr(f, unit.expand)
    k = [e[i * c:(i + 1) * c] for i in range(6)]

    def ccbrs(mod, *parts):
        y = cbr(np.concatenate(parts, axis=0), mod.cbr)
        return [y[i * cu:(i + 1) * cu] for i in range(mod.parts)]

    groups = [ccbrs(unit.solo_first, k[0])]
    carry = k[0]
    for j in range(5):
        left = k[j] if unit.pair_mode == "raw" else carry
        g = ccbrs(unit.pairs[j], left, k[j + 1])
        groups.append(g)
        carry = g[1]
    groups.append(ccbrs(unit.solo_last, k[5]))
    t = np.concatenate([g[0] for g in groups], axis=0)
    m = np.concatenate([g[-1] for g in groups], axis=0)

    pooled = m.mean(axis=(1, 2))
    w1, b1 = arr(unit.weight.fc1.weight)[:, :, 0, 0], arr(unit.weight.fc1.bias)
    w2, b2 = arr(unit.weight.fc2.weight)[:, :, 0, 0], arr(unit.weight.fc2.bias)
    gate = sigmoid(w2 @ relu(w1 @ pooled + b1) + b2)

    y = conv2d(gate[:, None, None] * t, arr(unit.fuse_conv.weight), None, padding=1)
    return relu(f + batchnorm_eval(y, unit.fuse_bn))


def refine_step(refiner, x, m_prev):
    """One application of the refinement function on C x H x W arrays."""

    def conv(mod, inp):
        return conv2d(inp, arr(mod.weight), arr(mod.bias), padding=mod.padding[0], dilation=mod.dilation[0])

    def block(b, inp, skip):
        return skip + relu(conv(b.conv2, relu(conv(b.conv1, inp))))

    k1 = block(refiner.block1, np.concatenate([x, m_prev], axis=0), x)
    k2 = block(refiner.block2, k1, k1)
    k3 = block(refiner.block3, k2, k2)

    aspp = refiner.aspp
    h, w = k3.shape[1:]
    feats = [relu(conv(c, k3)) for c in aspp.atrous]
    pooled = k3.mean(axis=(1, 2))[:, None, None]
    pooled = relu(conv(aspp.image_pool, pooled))
    feats.append(np.broadcast_to(pooled, (pooled.shape[0], h, w)))
    a = relu(conv(aspp.project, np.concatenate(feats, axis=0)))
    return conv(refiner.head2, conv(refiner.head1, a))


def fuse(generator, f12, f10, f07):
    """Per-pixel softmax over the generator's three logits, then a weighted sum."""
    h = np.concatenate([f12, f10, f07], axis=0)
    for seq in generator.body:
        h = cbr(h, seq)
    head = generator.head
    logits = conv2d(h, arr(head.weight), arr(head.bias))
    out = np.zeros_like(f10)
    for y in range(f10.shape[1]):
        for x in range(f10.shape[2]):
            e = [math.exp(v) for v in logits[:, y, x]]
            s = sum(e)
            out[:, y, x] = (e[0] * f12[:, y, x] + e[1] * f10[:, y, x] + e[2] * f07[:, y, x]) / s
    return out


def bce(p, g, eps=1e-7):
    total = 0.0
    for pv, gv in zip(np.ravel(p), np.ravel(g)):
        pv = min(max(float(pv), eps), 1 - eps)
        total += -(gv * math.log(pv) + (1 - gv) * math.log(1 - pv))
    return total / np.size(p)


def ual(p):
    return sum(1 - (2 * float(v) - 1) ** 2 for v in np.ravel(p)) / np.size(p)


def counts(pred, gt, thr=0.5):
    tp = fp = tn = fn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        pos = p >= thr
        if pos and g:
            tp += 1
        elif pos:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def image_metrics(pred, gt):
    """(iou, mae, ber) by direct pixel counting."""
    tp, fp, tn, fn = counts(pred, gt)
    union = tp + fp + fn
    iou = 1.0 if union == 0 else tp / union
    err = sum(abs(float(p) - float(g)) for p, g in zip(np.ravel(pred), np.ravel(gt))) / np.size(pred)
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    ber = 100 * (1 - sum(rates) / len(rates)) if rates else 0.0
    return iou, err, ber


def central_diff(fn, x, eps=1e-6):
    """Numeric gradient of scalar ``fn()`` w.r.t. tensor ``x`` (perturbed in place)."""
    import torch

    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        hi = fn().item()
        flat[i] = old - eps
        lo = fn().item()
        flat[i] = old
        grad.view(-1)[i] = (hi - lo) / (2 * eps)
    return grad
