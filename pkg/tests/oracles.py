"""Reference implementations used only by the tests.

The scalar forward pass below is written with explicit Python loops and
``math`` functions so it shares no vectorised code with the package.
"""
import math

import numpy as np

from skelwatch import indrnn


def naive_cell_step(x, h_prev, W, u, b):
    out = []
    for i in range(len(u)):
        acc = 0.0
        for j in range(len(x)):
            acc += W[i][j] * x[j]
        z = acc + u[i] * h_prev[i] + b[i]
        out.append(z if z > 0 else 0.0)
    return out


def _naive_bn(rows, gamma, beta, mean, var, eps):
    return [[gamma[i] * (r[i] - mean[i]) / math.sqrt(var[i] + eps) + beta[i] for i in range(len(r))]
            for r in rows]


def _naive_batch_stats(rows):
    n = len(rows)
    width = len(rows[0])
    mean = [sum(r[i] for r in rows) / n for i in range(width)]
    var = [sum((r[i] - mean[i]) ** 2 for r in rows) / n for i in range(width)]
    return mean, var


def naive_network_forward(clips, model, mode="eval"):
    """Softmax outputs for a list of ``(T, D)`` clips, one scalar at a time."""
    batch = [[list(map(float, row)) for row in clip] for clip in clips]
    for layer in model.layers:
        W = layer.input_weights.tolist()
        u = layer.recurrent_weights.tolist()
        b = layer.bias.tolist()
        hidden = len(u)
        proj = [[[sum(W[i][j] * x[j] for j in range(len(x))) for i in range(hidden)] for x in seq]
                for seq in batch]
        flat = [row for seq in proj for row in seq]
        bn = layer.bn_pre
        if mode == "train":
            mean, var = _naive_batch_stats(flat)
        else:
            mean, var = bn.running_mean.tolist(), bn.running_var.tolist()
        flat = _naive_bn(flat, bn.gamma.tolist(), bn.beta.tolist(), mean, var, bn.epsilon)
        t_len = len(batch[0])
        pre = [flat[k * t_len:(k + 1) * t_len] for k in range(len(batch))]
        hs = []
        for seq in pre:
            h = [0.0] * hidden
            out = []
            for p in seq:
                h = [max(p[i] + u[i] * h[i] + b[i], 0.0) for i in range(hidden)]
                out.append(h)
            hs.append(out)
        flat = [row for seq in hs for row in seq]
        bn = layer.bn_post
        if mode == "train":
            mean, var = _naive_batch_stats(flat)
        else:
            mean, var = bn.running_mean.tolist(), bn.running_var.tolist()
        flat = _naive_bn(flat, bn.gamma.tolist(), bn.beta.tolist(), mean, var, bn.epsilon)
        batch = [flat[k * t_len:(k + 1) * t_len] for k in range(len(batch))]
    Wc = model.classifier_weights.tolist()
    bc = model.classifier_bias.tolist()
    probs = []
    for seq in batch:
        if model.readout == "last":
            feat = seq[-1]
        else:
            feat = [sum(r[i] for r in seq) / len(seq) for i in range(len(seq[0]))]
        logits = [sum(Wc[c][i] * feat[i] for i in range(len(feat))) + bc[c] for c in range(len(bc))]
        top = max(logits)
        e = [math.exp(v - top) for v in logits]
        s = sum(e)
        probs.append([v / s for v in e])
    return np.array(probs)


def _loss_and_mask(x, y, model):
    logits, _, _, caches = indrnn._forward(x, model, True, False)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(y)), y].mean())
    mask = np.concatenate([(c[2] > 0).ravel() for c in caches])
    return loss, mask


def finite_difference_check(model, x, y, step=1e-4, order=4, skip_kinks=True, abs_floor=1e-6):
    """Compare analytic gradients with central differences, tensor by tensor.

    ``order=2`` is the plain two-point stencil; ``order=4`` uses the
    five-point stencil at the same step, whose truncation error is O(step**4).
    Returns ``{name: (relative_error, n_checked, n_skipped)}`` where the
    error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, abs_floor)``.
    The floor keeps tensors whose true gradient is exactly zero from turning
    round-off into a large ratio.  With ``skip_kinks`` a coordinate is
    excluded when a perturbation flips any ReLU, since the loss is not
    differentiable across that interval.
    """
    if order == 2:
        stencil = ((1, 0.5), (-1, -0.5))
    elif order == 4:
        stencil = ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))
    else:
        raise ValueError("order must be 2 or 4")
    _, grads = indrnn.loss_and_gradients(x, y, model)
    _, base_mask = _loss_and_mask(x, y, model)
    out = {}
    for name, p in model.named_parameters():
        analytic = grads[name]
        num = np.zeros_like(p)
        valid = np.ones(p.shape, dtype=bool)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            acc = 0.0
            for k, w in stencil:
                p[idx] = orig + k * step
                loss, mask = _loss_and_mask(x, y, model)
                acc += w * loss
                if skip_kinks and np.any(mask != base_mask):
                    valid[idx] = False
            p[idx] = orig
            num[idx] = acc / step
        a, n = analytic[valid], num[valid]
        if a.size:
            denom = max(np.abs(a).max(), np.abs(n).max(), abs_floor)
            err = float(np.abs(a - n).max() / denom)
        else:
            err = 0.0
        out[name] = (err, int(valid.sum()), int((~valid).sum()))
    return out


def random_small_model(seed, hidden=8, num_classes=4, clip_len=5, input_dim=57, readout="last"):
    """A model with non-trivial batch-norm parameters and statistics."""
    rng = np.random.default_rng(10_000 + seed)
    model = indrnn.init_model(input_dim, hidden, num_classes, seed=seed, clip_len=clip_len, readout=readout)
    for name, p in model.named_parameters():
        if name.endswith(("gamma",)):
            p[...] = rng.uniform(0.5, 1.5, p.shape)
        elif name.endswith(("beta", "bias")):
            p[...] = rng.normal(0, 0.3, p.shape)
    for layer in model.layers:
        for bn in (layer.bn_pre, layer.bn_post):
            bn.running_mean[...] = rng.normal(0, 0.5, bn.running_mean.shape)
            bn.running_var[...] = rng.uniform(0.5, 2.0, bn.running_var.shape)
            bn.tracked = True
    return model
