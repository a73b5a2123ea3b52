"""Independent reference computations used to check the package.

Everything here is written from the definitions, deliberately slow and
plain: exact rational arithmetic where ties matter, explicit loops instead
of vectorized shortcuts.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

# -- order statistics -----------------------------------------------------------


def quartile_by_position(values, position: Fraction) -> float:
    """1-based positional quartile with linear interpolation between neighbours."""
    s = sorted(values)
    n = len(s)
    lo = math.floor(position)
    frac = position - lo
    lo = min(max(lo, 1), n)
    hi = min(lo + 1, n)
    return float(s[lo - 1] + frac * (s[hi - 1] - s[lo - 1]))


def iqr_bound(values) -> float:
    n = len(values)
    q1 = quartile_by_position(values, Fraction(n + 1, 4))
    q3 = quartile_by_position(values, Fraction(3 * (n + 1), 4))
    return q3 + 1.5 * (q3 - q1)


# -- robust location -------------------------------------------------------------


def mcd_mean_oracle(values) -> float:
    """Enumerate every half-sample window; exact variances, lowest start on ties."""
    xs = sorted(Fraction(v) for v in values)
    n = len(xs)
    h = -(-(n + 1) // 2)
    best = None
    for start in range(n - h + 1):
        win = xs[start : start + h]
        mean = sum(win) / h
        var = sum((w - mean) ** 2 for w in win) / h
        if best is None or var < best[0]:
            best = (var, mean)
    return float(best[1])


def mcd_variance_gap(values) -> float:
    """Gap between the smallest and second-smallest half-window variance."""
    xs = sorted(Fraction(v) for v in values)
    n = len(xs)
    h = -(-(n + 1) // 2)
    var = []
    for start in range(n - h + 1):
        win = xs[start : start + h]
        mean = sum(win) / h
        var.append(sum((w - mean) ** 2 for w in win) / h)
    var.sort()
    return float(var[1] - var[0]) if len(var) > 1 else math.inf


def mad_oracle(values) -> float:
    xs = sorted(Fraction(v) for v in values)

    def median(s):
        s = sorted(s)
        m = len(s)
        return s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2

    med = median(xs)
    return float(median([abs(x - med) for x in xs]))


# -- 1-d two-means ----------------------------------------------------------------


def _sse(group) -> Fraction:
    m = sum(group) / len(group)
    return sum((g - m) ** 2 for g in group)


def two_means_split_oracle(values) -> tuple[list[float], list[float]]:
    """Best contiguous split of the sorted values, exact SSE, first minimum wins."""
    xs = sorted(Fraction(v) for v in values)
    best = None
    for k in range(1, len(xs)):
        cost = _sse(xs[:k]) + _sse(xs[k:])
        if best is None or cost < best[0]:
            best = (cost, k)
    k = best[1]
    return [float(v) for v in xs[:k]], [float(v) for v in xs[k:]]


def two_means_subset_oracle(values) -> Fraction:
    """Minimum SSE over every 2-partition (any subsets), for small inputs."""
    xs = [Fraction(v) for v in values]
    n = len(xs)
    best = None
    for r in range(1, n):
        for idx in itertools.combinations(range(n), r):
            if 0 not in idx:  # each partition once
                continue
            a = [xs[i] for i in idx]
            b = [xs[i] for i in range(n) if i not in idx]
            cost = _sse(a) + _sse(b)
            best = cost if best is None or cost < best else best
    return best


def split_sse(low, high) -> Fraction:
    return _sse([Fraction(v) for v in low]) + _sse([Fraction(v) for v in high])


# -- extreme values --------------------------------------------------------------


def gpd_inverse_cdf_sample(shape: float, scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n)
    if shape == 0.0:
        return -scale * np.log1p(-u)
    return scale * ((1.0 - u) ** (-shape) - 1.0) / shape


# -- autoencoder reference (no proximal term anywhere) -----------------------------


def ref_forward(Ws, bs, X, masks=None):
    """Returns (output, activations, pre-activations)."""
    acts, pres = [X], []
    a = X
    last = len(Ws) - 1
    for i in range(len(Ws)):
        z = a.dot(Ws[i]) + bs[i]
        pres.append(z)
        if i == last:
            a = 1.0 / (1.0 + np.exp(-z))
        else:
            a = np.where(z > 0, z, 0.0)
            if masks is not None and masks[i] is not None:
                a = a * masks[i]
        acts.append(a)
    return a, acts, pres


def ref_loss(Ws, bs, X, l2, masks=None) -> float:
    out, _, _ = ref_forward(Ws, bs, X, masks)
    return float(np.mean((out - X) ** 2) + l2 * sum(float((W**2).sum()) for W in Ws))


def ref_gradients(Ws, bs, X, l2, masks=None):
    out, acts, pres = ref_forward(Ws, bs, X, masks)
    g_out = 2.0 * (out - X) / X.size
    delta = g_out * out * (1.0 - out)
    gW, gb = [None] * len(Ws), [None] * len(Ws)
    for i in reversed(range(len(Ws))):
        gW[i] = acts[i].T.dot(delta) + 2.0 * l2 * Ws[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            back = delta.dot(Ws[i].T)
            if masks is not None and masks[i - 1] is not None:
                back = back * masks[i - 1]
            delta = back * (pres[i - 1] > 0)
    return gW, gb


def fedavg_train_local(Ws, bs, X, epochs, batch, lr, l2, dropout, sample_cap, seed):
    """Plain mini-batch descent with the same random stream consumption."""
    Ws = [W.copy() for W in Ws]
    bs = [b.copy() for b in bs]
    X = X[-sample_cap:]
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    keep = 1.0 - dropout
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            B = X[order[s : s + batch]]
            masks = None
            if dropout > 0:
                masks = []
                a = B
                for i in range(len(Ws) - 1):
                    z = a.dot(Ws[i]) + bs[i]
                    h = np.where(z > 0, z, 0.0)
                    m = (rng.random(h.shape) < keep) / keep
                    masks.append(m)
                    a = h * m
            gW, gb = ref_gradients(Ws, bs, B, l2, masks)
            Ws = [W - lr * g for W, g in zip(Ws, gW)]
            bs = [b - lr * g for b, g in zip(bs, gb)]
    return Ws, bs, n


def ref_errors(Ws, bs, X) -> np.ndarray:
    out, _, _ = ref_forward(Ws, bs, X)
    return np.mean((out - X) ** 2, axis=1)


# -- finite differences -------------------------------------------------------------


def central_difference(f, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (f(up) - f(dn)) / (2 * step)
    return g


# -- density clustering -------------------------------------------------------------


def dbscan_bruteforce(X, eps, min_pts):
    """Core set, core components and noise set straight from the definitions."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    near = [[j for j in range(n) if math.dist(X[i], X[j]) <= eps] for i in range(n)]
    core = [len(near[i]) >= min_pts for i in range(n)]
    comp = [-1] * n
    c = 0
    for i in range(n):
        if not core[i] or comp[i] != -1:
            continue
        stack = [i]
        comp[i] = c
        while stack:
            j = stack.pop()
            for k in near[j]:
                if core[k] and comp[k] == -1:
                    comp[k] = c
                    stack.append(k)
        c += 1
    noise = {i for i in range(n) if not core[i] and not any(core[j] for j in near[i])}
    return core, comp, noise, near


# -- isolation trees ----------------------------------------------------------------


def c_of_n(n: int) -> float:
    """Standard isolation normaliser, H(n-1) approximated by ln(n-1) + gamma."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + 0.5772156649015329) - 2.0 * (n - 1) / n


def tree_path(node, x, depth=0) -> float:
    if node.left is None:
        return depth + c_of_n(node.size)
    child = node.left if x[node.feature] < node.split else node.right
    return tree_path(child, x, depth + 1)


# -- federated averaging reference --------------------------------------------------


def fedavg_reference_simulation(streams, cfg, w0_Ws, w0_bs):
    """Proximal-free replay of the semi-synchronous protocol.

    ``streams`` maps user id -> time-ordered records; the package is only
    used for featurization and seed derivation. Returns the per-round
    global parameters and held-out MSE.
    """
    from frba.features import featurize_stream
    from frba.federation import derive_seed

    t = cfg.train
    uids = sorted(streams)
    events, held = [], []
    for idx, uid in enumerate(uids):
        pairs, _ = featurize_stream(streams[uid], **cfg.profile)
        k = 0
        for rec, vec in pairs:
            h = False
            if rec.success:
                k += 1
                if cfg.holdout_every and k % cfg.holdout_every == 0:
                    h = True
                    held.append(vec.values)
            events.append((rec.timestamp, idx, rec.success, h, vec.values))
    events.sort(key=lambda e: (e[0], e[1]))
    X_eval = np.vstack(held)
    quorum = max(1, math.ceil(round(cfg.participation_fraction * len(uids), 9)))

    g_Ws, g_bs = [W.copy() for W in w0_Ws], [b.copy() for b in w0_bs]
    local = {i: {"data": [], "new": 0, "W": g_Ws, "b": g_bs, "n_tr": 0} for i in range(len(uids))}
    pending = {}
    rounds = []
    for _, idx, ok, h, vec in events:
        if len(rounds) >= cfg.max_iter:
            break
        if not ok:
            continue
        c = local[idx]
        if not h:
            c["data"].append(vec)
        c["new"] += 1
        if c["new"] < t.update_threshold or not c["data"]:
            continue
        seed = derive_seed(cfg.seed, idx, c["n_tr"])
        Ws, bs, n = fedavg_train_local(
            c["W"], c["b"], np.vstack(c["data"]), t.epochs, t.batch_size, t.learning_rate,
            t.l2_lambda, t.dropout_rate, t.sample_cap, seed,
        )
        c["n_tr"] += 1
        c["new"] = 0
        pending[uids[idx]] = (Ws, bs, n)
        if len(pending) < quorum:
            continue
        total = sum(p[2] for p in pending.values())
        new_W = new_b = None
        for uid in sorted(pending):
            Ws, bs, n = pending[uid]
            sW = [(n / total) * W for W in Ws]
            sb = [(n / total) * b for b in bs]
            new_W = sW if new_W is None else [a + b for a, b in zip(new_W, sW)]
            new_b = sb if new_b is None else [a + b for a, b in zip(new_b, sb)]
        pending = {}
        g_Ws, g_bs = new_W, new_b
        for cl in local.values():
            cl["W"], cl["b"] = g_Ws, g_bs
        rounds.append((g_Ws, g_bs, float(np.mean(ref_errors(g_Ws, g_bs, X_eval)))))
    return rounds
