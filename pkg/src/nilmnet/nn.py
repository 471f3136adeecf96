"""Minimal differentiable kernels for the disaggregation networks.

Every layer needed by the architecture is implemented here with an explicit
forward pass and an analytic backward pass: 1-D convolution, dense layers,
LSTM cells, a bidirectional LSTM, the feed-forward attention unit, the two
losses, and SGD with Nesterov momentum. There is no general autodiff graph;
layers cache whatever their own backward pass needs, so a forward call must
be paired with the matching backward call on the same instance.

Arrays are batch-first throughout:

    Conv1D     (B, C_in, L) -> (B, F, L)
    Dense      (B, n)       -> (B, m)
    BiLSTM     (B, T, d)    -> (B, T, 2H)
    Attention  (B, T, 2H)   -> context (B, 2H), weights (B, T)

Training runs in float32; tests instantiate everything in float64 so that
analytic gradients can be compared against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("relu", "linear", "sigmoid", "tanh")


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Numerically stable logistic function (no overflow for large |x|)."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Stable softmax: shifts by the max so exp never overflows."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _apply_activation(pre, activation):
    if activation == "relu":
        return relu(pre)
    if activation == "linear":
        return pre
    if activation == "sigmoid":
        return sigmoid(pre)
    if activation == "tanh":
        return np.tanh(pre)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(d_out, pre, out, activation):
    """Gradient w.r.t. the pre-activation, given the output gradient."""
    if activation == "relu":
        return d_out * (pre > 0)
    if activation == "linear":
        return d_out
    if activation == "sigmoid":
        return d_out * out * (1.0 - out)
    if activation == "tanh":
        return d_out * (1.0 - out * out)
    raise ValueError(f"unknown activation {activation!r}")


class LayerParams:
    """Named weight tensors of one layer plus matching gradient buffers."""

    def __init__(self, name, weights):
        self.name = name
        self.weights = dict(weights)
        self.grads = {k: np.zeros_like(v) for k, v in self.weights.items()}

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    @property
    def n_params(self):
        return sum(w.size for w in self.weights.values())

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.weights.items()}
        return f"LayerParams({self.name!r}, {shapes})"


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def same_padding(kernel):
    """Left/right zero padding that keeps the sequence length unchanged.

    With stride 1 the total padding must be kernel-1; the left side takes
    floor(kernel/2), so even kernels pad one column less on the right.
    """
    left = kernel // 2
    return left, kernel - 1 - left


class Conv1D:
    """1-D convolution over the last axis, stride 1, length-preserving."""

    def __init__(self, name, in_channels, filters, kernel, activation="relu",
                 rng=None, dtype=np.float32):
        if kernel < 1:
            raise ShapeError("kernel size must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation
        fan_in = in_channels * kernel
        if rng is None:
            weight = np.zeros((filters, in_channels, kernel), dtype=dtype)
        else:
            weight = he_uniform(rng, (filters, in_channels, kernel), fan_in, dtype)
        self.params = LayerParams(name, {
            "W": weight,
            "b": np.zeros(filters, dtype=dtype),
        })
        self._cache = None

    def forward(self, x):
        """x: (B, C_in, L) -> (B, F, L)."""
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.params.name}: expected (B, {self.in_channels}, L), got {x.shape}")
        b_sz, _, length = x.shape
        k = self.kernel
        pl, pr = same_padding(k)
        xp = np.pad(x, ((0, 0), (0, 0), (pl, pr)))
        # im2col: (B, L, C_in*K) patches against (F, C_in*K) filters
        patches = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
        cols = patches.transpose(0, 2, 1, 3).reshape(b_sz, length, -1)
        w = self.params.weights["W"].reshape(self.filters, -1)
        pre = cols @ w.T + self.params.weights["b"]
        out = _apply_activation(pre, self.activation)
        self._cache = (cols, pre, out, x.shape)
        return out.transpose(0, 2, 1)

    def backward(self, d_out):
        """d_out: (B, F, L) -> gradient w.r.t. the input, (B, C_in, L)."""
        cols, pre, out, x_shape = self._cache
        b_sz, c_in, length = x_shape
        if d_out.shape != (b_sz, self.filters, length):
            raise ShapeError(
                f"{self.params.name}: upstream shape {d_out.shape} does not match "
                f"forward output {(b_sz, self.filters, length)}")
        d_pre = _activation_grad(d_out.transpose(0, 2, 1), pre, out, self.activation)
        w = self.params.weights["W"].reshape(self.filters, -1)
        flat_pre = d_pre.reshape(-1, self.filters)
        flat_cols = cols.reshape(-1, cols.shape[-1])
        self.params.grads["W"] += (flat_pre.T @ flat_cols).reshape(
            self.params.weights["W"].shape)
        self.params.grads["b"] += flat_pre.sum(axis=0)
        d_cols = (d_pre @ w).reshape(b_sz, length, c_in, self.kernel)
        d_cols = d_cols.transpose(0, 2, 1, 3)          # (B, C_in, L, K)
        k = self.kernel
        pl, pr = same_padding(k)
        d_xp = np.zeros((b_sz, c_in, length + pl + pr), dtype=d_out.dtype)
        for j in range(k):
            d_xp[:, :, j:j + length] += d_cols[:, :, :, j]
        return d_xp[:, :, pl:pl + length]


class Dense:
    """Fully connected layer: out = act(x @ W.T + b)."""

    def __init__(self, name, in_features, units, activation="linear",
                 rng=None, dtype=np.float32):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = in_features
        self.units = units
        self.activation = activation
        if rng is None:
            weight = np.zeros((units, in_features), dtype=dtype)
        elif activation == "relu":
            weight = he_uniform(rng, (units, in_features), in_features, dtype)
        else:
            weight = glorot_uniform(rng, (units, in_features), in_features, units, dtype)
        self.params = LayerParams(name, {
            "W": weight,
            "b": np.zeros(units, dtype=dtype),
        })
        self._cache = None

    def forward(self, x):
        """x: (B, n) -> (B, m)."""
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.params.name}: expected (B, {self.in_features}), got {x.shape}")
        pre = x @ self.params.weights["W"].T + self.params.weights["b"]
        out = _apply_activation(pre, self.activation)
        self._cache = (x, pre, out)
        return out

    def backward(self, d_out):
        x, pre, out = self._cache
        if d_out.shape != out.shape:
            raise ShapeError(
                f"{self.params.name}: upstream shape {d_out.shape} does not match "
                f"forward output {out.shape}")
        d_pre = _activation_grad(d_out, pre, out, self.activation)
        self.params.grads["W"] += d_pre.T @ x
        self.params.grads["b"] += d_pre.sum(axis=0)
        return d_pre @ self.params.weights["W"]


class LSTMCell:
    """Standard LSTM cell with packed gate parameters, order (i, f, g, o).

    W: (4H, d) input weights, U: (4H, H) recurrent weights, b: (4H,).
    The forget-gate bias block is initialized to 1 when an rng is given.
    """

    def __init__(self, name, input_size, hidden_size, rng=None, dtype=np.float32):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        if rng is None:
            w = np.zeros((4 * h, input_size), dtype=dtype)
            u = np.zeros((4 * h, h), dtype=dtype)
            b = np.zeros(4 * h, dtype=dtype)
        else:
            w = np.concatenate([
                glorot_uniform(rng, (h, input_size), input_size, h, dtype)
                for _ in range(4)])
            u = np.concatenate([
                glorot_uniform(rng, (h, h), h, h, dtype) for _ in range(4)])
            b = np.zeros(4 * h, dtype=dtype)
            b[h:2 * h] = 1.0
        self.params = LayerParams(name, {"W": w, "U": u, "b": b})

    def step(self, x, h_prev, c_prev):
        """One time step: (B, d), (B, H), (B, H) -> (h, c, cache)."""
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(
                f"{self.params.name}: expected input (B, {self.input_size}), got {x.shape}")
        if h_prev.shape != (x.shape[0], self.hidden_size):
            raise ShapeError(f"{self.params.name}: bad state shape {h_prev.shape}")
        hs = self.hidden_size
        z = x @ self.params.weights["W"].T + h_prev @ self.params.weights["U"].T \
            + self.params.weights["b"]
        i = sigmoid(z[:, :hs])
        f = sigmoid(z[:, hs:2 * hs])
        g = np.tanh(z[:, 2 * hs:3 * hs])
        o = sigmoid(z[:, 3 * hs:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache = (x, h_prev, c_prev, i, f, g, o, tc)
        return h, c, cache

    def step_backward(self, d_h, d_c, cache):
        """Backward through one step; accumulates parameter gradients.

        Returns (d_x, d_h_prev, d_c_prev).
        """
        x, h_prev, c_prev, i, f, g, o, tc = cache
        d_o = d_h * tc
        d_c = d_c + d_h * o * (1.0 - tc * tc)
        d_i = d_c * g
        d_g = d_c * i
        d_f = d_c * c_prev
        d_c_prev = d_c * f
        d_z = np.concatenate([
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_g * (1.0 - g * g),
            d_o * o * (1.0 - o),
        ], axis=1)
        self.params.grads["W"] += d_z.T @ x
        self.params.grads["U"] += d_z.T @ h_prev
        self.params.grads["b"] += d_z.sum(axis=0)
        d_x = d_z @ self.params.weights["W"]
        d_h_prev = d_z @ self.params.weights["U"]
        return d_x, d_h_prev, d_c_prev


class BiLSTM:
    """Bidirectional LSTM; output concatenates the two directions per step."""

    def __init__(self, name, input_size, hidden_size, rng=None, dtype=np.float32):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.fw = LSTMCell(f"{name}.fw", input_size, hidden_size, rng, dtype)
        self.bw = LSTMCell(f"{name}.bw", input_size, hidden_size, rng, dtype)
        self._cache = None

    def forward(self, x):
        """x: (B, T, d) -> (B, T, 2H). Initial states are zero."""
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"bilstm: expected (B, T, {self.input_size}), got {x.shape}")
        b_sz, steps, _ = x.shape
        if steps < 1:
            raise ShapeError("bilstm: empty sequence")
        hs = self.hidden_size
        out = np.zeros((b_sz, steps, 2 * hs), dtype=x.dtype)
        fw_caches = []
        h = np.zeros((b_sz, hs), dtype=x.dtype)
        c = np.zeros((b_sz, hs), dtype=x.dtype)
        for t in range(steps):
            h, c, cache = self.fw.step(x[:, t, :], h, c)
            fw_caches.append(cache)
            out[:, t, :hs] = h
        bw_caches = []
        h = np.zeros((b_sz, hs), dtype=x.dtype)
        c = np.zeros((b_sz, hs), dtype=x.dtype)
        for t in range(steps - 1, -1, -1):
            h, c, cache = self.bw.step(x[:, t, :], h, c)
            bw_caches.append(cache)       # stored in visit order T-1..0
            out[:, t, hs:] = h
        self._cache = (fw_caches, bw_caches, x.shape, x.dtype)
        return out

    def backward(self, d_out):
        """d_out: (B, T, 2H) -> gradient w.r.t. the input sequence."""
        fw_caches, bw_caches, x_shape, dtype = self._cache
        b_sz, steps, _ = x_shape
        hs = self.hidden_size
        if d_out.shape != (b_sz, steps, 2 * hs):
            raise ShapeError(f"bilstm: upstream shape {d_out.shape} does not match "
                             f"{(b_sz, steps, 2 * hs)}")
        d_x = np.zeros(x_shape, dtype=dtype)
        d_h = np.zeros((b_sz, hs), dtype=dtype)
        d_c = np.zeros((b_sz, hs), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            dx_t, d_h, d_c = self.fw.step_backward(
                d_h + d_out[:, t, :hs], d_c, fw_caches[t])
            d_x[:, t, :] += dx_t
        # The backward-direction cell visited t = T-1..0, so unwind t = 0..T-1.
        d_h = np.zeros((b_sz, hs), dtype=dtype)
        d_c = np.zeros((b_sz, hs), dtype=dtype)
        for t in range(steps):
            cache = bw_caches[steps - 1 - t]
            dx_t, d_h, d_c = self.bw.step_backward(
                d_h + d_out[:, t, hs:], d_c, cache)
            d_x[:, t, :] += dx_t
        return d_x

    @property
    def param_list(self):
        return [self.fw.params, self.bw.params]


class Attention:
    """Feed-forward attention over encoder states.

    Scores each time step with v . tanh(W h_t + b), normalizes the scores
    with a softmax, and returns the weighted sum of states as the context.
    """

    def __init__(self, name, state_size, units, rng=None, dtype=np.float32):
        self.state_size = state_size
        self.units = units
        if rng is None:
            w = np.zeros((units, state_size), dtype=dtype)
            v = np.zeros(units, dtype=dtype)
        else:
            w = glorot_uniform(rng, (units, state_size), state_size, units, dtype)
            v = glorot_uniform(rng, (units,), units, 1, dtype)
        self.params = LayerParams(name, {
            "W": w,
            "b": np.zeros(units, dtype=dtype),
            "v": v,
        })
        self._cache = None

    def forward(self, hidden):
        """hidden: (B, T, S) -> (context (B, S), weights (B, T))."""
        if hidden.ndim != 3 or hidden.shape[2] != self.state_size:
            raise ShapeError(
                f"{self.params.name}: expected (B, T, {self.state_size}), got {hidden.shape}")
        if hidden.shape[1] < 1:
            raise ShapeError("attention: empty sequence")
        w, b, v = (self.params.weights[k] for k in ("W", "b", "v"))
        m = np.tanh(hidden @ w.T + b)       # (B, T, units)
        scores = m @ v                      # (B, T)
        alpha = softmax(scores, axis=-1)
        context = np.einsum("bt,bts->bs", alpha, hidden)
        self._cache = (hidden, m, alpha)
        return context, alpha

    def backward(self, d_context):
        """d_context: (B, S) -> gradient w.r.t. the hidden states (B, T, S)."""
        hidden, m, alpha = self._cache
        if d_context.shape != (hidden.shape[0], self.state_size):
            raise ShapeError(
                f"{self.params.name}: upstream shape {d_context.shape} does not match "
                f"{(hidden.shape[0], self.state_size)}")
        w, v = self.params.weights["W"], self.params.weights["v"]
        d_hidden = alpha[:, :, None] * d_context[:, None, :]
        d_alpha = np.einsum("bs,bts->bt", d_context, hidden)
        # softmax Jacobian: couples all time steps of one sequence
        d_scores = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
        self.params.grads["v"] += np.einsum("bt,btu->u", d_scores, m)
        d_m = d_scores[:, :, None] * v
        d_pre = d_m * (1.0 - m * m)
        flat_pre = d_pre.reshape(-1, self.units)
        flat_hidden = hidden.reshape(-1, self.state_size)
        self.params.grads["W"] += flat_pre.T @ flat_hidden
        self.params.grads["b"] += flat_pre.sum(axis=0)
        d_hidden += d_pre @ w
        return d_hidden


def mse_loss(pred, target):
    """Mean squared error over the last axis, averaged over the batch.

    Returns (loss, gradient w.r.t. pred). For a 1-D pair the gradient is
    (2/L)(pred - target); for a batch it carries an extra 1/B so that the
    loss is the mean of the per-item losses.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    scale = 2.0 / pred.size
    loss = float(np.mean(diff * diff))
    return loss, scale * diff


BCE_EPS = 1e-7


def bce_loss(pred, target):
    """Binary cross-entropy with predictions clamped to [eps, 1-eps].

    target must be 0/1. The gradient is exact for the clamped loss, i.e.
    zero wherever the prediction sat outside the clamp range.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce: shapes {pred.shape} and {target.shape} differ")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("bce: target values must be 0 or 1")
    clamped = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(
        target * np.log(clamped) + (1.0 - target) * np.log(1.0 - clamped)))
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    grad = np.where(
        inside,
        -(target / clamped - (1.0 - target) / (1.0 - clamped)) / pred.size,
        0.0,
    ).astype(pred.dtype)
    return loss, grad


class SgdNesterov:
    """SGD with Nesterov momentum in the look-ahead form.

    Per step, with effective rate eta = base_lr / (1 + decay * step_count):

        v     <- mu * v - eta * g
        theta <- theta + mu * v - eta * g

    Gradients are expected to hold the mini-batch mean; they are reset to
    zero after the step. With mu = 0 the update is exactly plain gradient
    descent at the same rate.
    """

    def __init__(self, param_list, base_lr=0.01, momentum=0.9, decay=1e-6):
        self.param_list = list(param_list)
        self.base_lr = base_lr
        self.momentum = momentum
        self.decay = decay
        self.step_count = 0
        self.velocity = {
            (p.name, key): np.zeros_like(w)
            for p in self.param_list for key, w in p.weights.items()
        }

    @property
    def effective_lr(self):
        return self.base_lr / (1.0 + self.decay * self.step_count)

    def step(self):
        lr = self.effective_lr
        mu = self.momentum
        for p in self.param_list:
            for key, w in p.weights.items():
                g = p.grads[key]
                v = self.velocity[(p.name, key)]
                v *= mu
                v -= lr * g
                w += mu * v - lr * g
        self.step_count += 1
        for p in self.param_list:
            p.zero_grads()


class GradCheckEntry:
    """Result of checking one parameter tensor against finite differences."""

    def __init__(self, name, max_rel_err, ok):
        self.name = name
        self.max_rel_err = max_rel_err
        self.ok = ok

    def __repr__(self):
        status = "ok" if self.ok else "FAIL"
        return f"{self.name}: max_rel_err={self.max_rel_err:.3e} [{status}]"


def randomize_biases(param_list, rng, scale=0.2):
    """Shift bias vectors to generic positions before a finite-difference check.

    Freshly initialized biases are zero, which parks many ReLU pre-activations
    exactly on the kink; central differences straddle the kink there and the
    comparison fails even though the analytic subgradient is correct.
    """
    for p in param_list:
        for key, w in p.weights.items():
            if key == "b":
                w += rng.uniform(-scale, scale, size=w.shape).astype(w.dtype)


def gradient_check(param_list, loss_fn, grad_fn, step=1e-5, tol=1e-4):
    """Compare analytic gradients with central finite differences.

    loss_fn() evaluates the scalar loss at the current parameter values;
    grad_fn() runs forward and backward, accumulating gradients into the
    parameter buffers. Perturbation and comparison happen entry by entry
    in 64-bit, so the caller should build the model in float64.

    Returns one GradCheckEntry per parameter tensor.
    """
    for p in param_list:
        p.zero_grads()
    grad_fn()
    analytic = {
        (p.name, key): p.grads[key].copy()
        for p in param_list for key in p.weights
    }
    results = []
    for p in param_list:
        worst = 0.0
        for key, w in p.weights.items():
            ana = analytic[(p.name, key)]
            flat = w.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                loss_plus = loss_fn()
                flat[idx] = orig - step
                loss_minus = loss_fn()
                flat[idx] = orig
                numeric = (loss_plus - loss_minus) / (2.0 * step)
                a = ana.reshape(-1)[idx]
                denom = max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, abs(a - numeric) / denom)
        results.append(GradCheckEntry(p.name, worst, worst < tol))
    for p in param_list:
        p.zero_grads()
    return results
