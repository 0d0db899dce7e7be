"""Minimal dense-tensor reverse-mode automatic differentiation with Adam.

The engine is deliberately small: a flat tape of recorded primitives
(matmul, add, mul, sigmoid, tanh, relu, concat, slice, sum, square plus
fused affine/LSTM-cell ops for the hot recurrent path), replayed in
reverse by :func:`backward`. Everything is 64-bit; the verification suite
asserts 1e-9-class identities that float32 cannot meet.

Recording is optional. Ops accept plain ``numpy`` arrays as constants and
``Tensor`` objects as graph nodes; when no argument carries a tape the op
degrades to a pure numpy computation, which is the fast path used by
prediction-only code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "backward",
    "adam_step",
    "learning_rate",
    "finite_diff_check",
    "FiniteDiffReport",
]


class Tensor:
    """A dense float64 array, optionally registered on a tape."""

    __slots__ = ("data", "tape", "id")

    def __init__(self, data, tape=None, node_id=-1):
        self.data = data
        self.tape = tape
        self.id = node_id

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recorded primitive operations, topological order = recording order.

    Single-writer during recording; separate tapes may be driven from
    separate threads. ``relu_signs`` collects activation sign patterns when
    ``track_relu_signs`` is set, which the finite-difference checker uses to
    flag kink-crossing coordinates.
    """

    __slots__ = ("pulls", "n_nodes", "track_relu_signs", "relu_signs")

    def __init__(self, track_relu_signs=False):
        self.pulls = []
        self.n_nodes = 0
        self.track_relu_signs = track_relu_signs
        self.relu_signs = []

    def alloc(self):
        i = self.n_nodes
        self.n_nodes = i + 1
        return i

    def leaf(self, data):
        """Register an existing float64 array as a differentiable leaf."""
        arr = np.asarray(data, dtype=np.float64)
        return Tensor(arr, self, self.alloc())

    def constant(self, data):
        """Wrap an array that should not receive a gradient."""
        return Tensor(np.asarray(data, dtype=np.float64))


def _parts(x):
    """(data, node id, tape) for a Tensor or a raw array/scalar constant."""
    if isinstance(x, Tensor):
        return x.data, x.id, x.tape
    return np.asarray(x, dtype=np.float64), -1, None


def _acc(vals, owned, i, g):
    """Accumulate gradient ``g`` into slot ``i``.

    First write stores ``g`` directly (it may alias an op-internal buffer,
    so it is marked borrowed); later writes allocate once, after which
    accumulation is in place. Producers read a slot only after every
    consumer has accumulated into it, so in-place updates are safe.
    """
    cur = vals[i]
    if cur is None:
        vals[i] = g
    elif owned[i]:
        cur += g
    else:
        vals[i] = cur + g
        owned[i] = 1


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    ad, ai, at = _parts(a)
    bd, bi, bt = _parts(b)
    tape = at or bt
    out = ad + bd
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    asha, bsha = ad.shape, bd.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _bi=bi):
        g = vals[_oid]
        if g is None:
            return
        if _ai >= 0:
            _acc(vals, owned, _ai, _unbroadcast(g, asha))
        if _bi >= 0:
            _acc(vals, owned, _bi, _unbroadcast(g, bsha))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def sub(a, b):
    ad, ai, at = _parts(a)
    bd, bi, bt = _parts(b)
    tape = at or bt
    out = ad - bd
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    asha, bsha = ad.shape, bd.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _bi=bi):
        g = vals[_oid]
        if g is None:
            return
        if _ai >= 0:
            _acc(vals, owned, _ai, _unbroadcast(g, asha))
        if _bi >= 0:
            _acc(vals, owned, _bi, _unbroadcast(-g, bsha))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def neg(a):
    ad, ai, tape = _parts(a)
    out = -ad
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, -g)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def mul(a, b):
    """Elementwise product; either side may broadcast (e.g. a (1,) scalar)."""
    ad, ai, at = _parts(a)
    bd, bi, bt = _parts(b)
    tape = at or bt
    out = ad * bd
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    asha, bsha = ad.shape, bd.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _bi=bi, _ad=ad, _bd=bd):
        g = vals[_oid]
        if g is None:
            return
        if _ai >= 0:
            _acc(vals, owned, _ai, _unbroadcast(g * _bd, asha))
        if _bi >= 0:
            _acc(vals, owned, _bi, _unbroadcast(g * _ad, bsha))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def scale(a, c):
    """Multiply by a python float constant."""
    ad, ai, tape = _parts(a)
    c = float(c)
    out = ad * c
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _c=c):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * _c)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def matmul(a, b):
    ad, ai, at = _parts(a)
    bd, bi, bt = _parts(b)
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {ad.shape} @ {bd.shape}")
    tape = at or bt
    out = ad @ bd
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _bi=bi, _ad=ad, _bd=bd):
        g = vals[_oid]
        if g is None:
            return
        if _ai >= 0:
            _acc(vals, owned, _ai, g @ _bd.T)
        if _bi >= 0:
            _acc(vals, owned, _bi, _ad.T @ g)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def sigmoid(a):
    ad, ai, tape = _parts(a)
    # tanh form is overflow-safe for large |x|
    out = 0.5 * np.tanh(0.5 * ad) + 0.5
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _s=out):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * (_s * (1.0 - _s)))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def tanh(a):
    ad, ai, tape = _parts(a)
    out = np.tanh(ad)
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _t=out):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * (1.0 - _t * _t))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def relu(a):
    """max(x, 0); the subgradient at 0 is defined as 0."""
    ad, ai, tape = _parts(a)
    mask = ad > 0.0
    out = np.where(mask, ad, 0.0)
    if tape is None:
        return Tensor(out)
    if tape.track_relu_signs:
        tape.relu_signs.append(mask)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _m=mask):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * _m)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def exp(a):
    ad, ai, tape = _parts(a)
    out = np.exp(ad)
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _e=out):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * _e)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def square(a):
    ad, ai, tape = _parts(a)
    out = ad * ad
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai, _ad=ad):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g * (2.0 * _ad))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def concat(parts, axis=1):
    datas, ids, tape = [], [], None
    for p in parts:
        d, i, t = _parts(p)
        datas.append(d)
        ids.append(i)
        tape = tape or t
    out = np.concatenate(datas, axis=axis)
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    sizes = [d.shape[axis] for d in datas]
    bounds = np.cumsum([0] + sizes)

    def pull(vals, owned, _oid=oid, _ids=tuple(ids), _bounds=bounds, _axis=axis):
        g = vals[_oid]
        if g is None:
            return
        for i, lo, hi in zip(_ids, _bounds[:-1], _bounds[1:]):
            if i >= 0:
                sl = [slice(None)] * g.ndim
                sl[_axis] = slice(lo, hi)
                _acc(vals, owned, i, g[tuple(sl)])

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def col_slice(a, lo, hi):
    ad, ai, tape = _parts(a)
    out = ad[:, lo:hi]
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    sha = ad.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _lo=lo, _hi=hi, _sha=sha):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            full = np.zeros(_sha)
            full[:, _lo:_hi] = g
            _acc(vals, owned, _ai, full)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def row_slice(a, i):
    """Select row ``i`` of a 2-D tensor, keeping the leading axis."""
    ad, ai, tape = _parts(a)
    out = ad[i : i + 1, :]
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    sha = ad.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _i=i, _sha=sha):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            full = np.zeros(_sha)
            full[_i : _i + 1, :] = g
            _acc(vals, owned, _ai, full)

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def tile_rows(a, n):
    """Repeat a (1, H) tensor to (n, H); gradient sums back over rows."""
    ad, ai, tape = _parts(a)
    out = np.broadcast_to(ad, (n, ad.shape[1])).copy()
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()

    def pull(vals, owned, _oid=oid, _ai=ai):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, g.sum(axis=0, keepdims=True))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def sum_all(a):
    """Scalar sum of all entries (0-d result)."""
    ad, ai, tape = _parts(a)
    out = np.asarray(ad.sum())
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    sha = ad.shape

    def pull(vals, owned, _oid=oid, _ai=ai, _sha=sha):
        g = vals[_oid]
        if g is not None and _ai >= 0:
            _acc(vals, owned, _ai, np.broadcast_to(g, _sha).copy())

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def affine(x, w, b, wt=None):
    """x @ w + b in a single recorded op.

    ``wt`` may supply a C-contiguous transpose of ``w`` (computed once per
    pass when binding parameters) so the reverse gemm avoids a strided
    operand; it is a pure performance hint.
    """
    xd, xi, xt = _parts(x)
    wd, wi, wtape = _parts(w)
    bd, bi, btape = _parts(b)
    tape = xt or wtape or btape
    out = xd @ wd + bd
    if tape is None:
        return Tensor(out)
    oid = tape.alloc()
    wT = wt if wt is not None else wd.T

    def pull(vals, owned, _oid=oid, _xi=xi, _wi=wi, _bi=bi, _xd=xd, _wT=wT):
        g = vals[_oid]
        if g is None:
            return
        if _xi >= 0:
            _acc(vals, owned, _xi, g @ _wT)
        if _wi >= 0:
            _acc(vals, owned, _wi, _xd.T @ g)
        if _bi >= 0:
            _acc(vals, owned, _bi, g.sum(axis=0))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def affine_relu(x, w, b, wt=None):
    """relu(x @ w + b) fused into one recorded op."""
    xd, xi, xt = _parts(x)
    wd, wi, wtape = _parts(w)
    bd, bi, btape = _parts(b)
    tape = xt or wtape or btape
    pre = xd @ wd + bd
    mask = pre > 0.0
    out = np.where(mask, pre, 0.0)
    if tape is None:
        return Tensor(out)
    if tape.track_relu_signs:
        tape.relu_signs.append(mask)
    oid = tape.alloc()
    wT = wt if wt is not None else wd.T

    def pull(vals, owned, _oid=oid, _xi=xi, _wi=wi, _bi=bi, _xd=xd, _wT=wT, _m=mask):
        g = vals[_oid]
        if g is None:
            return
        g = g * _m
        if _xi >= 0:
            _acc(vals, owned, _xi, g @ _wT)
        if _wi >= 0:
            _acc(vals, owned, _wi, _xd.T @ g)
        if _bi >= 0:
            _acc(vals, owned, _bi, g.sum(axis=0))

    tape.pulls.append(pull)
    return Tensor(out, tape, oid)


def lstm_cell(x, h, c, w, b, wt=None):
    """One LSTM cell step as a single recorded op with two outputs.

    Gate layout along the 4H axis is (input, forget, candidate, output);
    the backward pass is the hand-derived cell adjoint. Returns (h', c').
    """
    xd, xi, _ = _parts(x)
    hd, hi, htape = _parts(h)
    cd, ci, ctape = _parts(c)
    wd, wi, wtape = _parts(w)
    bd, bi, btape = _parts(b)
    tape = htape or ctape or wtape or btape
    H = hd.shape[1]
    xh = np.concatenate([xd, hd], axis=1)
    z = xh @ wd
    z += bd
    # One tanh pass over the whole gate block: the three sigmoid gates are
    # computed as 0.5 * tanh(z / 2) + 0.5, the candidate as tanh(z).
    z[:, : 2 * H] *= 0.5
    z[:, 3 * H :] *= 0.5
    np.tanh(z, out=z)
    sig = z[:, : 2 * H]
    sig *= 0.5
    sig += 0.5
    og = z[:, 3 * H :]
    og *= 0.5
    og += 0.5
    gi = z[:, :H]
    gf = z[:, H : 2 * H]
    gg = z[:, 2 * H : 3 * H]
    go = z[:, 3 * H :]
    c_new = gf * cd
    c_new += gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc
    if tape is None:
        return Tensor(h_new), Tensor(c_new)
    hid = tape.alloc()
    cid = tape.alloc()
    wT = wt if wt is not None else wd.T
    nx = xd.shape[1]

    def pull(vals, owned, _hid=hid, _cid=cid):
        gh = vals[_hid]
        gc = vals[_cid]
        if gh is None and gc is None:
            return
        if gh is None:
            dc = gc.copy()  # private buffer: gc may be borrowed by other slots
            dz_o = None
        else:
            dc = gh * go
            dc *= 1.0 - tc * tc
            if gc is not None:
                dc += gc
            dz_o = gh * tc
            dz_o *= go * (1.0 - go)
        dz = np.empty_like(z)
        d_i = dz[:, :H]
        np.multiply(dc, gg, out=d_i)
        d_i *= gi * (1.0 - gi)
        d_f = dz[:, H : 2 * H]
        np.multiply(dc, cd, out=d_f)
        d_f *= gf * (1.0 - gf)
        d_g = dz[:, 2 * H : 3 * H]
        np.multiply(dc, gi, out=d_g)
        d_g *= 1.0 - gg * gg
        if dz_o is None:
            dz[:, 3 * H :] = 0.0
        else:
            dz[:, 3 * H :] = dz_o
        dxh = dz @ wT
        if xi >= 0:
            _acc(vals, owned, xi, dxh[:, :nx])
        if hi >= 0:
            _acc(vals, owned, hi, dxh[:, nx:])
        if ci >= 0:
            dc *= gf
            _acc(vals, owned, ci, dc)
        if wi >= 0:
            _acc(vals, owned, wi, xh.T @ dz)
        if bi >= 0:
            _acc(vals, owned, bi, dz.sum(axis=0))

    tape.pulls.append(pull)
    return Tensor(h_new, tape, hid), Tensor(c_new, tape, cid)


def backward(tape, loss, leaves):
    """Reverse sweep from a scalar loss; returns one gradient per leaf.

    Leaves that do not lie on any path to the loss get exact zeros. The
    sweep is pure: running it twice on the same tape gives identical
    results.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    vals = [None] * tape.n_nodes
    owned = bytearray(tape.n_nodes)
    vals[loss.id] = np.ones_like(loss.data)
    for pull in reversed(tape.pulls):
        pull(vals, owned)
    out = []
    for leaf in leaves:
        g = vals[leaf.id]
        out.append(np.zeros_like(leaf.data) if g is None else np.reshape(g, leaf.data.shape))
    return out


@dataclass
class AdamState:
    """First/second moment estimates, one pair per parameter array."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr):
    """One Adam update with bias correction; params are updated in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have matching lengths")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def learning_rate(epoch, base=0.001):
    """Decreasing schedule base / sqrt(epoch), epochs counted from 1."""
    if epoch < 1:
        raise ValueError("epoch index starts at 1")
    return base / np.sqrt(float(epoch))


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    n_checked: int
    excluded: list  # (param index, flat coordinate) pairs that crossed a relu kink

    def __str__(self):
        return (
            f"finite-diff check: max rel err {self.max_rel_error:.3e} over "
            f"{self.n_checked} coords ({len(self.excluded)} kink-excluded)"
        )


def _eval_with_signs(function):
    tape = Tape(track_relu_signs=True)
    loss, leaves = function(tape)
    return float(loss.data), tape.relu_signs, tape, loss, leaves


def _signs_match(sa, sb):
    return len(sa) == len(sb) and all(np.array_equal(x, y) for x, y in zip(sa, sb))


def finite_diff_check(function, params, h=1e-5):
    """Compare reverse-mode gradients against central finite differences.

    ``function(tape)`` must build the computation on the given tape and
    return ``(loss, leaves)`` with one leaf tensor per entry of ``params``;
    each leaf must wrap the corresponding array in ``params`` (the same
    object), so the checker can perturb coordinates in place and re-run.
    Coordinates whose perturbed evaluations land on different sides of a
    relu kink are excluded and reported instead of polluting the error
    figure.

    Errors are ``|g_ad - g_fd| / max(1, |g_fd|)`` per coordinate.
    """
    _, base_signs, tape, loss, leaves = _eval_with_signs(function)
    if len(leaves) != len(params):
        raise ValueError("function returned a leaf list that does not match params")
    for leaf, p in zip(leaves, params):
        if leaf.data is not p:
            raise ValueError("each returned leaf must wrap the matching params array")
    ad_grads = backward(tape, loss, leaves)

    max_err = 0.0
    n_checked = 0
    excluded = []
    for pi, p in enumerate(params):
        if not p.flags.c_contiguous:
            raise ValueError("params must be C-contiguous so in-place perturbation reaches the graph")
        flat = p.reshape(-1)
        g_flat = ad_grads[pi].reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus, signs_plus, *_ = _eval_with_signs(function)
            flat[ci] = orig - h
            f_minus, signs_minus, *_ = _eval_with_signs(function)
            flat[ci] = orig
            if not (_signs_match(signs_plus, base_signs) and _signs_match(signs_minus, base_signs)):
                excluded.append((pi, ci))
                continue
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_flat[ci] - g_fd) / max(1.0, abs(g_fd))
            max_err = max(max_err, err)
            n_checked += 1
    return FiniteDiffReport(max_rel_error=max_err, n_checked=n_checked, excluded=excluded)
