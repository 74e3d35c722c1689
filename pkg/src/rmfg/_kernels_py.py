"""Pure numpy implementation of the hot kernels.

Same signatures and the same counter-based noise stream as the compiled
``_kernels`` extension; used when the extension is unavailable.

Noise: the standard normal for ``(seed, path, substep)`` comes from hashing
the triple with the splitmix64 finalizer and feeding the resulting words to
Marsaglia's polar method; rejected attempts advance a per-draw attempt
counter, so the stream stays a pure function of the triple.  Each path thus
owns an independent stream that does not depend on chunking or scheduling.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TWO_M52 = 2.0**-52

MASK64 = (1 << 64) - 1


def _mix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _mix64_int(z):
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _path_keys(seed, path_ids):
    k0 = np.uint64(_mix64_int(int(seed) & MASK64))
    return _mix64(k0 ^ np.asarray(path_ids, dtype=np.int64).astype(np.uint64))


def _normal_from_keys(keys, counter):
    base = _mix64(keys ^ np.uint64(_mix64_int(int(counter) & MASK64)))
    out = np.empty(base.shape)
    todo = np.arange(base.size)
    attempt = 0
    while todo.size:
        b = base[todo]
        h1 = _mix64(b + np.uint64(2 * attempt))
        h2 = _mix64(b + np.uint64(2 * attempt + 1))
        u = ((h1 >> _S11).astype(np.float64) + 0.5) * _TWO_M52 - 1.0
        v = ((h2 >> _S11).astype(np.float64) + 0.5) * _TWO_M52 - 1.0
        s = u * u + v * v
        ok = (s < 1.0) & (s > 0.0)
        su = s[ok]
        out[todo[ok]] = u[ok] * np.sqrt(-2.0 * np.log(su) / su)
        todo = todo[~ok]
        attempt += 1
    return out


def normals(seed, path_ids, step, refine=1):
    """Standard normals for one (coarse) step of every path in ``path_ids``.

    With ``refine > 1`` the value is the normalized sum of the ``refine``
    fine-grid normals making up coarse step ``step``, so coarse and fine
    simulations share Brownian increments.
    """
    keys = _path_keys(seed, path_ids)
    if refine == 1:
        return _normal_from_keys(keys, step)
    acc = np.zeros(keys.shape)
    for j in range(refine):
        acc += _normal_from_keys(keys, step * refine + j)
    return acc / np.sqrt(refine)


def euler_reflect(x, drift, var, dt, seed, path_ids, step, refine=1):
    """One reflected Euler step.

    ``z = x + drift*dt + sqrt(var*dt)*xi``; returns ``(max(z, 0), max(-z, 0))``.
    """
    xi = normals(seed, path_ids, step, refine)
    z = x + drift * dt + np.sqrt(var * dt) * xi
    neg = z < 0
    x_new = np.where(neg, 0.0, z + 0.0)
    dk = np.where(neg, -z, 0.0)
    return x_new, dk


def bellman_expectation(v_next, xmax, mean, scale, nodes, weights, h):
    """Quadrature expectation of the reflected one-step continuation value.

    For every entry of ``mean``/``scale`` (same shape) computes
    ``sum_q w_q * (V(clamp(max(z_q, 0))) + h * max(-z_q, 0))`` with
    ``z_q = mean + scale * nodes[q]`` and ``V`` the piecewise-linear
    interpolant of ``v_next`` on the uniform grid over ``[0, xmax]``.
    Returns the expectation and the quadrature mass clamped at ``xmax``.
    """
    v_next = np.asarray(v_next, dtype=float)
    m = v_next.size
    dx = xmax / (m - 1)
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    acc = np.zeros(mean.shape)
    clamped = np.zeros(mean.shape)
    for q in range(len(nodes)):
        z = mean + scale * nodes[q]
        neg = z < 0
        y = np.where(neg, 0.0, z)
        dk = np.where(neg, -z, 0.0)
        over = y > xmax
        y = np.where(over, xmax, y)
        clamped += np.where(over, weights[q], 0.0)
        pos = y / dx
        i = np.minimum(pos.astype(np.int64), m - 2)
        frac = pos - i
        v = v_next[i] * (1.0 - frac) + v_next[i + 1] * frac
        acc += weights[q] * (v + h * dk)
    return acc, clamped
