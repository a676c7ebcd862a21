"""Hot numeric kernels: ray compositing, frequency encoding, counter-based RNG.

Each kernel has a pure-numpy implementation (`*_np`) and, when the numba
backend is active, an @njit twin.  Public names are bound once at import
time according to `backend.USE_NUMBA`.  All kernels are pure functions of
their inputs; per-ray results do not depend on how rays are batched, which
is what makes chunked/parallel rendering bit-identical to serial.
"""

import numpy as np

from .backend import USE_NUMBA

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KEYMIX = np.uint64(0xD2B74407B1CE6E93)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)
_MASK = (1 << 64) - 1


def seed_mix(seed):
    """Fold an int or tuple of ints into one 64-bit seed (splitmix rounds)."""
    parts = seed if isinstance(seed, (tuple, list)) else (seed,)
    s = 0
    for p in parts:
        s = (s + (int(p) & _MASK) + 0x9E3779B97F4A7C15) & _MASK
        s = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        s = ((s ^ (s >> 27)) * 0x94D049BB133111EB) & _MASK
        s ^= s >> 31
    return s


# ---------------------------------------------------------------------------
# numpy implementations


def composite_fwd_np(sigma, delta, color, background):
    """Alpha-composite samples along rays.

    sigma, delta: (R, N); color: (R, N, 3); background: (3,).
    Returns (out (R,3), weights (R,N), t_rest (R,)).  Opacity of sample i is
    1 - exp(-sigma_i * delta_i); leftover transmittance hits the background.
    """
    e = np.exp(-sigma * delta)
    tin = np.cumprod(e, axis=1)
    trans = np.concatenate([np.ones((sigma.shape[0], 1), dtype=e.dtype),
                            tin[:, :-1]], axis=1)
    weights = trans * (1.0 - e)
    t_rest = tin[:, -1]
    out = (weights[:, :, None] * color).sum(axis=1)
    out += t_rest[:, None] * background[None, :]
    return out, weights, t_rest


def composite_bwd_np(g, sigma, delta, color, background, weights, t_rest):
    """Adjoint of composite_fwd w.r.t. sigma and color (not delta/background)."""
    gc = (g[:, None, :] * color).sum(axis=2)
    dcolor = g[:, None, :] * weights[:, :, None]
    q = weights * gc
    suffix = np.cumsum(q[:, ::-1], axis=1)[:, ::-1] - q
    csum = np.cumsum(weights, axis=1)
    trans = 1.0 - np.concatenate([np.zeros((sigma.shape[0], 1), dtype=q.dtype),
                                  csum[:, :-1]], axis=1)
    gb = g @ background
    dsigma = delta * ((trans - weights) * gc - suffix - (t_rest * gb)[:, None])
    return dsigma, dcolor


def posenc_np(v, n_freqs):
    """Frequency encoding: blocks [sin(2^l pi v), cos(2^l pi v)] for l < n_freqs."""
    m, k = v.shape
    if n_freqs == 0:
        return np.zeros((m, 0), dtype=v.dtype)
    freqs = ((2.0 ** np.arange(n_freqs)) * np.pi).astype(v.dtype)
    ang = v[:, None, :] * freqs[None, :, None]
    out = np.empty((m, n_freqs, 2, k), dtype=v.dtype)
    out[:, :, 0, :] = np.sin(ang)
    out[:, :, 1, :] = np.cos(ang)
    return out.reshape(m, 2 * n_freqs * k)


def hash_uniform_np(seed, keys, n):
    """Counter-based uniforms in [0,1): row r is the stream for keys[r].

    Order-independent by construction, so any chunking of `keys` yields
    the same per-key rows.  `seed` may be an int or a tuple of ints.
    """
    seed = np.uint64(seed_mix(seed))
    keys = keys.astype(np.uint64)
    with np.errstate(over="ignore"):  # modular uint64 arithmetic is intended
        base = (seed * _GOLDEN) ^ (keys * _KEYMIX)
        idx = (np.arange(1, n + 1, dtype=np.uint64) * _GOLDEN)[None, :]
        z = base[:, None] + idx
        z = (z ^ (z >> np.uint64(30))) * _MUL1
        z = (z ^ (z >> np.uint64(27))) * _MUL2
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


# ---------------------------------------------------------------------------
# numba twins

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _composite_fwd_nb(sigma, delta, color, background):
        nrays, nsamp = sigma.shape
        out = np.zeros((nrays, 3), dtype=sigma.dtype)
        weights = np.empty((nrays, nsamp), dtype=sigma.dtype)
        t_rest = np.empty(nrays, dtype=sigma.dtype)
        for r in range(nrays):
            trans = 1.0
            for i in range(nsamp):
                e = np.exp(-sigma[r, i] * delta[r, i])
                w = trans * (1.0 - e)
                weights[r, i] = w
                for c in range(3):
                    out[r, c] += w * color[r, i, c]
                trans *= e
            t_rest[r] = trans
            for c in range(3):
                out[r, c] += trans * background[c]
        return out, weights, t_rest

    @njit(cache=True)
    def _composite_bwd_nb(g, sigma, delta, color, background, weights, t_rest):
        nrays, nsamp = sigma.shape
        dsigma = np.empty((nrays, nsamp), dtype=sigma.dtype)
        dcolor = np.empty((nrays, nsamp, 3), dtype=sigma.dtype)
        for r in range(nrays):
            gb = g[r, 0] * background[0] + g[r, 1] * background[1] + g[r, 2] * background[2]
            trans = 1.0
            suffix = 0.0
            # forward sweep caches transmittance via the telescoping identity
            tarr = np.empty(nsamp)
            for i in range(nsamp):
                tarr[i] = trans
                trans -= weights[r, i]
            for i in range(nsamp - 1, -1, -1):
                gc = g[r, 0] * color[r, i, 0] + g[r, 1] * color[r, i, 1] + g[r, 2] * color[r, i, 2]
                w = weights[r, i]
                dsigma[r, i] = delta[r, i] * ((tarr[i] - w) * gc - suffix - t_rest[r] * gb)
                suffix += w * gc
                for c in range(3):
                    dcolor[r, i, c] = g[r, c] * w
        return dsigma, dcolor

    @njit(cache=True)
    def _posenc_nb(v, freqs):
        m, k = v.shape
        n_freqs = freqs.shape[0]
        out = np.empty((m, 2 * n_freqs * k), dtype=v.dtype)
        for i in range(m):
            for l in range(n_freqs):
                f = freqs[l]
                base = 2 * l * k
                for j in range(k):
                    a = f * v[i, j]
                    out[i, base + j] = np.sin(a)
                    out[i, base + k + j] = np.cos(a)
        return out

    @njit(cache=True)
    def _hash_uniform_nb(seed, keys, n):
        golden = np.uint64(0x9E3779B97F4A7C15)
        keymix = np.uint64(0xD2B74407B1CE6E93)
        mul1 = np.uint64(0xBF58476D1CE4E5B9)
        mul2 = np.uint64(0x94D049BB133111EB)
        nrows = keys.shape[0]
        out = np.empty((nrows, n))
        s = np.uint64(seed) * golden
        for r in range(nrows):
            base = s ^ (np.uint64(keys[r]) * keymix)
            for i in range(n):
                z = base + np.uint64(i + 1) * golden
                z = (z ^ (z >> np.uint64(30))) * mul1
                z = (z ^ (z >> np.uint64(27))) * mul2
                z = z ^ (z >> np.uint64(31))
                out[r, i] = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        return out

    def composite_fwd(sigma, delta, color, background):
        return _composite_fwd_nb(
            np.ascontiguousarray(sigma), np.ascontiguousarray(delta),
            np.ascontiguousarray(color), np.ascontiguousarray(background))

    def composite_bwd(g, sigma, delta, color, background, weights, t_rest):
        return _composite_bwd_nb(
            np.ascontiguousarray(g), np.ascontiguousarray(sigma),
            np.ascontiguousarray(delta), np.ascontiguousarray(color),
            np.ascontiguousarray(background), np.ascontiguousarray(weights),
            np.ascontiguousarray(t_rest))

    def posenc(v, n_freqs):
        if n_freqs == 0:
            return np.zeros((v.shape[0], 0), dtype=v.dtype)
        if v.dtype == np.float32:
            # numpy's SIMD float32 sin/cos beat the scalar libm loop
            return posenc_np(v, n_freqs)
        freqs = ((2.0 ** np.arange(n_freqs)) * np.pi).astype(v.dtype)
        return _posenc_nb(np.ascontiguousarray(v), freqs)

    def hash_uniform(seed, keys, n):
        return _hash_uniform_nb(np.uint64(seed_mix(seed)),
                                np.ascontiguousarray(keys.astype(np.uint64)), n)

else:
    composite_fwd = composite_fwd_np
    composite_bwd = composite_bwd_np
    posenc = posenc_np
    hash_uniform = hash_uniform_np
