"""Hot loops, each in a numba flavour (``*_nb``) and a numpy flavour (``*_np``).

The public names at the bottom dispatch on ``MICROCRACK_NUMBA``. The two
flavours evaluate the same floating point expressions in the same order, so
max-pool, leapfrog fields and Floyd-Warshall agree bit for bit; only the
energy sums differ (numpy uses pairwise summation).
"""
import numpy as np

from ._accel import njit, pick


# ---------------------------------------------------------------- max pool

def maxpool_forward_np(x, kh, kw):
    B, C, H, W = x.shape
    Ho, Wo = H // kh, W // kw
    win = x[:, :, :Ho * kh, :Wo * kw].reshape(B, C, Ho, kh, Wo, kw)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, kh * kw)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward_np(grad, idx, in_shape, kh, kw):
    B, C, H, W = in_shape
    Ho, Wo = grad.shape[2], grad.shape[3]
    gwin = np.zeros((B, C, Ho, Wo, kh * kw))
    np.put_along_axis(gwin, idx[..., None], grad[..., None], axis=-1)
    gx = np.zeros(in_shape)
    gx[:, :, :Ho * kh, :Wo * kw] = (
        gwin.reshape(B, C, Ho, Wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * kh, Wo * kw))
    return gx


@njit
def maxpool_forward_nb(x, kh, kw):
    B, C, H, W = x.shape
    Ho, Wo = H // kh, W // kw
    out = np.empty((B, C, Ho, Wo))
    idx = np.empty((B, C, Ho, Wo), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = x[b, c, i * kh, j * kw]
                    arg = 0
                    for r in range(kh):
                        for s in range(kw):
                            v = x[b, c, i * kh + r, j * kw + s]
                            # first NaN wins, as with np.argmax
                            if best == best and (v > best or v != v):
                                best = v
                                arg = r * kw + s
                    out[b, c, i, j] = best
                    idx[b, c, i, j] = arg
    return out, idx


@njit
def _maxpool_backward_nb(grad, idx, gx, kh, kw):
    B, C, Ho, Wo = grad.shape
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    a = idx[b, c, i, j]
                    gx[b, c, i * kh + a // kw, j * kw + a % kw] += grad[b, c, i, j]
    return gx


def maxpool_backward_nb(grad, idx, in_shape, kh, kw):
    return _maxpool_backward_nb(np.ascontiguousarray(grad), idx, np.zeros(in_shape), kh, kw)


# ---------------------------------------------------------------- leapfrog

def leapfrog_np(kx, ky, c2, damping, src_rows, src_col, src, probe_rows, probe_cols):
    ny, nx = ky.shape[0] + 1, kx.shape[1] + 1
    steps = src.shape[0]
    u_prev = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    traces = np.empty((steps, probe_rows.shape[0]))
    energy = np.empty(steps)
    d_left = np.zeros((ny, nx))
    d_right = np.zeros((ny, nx))
    d_down = np.zeros((ny, nx))
    d_up = np.zeros((ny, nx))
    for n in range(steps):
        d_right[:, :-1] = kx * (u[:, 1:] - u[:, :-1])
        d_left[:, 1:] = kx * (u[:, :-1] - u[:, 1:])
        d_up[:-1, :] = ky * (u[1:, :] - u[:-1, :])
        d_down[1:, :] = ky * (u[:-1, :] - u[1:, :])
        lap = (d_left + d_right) + (d_down + d_up)
        num = 2.0 * u - (1.0 - damping) * u_prev + c2 * lap
        num[src_rows, src_col] += src[n]
        u_next = num / (1.0 + damping)
        traces[n] = u_next[probe_rows, probe_cols]
        dt_u = u_next - u
        pot = (np.sum(kx * (u_next[:, 1:] - u_next[:, :-1]) * (u[:, 1:] - u[:, :-1]))
               + np.sum(ky * (u_next[1:, :] - u_next[:-1, :]) * (u[1:, :] - u[:-1, :])))
        energy[n] = 0.5 * np.sum(dt_u * dt_u) + 0.5 * c2 * pot
        u_prev = u
        u = u_next
    return traces, energy, u


@njit
def leapfrog_nb(kx, ky, c2, damping, src_rows, src_col, src, probe_rows, probe_cols):
    ny, nx = ky.shape[0] + 1, kx.shape[1] + 1
    steps = src.shape[0]
    u_prev = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    u_next = np.zeros((ny, nx))
    traces = np.empty((steps, probe_rows.shape[0]))
    energy = np.empty(steps)
    is_src = np.zeros(ny, dtype=np.bool_)
    for r in src_rows:
        is_src[r] = True
    for n in range(steps):
        for y in range(ny):
            for x in range(nx):
                dl = kx[y, x - 1] * (u[y, x - 1] - u[y, x]) if x > 0 else 0.0
                dr = kx[y, x] * (u[y, x + 1] - u[y, x]) if x < nx - 1 else 0.0
                dd = ky[y - 1, x] * (u[y - 1, x] - u[y, x]) if y > 0 else 0.0
                du = ky[y, x] * (u[y + 1, x] - u[y, x]) if y < ny - 1 else 0.0
                lap = (dl + dr) + (dd + du)
                num = 2.0 * u[y, x] - (1.0 - damping) * u_prev[y, x] + c2 * lap
                if x == src_col and is_src[y]:
                    num += src[n]
                u_next[y, x] = num / (1.0 + damping)
        for p in range(probe_rows.shape[0]):
            traces[n, p] = u_next[probe_rows[p], probe_cols[p]]
        kin = 0.0
        pot = 0.0
        for y in range(ny):
            for x in range(nx):
                d = u_next[y, x] - u[y, x]
                kin += d * d
                if x < nx - 1:
                    pot += kx[y, x] * (u_next[y, x + 1] - u_next[y, x]) * (u[y, x + 1] - u[y, x])
                if y < ny - 1:
                    pot += ky[y, x] * (u_next[y + 1, x] - u_next[y, x]) * (u[y + 1, x] - u[y, x])
        energy[n] = 0.5 * kin + 0.5 * c2 * pot
        tmp = u_prev
        u_prev = u
        u = u_next
        u_next = tmp
    return traces, energy, u.copy()


# ---------------------------------------------------------- Floyd-Warshall

def floyd_warshall_np(dist):
    d = np.array(dist, dtype=np.float64)
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :], out=d)
    return d


@njit
def _floyd_warshall_nb(d):
    n = d.shape[0]
    for k in range(n):
        for i in range(n):
            dik = d[i, k]
            for j in range(n):
                v = dik + d[k, j]
                if v < d[i, j]:
                    d[i, j] = v
    return d


def floyd_warshall_nb(dist):
    return _floyd_warshall_nb(np.array(dist, dtype=np.float64))


maxpool_forward = pick(maxpool_forward_nb, maxpool_forward_np)
maxpool_backward = pick(maxpool_backward_nb, maxpool_backward_np)
leapfrog = pick(leapfrog_nb, leapfrog_np)
floyd_warshall = pick(floyd_warshall_nb, floyd_warshall_np)
