"""Compiled photon random walk (numba).

Physics routines operate on a flat ``float64`` photon vector so the same
compiled code serves the batch kernel and the per-operation Python wrappers
in :mod:`nirsdse.transport`.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .medium import G, IS_SAL, MU_A, MU_S, N, Z_BOT, Z_TOP
from .rng import STATE_SIZE, next_uniform, seed_state

# photon vector layout
X, Y, Z, UX, UY, UZ, W, REGION, MAXD, STATUS, SLEFT = range(11)
PHOTON_SIZE = 11

# photon status codes
ALIVE, DETECTED, ABSORBED, SAL_ABSORBED, ESCAPED, TRANSMITTED, EXITED_TOP = range(7)
STATUS_NAMES = ("alive", "detected", "absorbed", "sal_absorbed", "escaped_undetected",
                "transmitted_bottom", "exited_top")

# advance() outcomes
EV_INTERACT, EV_BOUNDARY, EV_SAL = 0, 1, 2
# cross_boundary() outcomes
EV_REFLECT, EV_TRANSMIT, EV_EXIT_TOP, EV_EXIT_BOTTOM = 0, 1, 2, 3

# env vector layout
ENV_N_ABOVE, ENV_N_BELOW, ENV_SAL_Z, ENV_THRESHOLD, ENV_SURVIVAL, ENV_MAX_EVENTS = range(6)

# per-photon deposit vector layout
DEP_ABSORBED, DEP_SAL, DEP_TRANSMITTED, DEP_RESIDUAL, DEP_GAIN = range(5)

# batch scalar outputs
(S_LAUNCHED, S_SPECULAR, S_ABSORBED, S_SAL, S_ESCAPED, S_TRANSMITTED, S_RESIDUAL,
 S_GAIN, S_DETECTED_EXIT, S_LEDGER_SQ, S_OVERFLOW) = range(11)
N_SCALARS = 11

COS_ZERO = 1.0 - 1e-12
COS_90 = 1e-6
TINY = 5e-324
INF = math.inf


@nb.njit(cache=True)
def fresnel(n_i, n_t, cos_i):
    """Unpolarised reflectance and transmitted-direction cosine."""
    if n_i == n_t:
        return 0.0, cos_i
    if cos_i > COS_ZERO:
        r = (n_t - n_i) / (n_t + n_i)
        return r * r, cos_i
    if cos_i < COS_90:
        return 1.0, 0.0
    sin_i = math.sqrt(1.0 - cos_i * cos_i)
    sin_t = n_i * sin_i / n_t
    if sin_t >= 1.0:
        return 1.0, 0.0
    cos_t = math.sqrt(1.0 - sin_t * sin_t)
    cap = cos_i * cos_t - sin_i * sin_t
    cam = cos_i * cos_t + sin_i * sin_t
    sap = sin_i * cos_t + cos_i * sin_t
    sam = sin_i * cos_t - cos_i * sin_t
    return 0.5 * sam * sam * (cam * cam + cap * cap) / (sap * sap * cam * cam), cos_t


@nb.njit(cache=True)
def specular(n_above, n_top):
    r = (n_above - n_top) / (n_above + n_top)
    return r * r


@nb.njit(cache=True)
def sample_step(xi, mu_t):
    if xi <= 0.0:
        xi = TINY
    return -math.log(xi) / mu_t


@nb.njit(cache=True)
def hg_cos(g, xi):
    if g == 0.0:
        return 2.0 * xi - 1.0
    t = (1.0 - g * g) / (1.0 - g + 2.0 * g * xi)
    c = (1.0 + g * g - t * t) / (2.0 * g)
    if c > 1.0:
        return 1.0
    if c < -1.0:
        return -1.0
    return c


@nb.njit(cache=True)
def rotate(ux, uy, uz, cos_t, phi):
    """Deflect (ux, uy, uz) by polar cosine ``cos_t`` and azimuth ``phi``."""
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    cos_p = math.cos(phi)
    sin_p = math.sin(phi)
    if abs(uz) > COS_ZERO:
        nx = sin_t * cos_p
        ny = sin_t * sin_p
        nz = cos_t if uz > 0.0 else -cos_t
    else:
        tmp = math.sqrt(1.0 - uz * uz)
        nx = sin_t * (ux * uz * cos_p - uy * sin_p) / tmp + ux * cos_t
        ny = sin_t * (uy * uz * cos_p + ux * sin_p) / tmp + uy * cos_t
        nz = -sin_t * cos_p * tmp + uz * cos_t
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


@nb.njit(cache=True)
def scatter(p, g, xi1, xi2):
    cos_t = hg_cos(g, xi1)
    p[UX], p[UY], p[UZ] = rotate(p[UX], p[UY], p[UZ], cos_t, 2.0 * math.pi * xi2)


@nb.njit(cache=True)
def launch(p, n_above, n_top):
    p[X] = 0.0
    p[Y] = 0.0
    p[Z] = 0.0
    p[UX] = 0.0
    p[UY] = 0.0
    p[UZ] = 1.0
    p[W] = 1.0 - specular(n_above, n_top)
    p[REGION] = 0.0
    p[MAXD] = 0.0
    p[STATUS] = ALIVE
    p[SLEFT] = 0.0


@nb.njit(cache=True)
def _move(p, d):
    p[X] += p[UX] * d
    p[Y] += p[UY] * d
    p[Z] += p[UZ] * d


@nb.njit(cache=True)
def advance(p, s, regions, sal_z):
    """Move up to ``s`` mm, stopping on the first plane crossed.

    Returns (event, distance moved). A SAL hit sets status SAL_ABSORBED.
    """
    r = int(p[REGION])
    z = p[Z]
    uz = p[UZ]
    if uz > 0.0:
        db = (regions[r, Z_BOT] - z) / uz
    elif uz < 0.0:
        db = (regions[r, Z_TOP] - z) / uz
    else:
        db = INF
    dsal = INF
    if uz > 0.0 and sal_z < INF:
        dsal = (sal_z - z) / uz
    if dsal <= s and dsal <= db:
        _move(p, dsal)
        p[Z] = sal_z
        if sal_z > p[MAXD]:
            p[MAXD] = sal_z
        p[STATUS] = SAL_ABSORBED
        return EV_SAL, dsal
    if db <= s:
        _move(p, db)
        p[Z] = regions[r, Z_BOT] if uz > 0.0 else regions[r, Z_TOP]
        if p[Z] > p[MAXD]:
            p[MAXD] = p[Z]
        return EV_BOUNDARY, db
    _move(p, s)
    if p[Z] > p[MAXD]:
        p[MAXD] = p[Z]
    return EV_INTERACT, s


@nb.njit(cache=True)
def cross_boundary(p, regions, n_above, n_below, xi):
    """Fresnel reflect or Snell refract a photon sitting on a region boundary."""
    r = int(p[REGION])
    last = regions.shape[0] - 1
    uz = p[UZ]
    if uz < 0.0:
        nr = r - 1
        n_t = n_above if r == 0 else regions[r - 1, N]
    else:
        nr = r + 1
        n_t = n_below if r == last else regions[r + 1, N]
    n_i = regions[r, N]
    refl, cos_t = fresnel(n_i, n_t, abs(uz))
    if xi < refl:
        p[UZ] = -uz
        return EV_REFLECT
    if n_i != n_t:
        ratio = n_i / n_t
        p[UX] *= ratio
        p[UY] *= ratio
        p[UZ] = cos_t if uz > 0.0 else -cos_t
    if nr < 0:
        p[STATUS] = EXITED_TOP
        return EV_EXIT_TOP
    if nr > last:
        p[STATUS] = TRANSMITTED
        return EV_EXIT_BOTTOM
    p[REGION] = nr
    return EV_TRANSMIT


@nb.njit(cache=True)
def attenuate(p, mu_a, mu_s):
    w = p[W]
    nw = w * (mu_s / (mu_a + mu_s))
    p[W] = nw
    return w - nw


@nb.njit(cache=True)
def roulette(p, xi, threshold, survival):
    """Returns (residual weight killed, weight gained by a survivor)."""
    w = p[W]
    if w >= threshold:
        return 0.0, 0.0
    if xi < survival:
        nw = w / survival
        p[W] = nw
        return 0.0, nw - w
    p[W] = 0.0
    p[STATUS] = ABSORBED
    return w, 0.0


@nb.njit(cache=True)
def trace_photon(p, regions, env, rng, dep):
    """Random-walk a launched photon to a terminal status.

    Deposits go into ``dep``; a photon leaving through the top surface ends
    with status EXITED_TOP and keeps its exit weight for detector scoring.
    Returns 1 when the event budget overflowed, else 0.
    """
    sal_z = env[ENV_SAL_Z]
    threshold = env[ENV_THRESHOLD]
    survival = env[ENV_SURVIVAL]
    max_events = nb.int64(env[ENV_MAX_EVENTS])
    events = 0
    while True:
        events += 1
        if events > max_events:
            dep[DEP_ABSORBED] += p[W]
            p[W] = 0.0
            p[STATUS] = ABSORBED
            return 1
        r = int(p[REGION])
        mu_a = regions[r, MU_A]
        mu_s = regions[r, MU_S]
        mu_t = mu_a + mu_s
        if p[SLEFT] <= 0.0:
            p[SLEFT] = sample_step(next_uniform(rng), 1.0)
        ev, d = advance(p, p[SLEFT] / mu_t, regions, sal_z)
        if ev == EV_SAL:
            dep[DEP_SAL] += p[W]
            return 0
        if ev == EV_BOUNDARY:
            p[SLEFT] -= d * mu_t
            e = cross_boundary(p, regions, env[ENV_N_ABOVE], env[ENV_N_BELOW], next_uniform(rng))
            if e == EV_EXIT_TOP:
                return 0
            if e == EV_EXIT_BOTTOM:
                dep[DEP_TRANSMITTED] += p[W]
                return 0
            continue
        p[SLEFT] = 0.0
        absorbed = attenuate(p, mu_a, mu_s)
        in_sal = regions[r, IS_SAL] > 0.0
        if in_sal:
            dep[DEP_SAL] += absorbed
        else:
            dep[DEP_ABSORBED] += absorbed
        if p[W] <= 0.0:
            p[STATUS] = SAL_ABSORBED if in_sal else ABSORBED
            return 0
        scatter(p, regions[r, G], next_uniform(rng), next_uniform(rng))
        if threshold > 0.0:
            residual, gain = roulette(p, next_uniform(rng), threshold, survival)
            dep[DEP_RESIDUAL] += residual
            dep[DEP_GAIN] += gain
            if p[STATUS] != ALIVE:
                return 0


@nb.njit(cache=True)
def find_detector(x, y, det_dist, radius, annulus):
    """(detector index or -1, weight scale) for an exit point."""
    if annulus:
        rho = math.sqrt(x * x + y * y)
        for i in range(det_dist.shape[0]):
            if abs(rho - det_dist[i]) <= radius:
                return i, radius / (4.0 * det_dist[i])
        return -1, 0.0
    if abs(y) > radius:
        return -1, 0.0
    r2 = radius * radius
    for i in range(det_dist.shape[0]):
        dx = x - det_dist[i]
        if dx * dx + y * y <= r2:
            return i, 1.0
    return -1, 0.0


@nb.njit(cache=True)
def score_exit(x, y, w, maxd, det_dist, radius, annulus, depth_grid,
               det_w, det_w2, det_n, dbd_w, dbd_w2):
    """Add one top-surface exit to the detector tallies; returns the detector index."""
    i, scale = find_detector(x, y, det_dist, radius, annulus)
    if i < 0:
        return -1
    wd = w * scale
    det_w[i] += wd
    det_w2[i] += wd * wd
    det_n[i] += 1
    for k in range(depth_grid.shape[0]):
        if depth_grid[k] > maxd:
            break
        dbd_w[i, k] += wd
        dbd_w2[i, k] += wd * wd
    return i


@nb.njit(cache=True, nogil=True)
def run_batch(regions, env, det_dist, radius, annulus, depth_grid, key0, key1, n_photons,
              det_w, det_w2, det_n, dbd_w, dbd_w2, reach_w, reach_w2, scalars):
    """Trace ``n_photons`` of stream (key0, key1) and accumulate into the outputs."""
    p = np.empty(PHOTON_SIZE, dtype=np.float64)
    rng = np.empty(STATE_SIZE, dtype=np.uint64)
    dep = np.empty(5, dtype=np.float64)
    n_above = env[ENV_N_ABOVE]
    n_top = regions[0, N]
    for i in range(n_photons):
        seed_state(rng, key0, key1, np.uint64(i))
        launch(p, n_above, n_top)
        w0 = p[W]
        scalars[S_LAUNCHED] += w0
        scalars[S_SPECULAR] += 1.0 - w0
        dep[:] = 0.0
        scalars[S_OVERFLOW] += trace_photon(p, regions, env, rng, dep)
        scalars[S_ABSORBED] += dep[DEP_ABSORBED]
        scalars[S_SAL] += dep[DEP_SAL]
        scalars[S_TRANSMITTED] += dep[DEP_TRANSMITTED]
        scalars[S_RESIDUAL] += dep[DEP_RESIDUAL]
        scalars[S_GAIN] += dep[DEP_GAIN]
        net = dep[DEP_GAIN] - dep[DEP_RESIDUAL]
        scalars[S_LEDGER_SQ] += net * net
        maxd = p[MAXD]
        if p[STATUS] == EXITED_TOP:
            hit = score_exit(p[X], p[Y], p[W], maxd, det_dist, radius, annulus, depth_grid,
                             det_w, det_w2, det_n, dbd_w, dbd_w2)
            if hit >= 0:
                scalars[S_DETECTED_EXIT] += p[W]
            else:
                scalars[S_ESCAPED] += p[W]
        for k in range(depth_grid.shape[0]):
            if depth_grid[k] > maxd:
                break
            reach_w[k] += w0
            reach_w2[k] += w0 * w0


@nb.njit(cache=True)
def sample_hg_cosines(g, n, key0, key1):
    """``n`` scattering cosines drawn through the full scatter path."""
    out = np.empty(n, dtype=np.float64)
    rng = np.empty(STATE_SIZE, dtype=np.uint64)
    p = np.zeros(PHOTON_SIZE, dtype=np.float64)
    seed_state(rng, key0, key1, np.uint64(0))
    for i in range(n):
        ux = 0.0
        uy = math.sqrt(0.5)
        uz = math.sqrt(0.5)
        p[UX], p[UY], p[UZ] = ux, uy, uz
        scatter(p, g, next_uniform(rng), next_uniform(rng))
        out[i] = ux * p[UX] + uy * p[UY] + uz * p[UZ]
    return out
