"""Brute-force reference implementations used as independent test oracles.

Everything here loops over sites and edges explicitly and shares no code with
the package beyond reading the raw edge arrays of a coefficient field.
"""

import itertools

import numpy as np


def sites(lattice):
    r = lattice.radius
    return list(itertools.product(range(-r, r + 1), repeat=lattice.dim))


def edge_value(field, site, k):
    """Conductance of the edge from ``site`` to ``site + e_k`` read from the raw face arrays."""
    lat = field.lattice
    pos = [c + lat.radius for c in site]
    if lat.periodic:
        pos[k] = (pos[k] + 1) % lat.side
    else:
        pos[k] += 1
    return float(field.faces[k][tuple(pos)])


def neighbour(lattice, site, k, step):
    nb = list(site)
    nb[k] += step
    if lattice.periodic:
        nb[k] = (nb[k] + lattice.radius) % lattice.side - lattice.radius
        return tuple(nb)
    return tuple(nb) if abs(nb[k]) <= lattice.radius else None


def dense_operator(field, mu):
    lat = field.lattice
    pts = sites(lat)
    pos = {p: i for i, p in enumerate(pts)}
    M = np.zeros((len(pts), len(pts)))
    for p in pts:
        i = pos[p]
        M[i, i] += mu
        for k in range(lat.dim):
            back = list(p)
            back[k] -= 1
            for a, step in ((edge_value(field, p, k), 1), (edge_value(field, tuple(back), k), -1)):
                M[i, i] += a
                nb = neighbour(lat, p, k, step)
                if nb is not None:
                    M[i, pos[nb]] -= a
    return M


def dense_solve(field, mu, f):
    lat = field.lattice
    return np.linalg.solve(dense_operator(field, mu), np.asarray(f).ravel()).reshape(lat.shape)


def gradient_loop(lattice, u):
    out = np.zeros((lattice.dim,) + lattice.shape)
    for p in sites(lattice):
        a = tuple(c + lattice.radius for c in p)
        for k in range(lattice.dim):
            nb = neighbour(lattice, p, k, 1)
            v = 0.0 if nb is None else u[tuple(c + lattice.radius for c in nb)]
            out[(k,) + a] = v - u[a]
    return out


def ball_sites(center, L):
    r = int(np.floor(L))
    d = len(center)
    return [tuple(c + o for c, o in zip(center, off))
            for off in itertools.product(range(-r, r + 1), repeat=d)
            if sum(o * o for o in off) <= L * L + 1e-12]


def grad_sq_at(lattice, u, site):
    """|grad u|^2 at ``site``: half the sum of squared differences over all 2d incident edges."""
    val = u[tuple(c + lattice.radius for c in site)]
    tot = 0.0
    for k in range(lattice.dim):
        for step in (1, -1):
            nb = list(site)
            nb[k] += step
            tot += 0.5 * (u[tuple(c + lattice.radius for c in nb)] - val) ** 2
    return tot
