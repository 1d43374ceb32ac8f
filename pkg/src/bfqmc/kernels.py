"""Compiled hot loops: local/global Metropolis moves and measurement.

Space-time layout
-----------------
Occupancies live on a (n_slices, L) integer lattice with n_slices = 2*L_tau.
Half-step h propagates slice h to slice (h+1) % n_slices.  Bond b = (b, b+1)
carries a two-site kinetic factor at half-step h iff b % 2 == h % 2
(checkerboard); every other (h, b) cell is an inactive plaquette across
which occupancies can only change together on both of its time slices.

A local move shifts one world-line segment sideways across an inactive
plaquette (h, b): occupancy changes by -+1 on sites (b, b+1) at slices h and
h+1 simultaneously.  Its weight ratio involves exactly four active
plaquettes (below, above, left, right) plus four on-site diagonal factors.

A global shift move translates one unit of occupancy from column j to an
adjacent column on every slice at once; it is the move that transports
whole world lines across the trap.

Weight-ratio functions return 0.0 for blocked proposals and -1.0 when the
current configuration itself has a zero-weight factor, which signals a
broken world line and aborts the run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def plaquette_ratio(occ_m, occ_o, boson_moving, W, K, cap, diag_tab, dtau, h, b, d):
    """New/old weight ratio for the segment shift at inactive plaquette (h, b).

    occ_m is the moving species, occ_o the spectator; d = +1 moves the
    segment from site b to b+1, d = -1 the reverse.
    """
    n_slices, L = occ_m.shape
    k0 = h
    k1 = (h + 1) % n_slices
    if d == 1:
        src, dst = b, b + 1
    else:
        src, dst = b + 1, b
    if occ_m[k0, src] < 1 or occ_m[k1, src] < 1:
        return 0.0
    if occ_m[k0, dst] >= cap or occ_m[k1, dst] >= cap:
        return 0.0

    # occupancy deltas on the two plaquette columns
    db = -d  # change at site b:   -1 when moving right, +1 when moving left
    dbp = d  # change at site b+1: +1 when moving right, -1 when moving left

    ratio = 1.0

    # below: active plaquette (h-1, b); its outgoing slice k0 changes
    hb = (h - 1) % n_slices
    a_in = occ_m[hb, b] * K + occ_m[hb, b + 1]
    out_old = occ_m[k0, b] * K + occ_m[k0, b + 1]
    out_new = (occ_m[k0, b] + db) * K + (occ_m[k0, b + 1] + dbp)
    w_old = W[a_in, out_old]
    w_new = W[a_in, out_new]
    if w_old <= 0.0:
        return -1.0
    if w_new <= 0.0:
        return 0.0
    ratio *= w_new / w_old

    # above: active plaquette (h+1, b); its incoming slice k1 changes
    k2 = (k1 + 1) % n_slices
    a_out = occ_m[k2, b] * K + occ_m[k2, b + 1]
    in_old = occ_m[k1, b] * K + occ_m[k1, b + 1]
    in_new = (occ_m[k1, b] + db) * K + (occ_m[k1, b + 1] + dbp)
    w_old = W[in_old, a_out]
    w_new = W[in_new, a_out]
    if w_old <= 0.0:
        return -1.0
    if w_new <= 0.0:
        return 0.0
    ratio *= w_new / w_old

    # left: active plaquette (h, b-1); site b is its right column
    if b >= 1:
        in_old = occ_m[k0, b - 1] * K + occ_m[k0, b]
        in_new = occ_m[k0, b - 1] * K + (occ_m[k0, b] + db)
        out_old = occ_m[k1, b - 1] * K + occ_m[k1, b]
        out_new = occ_m[k1, b - 1] * K + (occ_m[k1, b] + db)
        w_old = W[in_old, out_old]
        w_new = W[in_new, out_new]
        if w_old <= 0.0:
            return -1.0
        if w_new <= 0.0:
            return 0.0
        ratio *= w_new / w_old

    # right: active plaquette (h, b+1); site b+1 is its left column
    if b + 1 <= L - 2:
        in_old = occ_m[k0, b + 1] * K + occ_m[k0, b + 2]
        in_new = (occ_m[k0, b + 1] + dbp) * K + occ_m[k0, b + 2]
        out_old = occ_m[k1, b + 1] * K + occ_m[k1, b + 2]
        out_new = (occ_m[k1, b + 1] + dbp) * K + occ_m[k1, b + 2]
        w_old = W[in_old, out_old]
        w_new = W[in_new, out_new]
        if w_old <= 0.0:
            return -1.0
        if w_new <= 0.0:
            return 0.0
        ratio *= w_new / w_old

    # diagonal factors at the four changed cells
    dE = 0.0
    for k in (k0, k1):
        nm_s = occ_m[k, src]
        no_s = occ_o[k, src]
        nm_d = occ_m[k, dst]
        no_d = occ_o[k, dst]
        if boson_moving:
            dE += diag_tab[src, nm_s - 1, no_s] - diag_tab[src, nm_s, no_s]
            dE += diag_tab[dst, nm_d + 1, no_d] - diag_tab[dst, nm_d, no_d]
        else:
            dE += diag_tab[src, no_s, nm_s - 1] - diag_tab[src, no_s, nm_s]
            dE += diag_tab[dst, no_d, nm_d + 1] - diag_tab[dst, no_d, nm_d]
    ratio *= np.exp(-0.5 * dtau * dE)
    return ratio


@njit(cache=True)
def apply_plaquette_move(occ_m, h, b, d):
    n_slices = occ_m.shape[0]
    k0 = h
    k1 = (h + 1) % n_slices
    if d == 1:
        src, dst = b, b + 1
    else:
        src, dst = b + 1, b
    occ_m[k0, src] -= 1
    occ_m[k1, src] -= 1
    occ_m[k0, dst] += 1
    occ_m[k1, dst] += 1


@njit(cache=True)
def shift_ratio(occ_m, occ_o, boson_moving, W, K, cap, diag_tab, dtau, j, d):
    """Weight ratio for translating one occupancy unit from column j to j+d
    on every slice (a whole-world-line shift).  0.0 if blocked."""
    n_slices, L = occ_m.shape
    jd = j + d
    if jd < 0 or jd >= L:
        return 0.0
    for k in range(n_slices):
        if occ_m[k, j] < 1 or occ_m[k, jd] >= cap:
            return 0.0

    dE = 0.0
    for k in range(n_slices):
        nm = occ_m[k, j]
        no = occ_o[k, j]
        nmd = occ_m[k, jd]
        nod = occ_o[k, jd]
        if boson_moving:
            dE += diag_tab[j, nm - 1, no] - diag_tab[j, nm, no]
            dE += diag_tab[jd, nmd + 1, nod] - diag_tab[jd, nmd, nod]
        else:
            dE += diag_tab[j, no, nm - 1] - diag_tab[j, no, nm]
            dE += diag_tab[jd, nod, nmd + 1] - diag_tab[jd, nod, nmd]
    ratio = np.exp(-0.5 * dtau * dE)

    lo = min(j, jd) - 1
    if lo < 0:
        lo = 0
    hi = max(j, jd)
    if hi > L - 2:
        hi = L - 2
    for bb in range(lo, hi + 1):
        for h in range(bb % 2, n_slices, 2):
            k1 = (h + 1) % n_slices
            a0 = occ_m[h, bb]
            a1 = occ_m[h, bb + 1]
            c0 = occ_m[k1, bb]
            c1 = occ_m[k1, bb + 1]
            n0 = a0
            n1 = a1
            m0 = c0
            m1 = c1
            if bb == j:
                n0 -= 1
                m0 -= 1
            elif bb == jd:
                n0 += 1
                m0 += 1
            if bb + 1 == j:
                n1 -= 1
                m1 -= 1
            elif bb + 1 == jd:
                n1 += 1
                m1 += 1
            w_old = W[a0 * K + a1, c0 * K + c1]
            w_new = W[n0 * K + n1, m0 * K + m1]
            if w_old <= 0.0:
                return -1.0
            if w_new <= 0.0:
                return 0.0
            ratio *= w_new / w_old
    return ratio


@njit(cache=True)
def apply_shift(occ_m, j, d):
    n_slices = occ_m.shape[0]
    jd = j + d
    for k in range(n_slices):
        occ_m[k, j] -= 1
        occ_m[k, jd] += 1


@njit(cache=True)
def exchange_ratio(occ_b, occ_f, W_b, W_f, K_b, n_max, diag_tab, dtau, j, d):
    """Weight ratio for swapping one boson unit at column j with one fermion
    unit at column j+d on every slice simultaneously.

    Single-occupancy swaps leave trap and interaction energies untouched, so
    this move exchanges the species positions at O(1) acceptance; relying on
    kink pairs alone makes that exchange a doubly-suppressed rare event.
    """
    n_slices, L = occ_b.shape
    jd = j + d
    if jd < 0 or jd >= L:
        return 0.0
    for k in range(n_slices):
        if occ_b[k, j] < 1 or occ_b[k, jd] >= n_max:
            return 0.0
        if occ_f[k, jd] < 1 or occ_f[k, j] >= 1:
            return 0.0

    dE = 0.0
    for k in range(n_slices):
        nb_j = occ_b[k, j]
        nf_j = occ_f[k, j]
        nb_d = occ_b[k, jd]
        nf_d = occ_f[k, jd]
        dE += diag_tab[j, nb_j - 1, nf_j + 1] - diag_tab[j, nb_j, nf_j]
        dE += diag_tab[jd, nb_d + 1, nf_d - 1] - diag_tab[jd, nb_d, nf_d]
    ratio = np.exp(-0.5 * dtau * dE)

    lo = min(j, jd) - 1
    if lo < 0:
        lo = 0
    hi = max(j, jd)
    if hi > L - 2:
        hi = L - 2
    for species in range(2):
        if species == 0:
            occ = occ_b
            W = W_b
            K = K_b
            src, dst = j, jd  # boson moves j -> jd
        else:
            occ = occ_f
            W = W_f
            K = 2
            src, dst = jd, j  # fermion moves jd -> j
        for bb in range(lo, hi + 1):
            for h in range(bb % 2, n_slices, 2):
                k1 = (h + 1) % n_slices
                a0 = occ[h, bb]
                a1 = occ[h, bb + 1]
                c0 = occ[k1, bb]
                c1 = occ[k1, bb + 1]
                n0 = a0
                n1 = a1
                m0 = c0
                m1 = c1
                if bb == src:
                    n0 -= 1
                    m0 -= 1
                elif bb == dst:
                    n0 += 1
                    m0 += 1
                if bb + 1 == src:
                    n1 -= 1
                    m1 -= 1
                elif bb + 1 == dst:
                    n1 += 1
                    m1 += 1
                w_old = W[a0 * K + a1, c0 * K + c1]
                w_new = W[n0 * K + n1, m0 * K + m1]
                if w_old <= 0.0:
                    return -1.0
                if w_new <= 0.0:
                    return 0.0
                ratio *= w_new / w_old
    return ratio


@njit(cache=True)
def apply_exchange(occ_b, occ_f, j, d):
    n_slices = occ_b.shape[0]
    jd = j + d
    for k in range(n_slices):
        occ_b[k, j] -= 1
        occ_b[k, jd] += 1
        occ_f[k, jd] -= 1
        occ_f[k, j] += 1


@njit(cache=True)
def run_sweeps(
    occ_b,
    occ_f,
    W_b,
    W_f,
    K_b,
    n_max,
    N_b,
    N_f,
    diag_tab,
    dtau,
    rng,
    first_index,
    n_sweeps,
    stats,
):
    """Run n_sweeps full Metropolis sweeps in place.

    One sweep rasters every inactive plaquette once per species (species
    order alternates with the sweep index), proposes one global shift per
    particle, then min(N_b, N_f) species-exchange swaps.
    stats[species, move_class, 0/1] accumulates proposed/accepted counts
    (move classes: 0 local, 1 shift, 2 exchange under the boson row).
    Returns the number of weight violations (0 for a healthy run).
    """
    n_slices, L = occ_b.shape
    violations = 0
    for s in range(n_sweeps):
        sweep_index = first_index + s
        for step in range(2):
            boson_moving = (sweep_index + step) % 2 == 0
            if boson_moving:
                occ_m = occ_b
                occ_o = occ_f
                W = W_b
                K = K_b
                cap = n_max
                sp = 0
            else:
                occ_m = occ_f
                occ_o = occ_b
                W = W_f
                K = 2
                cap = 1
                sp = 1
            for h in range(n_slices):
                for b in range((h + 1) % 2, L - 1, 2):
                    d = 1 if rng.random() < 0.5 else -1
                    r = plaquette_ratio(
                        occ_m, occ_o, boson_moving, W, K, cap, diag_tab, dtau, h, b, d
                    )
                    stats[sp, 0, 0] += 1
                    if r < 0.0:
                        violations += 1
                    elif r > 0.0 and (r >= 1.0 or rng.random() < r):
                        apply_plaquette_move(occ_m, h, b, d)
                        stats[sp, 0, 1] += 1
        for step in range(2):
            boson_moving = (sweep_index + step) % 2 == 0
            if boson_moving:
                occ_m = occ_b
                occ_o = occ_f
                W = W_b
                K = K_b
                cap = n_max
                n_part = N_b
                sp = 0
            else:
                occ_m = occ_f
                occ_o = occ_b
                W = W_f
                K = 2
                cap = 1
                n_part = N_f
                sp = 1
            for _ in range(n_part):
                j = rng.integers(0, L)
                d = 1 if rng.random() < 0.5 else -1
                r = shift_ratio(occ_m, occ_o, boson_moving, W, K, cap, diag_tab, dtau, j, d)
                stats[sp, 1, 0] += 1
                if r < 0.0:
                    violations += 1
                elif r > 0.0 and (r >= 1.0 or rng.random() < r):
                    apply_shift(occ_m, j, d)
                    stats[sp, 1, 1] += 1
        n_swap = min(N_b, N_f)
        for _ in range(n_swap):
            j = rng.integers(0, L)
            d = 1 if rng.random() < 0.5 else -1
            r = exchange_ratio(occ_b, occ_f, W_b, W_f, K_b, n_max, diag_tab, dtau, j, d)
            stats[0, 2, 0] += 1
            if r < 0.0:
                violations += 1
            elif r > 0.0 and (r >= 1.0 or rng.random() < r):
                apply_exchange(occ_b, occ_f, j, d)
                stats[0, 2, 1] += 1
    return violations


@njit(cache=True)
def measure_config(occ_b, occ_f, n_max, out):
    """Accumulate slice-averaged equal-time moments per site into out[6, L].

    Row order: n_b, n_f, n_b^2, n_f^2, (n_b+n_f)^2, n_b*n_f.  Returns the
    number of (slice, site) cells at the boson cutoff.
    """
    n_slices, L = occ_b.shape
    sat = 0
    inv = 1.0 / n_slices
    for i in range(L):
        s0 = 0
        s1 = 0
        s2 = 0
        s3 = 0
        s4 = 0
        s5 = 0
        for k in range(n_slices):
            nb = occ_b[k, i]
            nf = occ_f[k, i]
            s0 += nb
            s1 += nf
            s2 += nb * nb
            s3 += nf * nf
            nt = nb + nf
            s4 += nt * nt
            s5 += nb * nf
            if nb == n_max:
                sat += 1
        out[0, i] += s0 * inv
        out[1, i] += s1 * inv
        out[2, i] += s2 * inv
        out[3, i] += s3 * inv
        out[4, i] += s4 * inv
        out[5, i] += s5 * inv
    return sat
