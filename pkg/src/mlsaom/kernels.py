"""Compiled inner loops: change scores, likelihood replay, simulation, path moves.

Everything here mirrors the reference implementations in ``effects`` and
``process``; the compiled versions exist because the sampler evaluates
millions of mini-step choice distributions per run.  States are uint8
matrices, mini-steps are rows ``(net, actor, target)`` with ``net`` 0 for
the one-mode and 1 for the two-mode network and ``target -1`` for the
no-change outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .netstate import NET_X, NET_Z
from .effects import CovariateSet, ModelSpec

K_OUTDEGREE = 0
K_RECIP = 1
K_TRANSTRIP = 2
K_TRANSRECTRIP = 3
K_INDEG_POP = 4
K_OUTDEG_ACT = 5
K_RECIP_DEG_ACT = 6
K_COV_EGO = 7
K_COV_SAME = 8
K_COV_SIM = 9
K_LOG_SIZE_ACT = 10
K_OD = 11
K_ID = 12
K_ODD = 13
K_OD_AV = 14
K_THREE_CYCLES = 15

KIND_CODES = {
    "outdegree": K_OUTDEGREE,
    "reciprocity": K_RECIP,
    "transitive_triplets": K_TRANSTRIP,
    "transitive_recip_triplets": K_TRANSRECTRIP,
    "indegree_popularity": K_INDEG_POP,
    "outdegree_activity": K_OUTDEG_ACT,
    "reciprocal_degree_activity": K_RECIP_DEG_ACT,
    "covariate_ego": K_COV_EGO,
    "covariate_same": K_COV_SAME,
    "covariate_similarity": K_COV_SIM,
    "log_group_size_activity": K_LOG_SIZE_ACT,
    "od": K_OD,
    "id": K_ID,
    "odd": K_ODD,
    "od_av": K_OD_AV,
    "three_cycles": K_THREE_CYCLES,
}

# Move codes inside the path sweep.
MV_INSERT_PAIR = 0
MV_DELETE_PAIR = 1
MV_INSERT_DIAG = 2
MV_DELETE_DIAG = 3
MV_PERMUTE = 4


@dataclass
class EffectTables:
    """Numeric encoding of one group's model + covariates for the kernels."""

    kinds_x: np.ndarray
    cov_x: np.ndarray
    aux1_x: np.ndarray
    aux2_x: np.ndarray
    kinds_z: np.ndarray
    cov_z: np.ndarray
    aux1_z: np.ndarray
    aux2_z: np.ndarray
    covmat: np.ndarray  # (n, n_cols) actor-level values, group scalars broadcast
    logn: float
    zbar: float


def build_tables(model: ModelSpec, cov: CovariateSet, n: int, h: int) -> EffectTables:
    columns: dict[str, int] = {}
    colvals: list[np.ndarray] = []

    def col_for(name: str) -> int:
        if name not in columns:
            columns[name] = len(colvals)
            colvals.append(cov.ego_values(name, n))
        return columns[name]

    def encode(effects):
        kinds = np.empty(len(effects), dtype=np.int64)
        covc = np.full(len(effects), -1, dtype=np.int64)
        aux1 = np.zeros(len(effects))
        aux2 = np.zeros(len(effects))
        for e, eff in enumerate(effects):
            kinds[e] = KIND_CODES[eff.name]
            if eff.covariate is not None:
                covc[e] = col_for(eff.covariate)
            if eff.name == "covariate_similarity":
                aux1[e] = cov.similarity_mean.get(eff.covariate, 0.0)
                rng = cov.ranges.get(eff.covariate, 0.0)
                if rng <= 0:
                    raise ValueError(f"covariate {eff.covariate!r} lacks a positive range")
                aux2[e] = rng
        return kinds, covc, aux1, aux2

    kx, cx, a1x, a2x = encode(model.x_effects)
    kz, cz, a1z, a2z = encode(model.z_effects)
    covmat = np.column_stack(colvals) if colvals else np.zeros((n, 1))
    return EffectTables(kx, cx, a1x, a2x, kz, cz, a1z, a2z,
                        np.ascontiguousarray(covmat, dtype=np.float64),
                        math.log(n), float(cov.zbar))


def theta_arrays(model: ModelSpec, theta_x, theta_z):
    tx = np.ascontiguousarray(theta_x, dtype=np.float64)
    tz = np.ascontiguousarray(theta_z, dtype=np.float64)
    if tx.shape != (len(model.x_effects),) or tz.shape != (len(model.z_effects),):
        raise ValueError("coefficient vectors do not match the model specification")
    return tx, tz


@njit(cache=True)
def _delta_x(x, z, n, h, i, kinds, covcol, aux1, aux2, theta, covmat, logn, zbar, out):
    """Change scores for all one-mode options of actor i; out[i] = no change."""
    ne = kinds.shape[0]
    xout = 0
    for j in range(n):
        xout += x[i, j]
    xin = 0
    for j in range(n):
        xin += x[j, i]
    zdeg = 0
    for k in range(h):
        zdeg += z[i, k]

    need_tp = False
    need_co = False
    need_rc = False
    need_c3 = False
    need_zz = False
    need_zd = False
    rdeg = 0
    for e in range(ne):
        kd = kinds[e]
        if kd == K_TRANSTRIP:
            need_tp = True
            need_co = True
        elif kd == K_TRANSRECTRIP:
            need_tp = True
            need_rc = True
        elif kd == K_THREE_CYCLES:
            need_c3 = True
        elif kd == K_ODD:
            need_zz = True
        elif kd == K_ID:
            need_zd = True
        elif kd == K_RECIP_DEG_ACT:
            for jj in range(n):
                rdeg += x[i, jj] * x[jj, i]

    tp = np.zeros(n)
    co = np.zeros(n)
    rc = np.zeros(n)
    c3 = np.zeros(n)
    zz = np.zeros(n)
    zd = np.zeros(n)
    if need_tp or need_co or need_rc:
        for hh in range(n):
            if x[i, hh]:
                mut = x[hh, i]
                for j in range(n):
                    tp[j] += x[hh, j]
                    co[j] += x[j, hh]
                    if mut:
                        rc[j] += x[j, hh]
    if need_c3:
        for j in range(n):
            s = 0
            for hh in range(n):
                s += x[j, hh] * x[hh, i]
            c3[j] = s
    if need_zz:
        for j in range(n):
            s = 0
            for k in range(h):
                s += z[i, k] * z[j, k]
            zz[j] = s
    if need_zd:
        for j in range(n):
            s = 0
            for k in range(h):
                s += z[j, k]
            zd[j] = s

    for j in range(n):
        if j == i:
            out[j] = 0.0
            continue
        d = 1.0 - 2.0 * x[i, j]
        xji = float(x[j, i])
        acc = 0.0
        for e in range(ne):
            kd = kinds[e]
            th = theta[e]
            if kd == K_OUTDEGREE:
                acc += th * d
            elif kd == K_RECIP:
                acc += th * d * xji
            elif kd == K_TRANSTRIP:
                acc += th * d * (tp[j] + co[j])
            elif kd == K_TRANSRECTRIP:
                acc += th * d * (xji * tp[j] + rc[j])
            elif kd == K_INDEG_POP:
                acc += th * d * xin
            elif kd == K_OUTDEG_ACT:
                acc += th * (2.0 * d * xout + 1.0)
            elif kd == K_RECIP_DEG_ACT:
                acc += th * (d * rdeg + xji * (d * xout + 1.0))
            elif kd == K_COV_EGO:
                acc += th * d * covmat[i, covcol[e]]
            elif kd == K_COV_SAME:
                if covmat[i, covcol[e]] == covmat[j, covcol[e]]:
                    acc += th * d
            elif kd == K_COV_SIM:
                sim = 1.0 - abs(covmat[i, covcol[e]] - covmat[j, covcol[e]]) / aux2[e]
                acc += th * d * (sim - aux1[e])
            elif kd == K_LOG_SIZE_ACT:
                acc += th * d * logn
            elif kd == K_OD:
                acc += th * d * zdeg
            elif kd == K_ID:
                acc += th * d * zd[j]
            elif kd == K_ODD:
                acc += th * d * zz[j]
            elif kd == K_THREE_CYCLES:
                acc += th * d * c3[j]
        out[j] = acc


@njit(cache=True)
def _delta_z(x, z, n, h, i, kinds, covcol, aux1, aux2, theta, covmat, logn, zbar, out):
    """Change scores for all two-mode options of actor i; out[h] = no change."""
    ne = kinds.shape[0]
    xout = 0
    for j in range(n):
        xout += x[i, j]
    xin = 0
    for j in range(n):
        xin += x[j, i]
    zdeg = 0
    for k in range(h):
        zdeg += z[i, k]

    need_fz = False
    need_zin = False
    need_w = False
    for e in range(ne):
        kd = kinds[e]
        if kd == K_ODD:
            need_fz = True
        elif kd == K_INDEG_POP:
            need_zin = True
        elif kd == K_OD_AV:
            need_w = True

    fz = np.zeros(h)
    zin = np.zeros(h)
    if need_fz or need_zin:
        for j in range(n):
            xij = x[i, j]
            for k in range(h):
                if need_zin:
                    zin[k] += z[j, k]
                if need_fz and xij:
                    fz[k] += z[j, k]
    w = 0.0
    if need_w and xout > 0:
        s = 0.0
        for j in range(n):
            if x[i, j]:
                jz = 0
                for k in range(h):
                    jz += z[j, k]
                s += jz - zbar
        w = s / xout

    for k in range(h):
        zik = z[i, k]
        d = 1.0 - 2.0 * zik
        acc = 0.0
        for e in range(ne):
            kd = kinds[e]
            th = theta[e]
            if kd == K_OUTDEGREE:
                acc += th * d
            elif kd == K_INDEG_POP:
                acc += th * d * (zin[k] + zik + d)
            elif kd == K_OUTDEG_ACT:
                acc += th * (2.0 * d * zdeg + 1.0)
            elif kd == K_COV_EGO:
                acc += th * d * covmat[i, covcol[e]]
            elif kd == K_LOG_SIZE_ACT:
                acc += th * d * logn
            elif kd == K_OD:
                acc += th * d * xout
            elif kd == K_ID:
                acc += th * d * xin
            elif kd == K_ODD:
                acc += th * d * fz[k]
            elif kd == K_OD_AV:
                acc += th * d * w
        out[k] = acc
    out[h] = 0.0


@njit(cache=True)
def _step_logprob(x, z, n, h, net, i, target,
                  kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                  covmat, logn, zbar, buf):
    """Log choice probability of one mini-step outcome at the current state."""
    if net == 0:
        _delta_x(x, z, n, h, i, kx, cx, a1x, a2x, tx, covmat, logn, zbar, buf)
        m = n
        slot = i if target < 0 else target
    else:
        _delta_z(x, z, n, h, i, kz, cz, a1z, a2z, tz, covmat, logn, zbar, buf)
        m = h + 1
        slot = h if target < 0 else target
    mx = buf[0]
    for j in range(1, m):
        if buf[j] > mx:
            mx = buf[j]
    s = 0.0
    for j in range(m):
        s += math.exp(buf[j] - mx)
    return buf[slot] - mx - math.log(s)


@njit(cache=True)
def _apply(x, z, net, i, target):
    if target < 0:
        return
    if net == 0:
        x[i, target] = 1 - x[i, target]
    else:
        z[i, target] = 1 - z[i, target]


@njit(cache=True)
def replay_logp(x, z, steps, R, kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                covmat, logn, zbar, lamX, lamZ, T, buf, logps_out):
    """Augmented log likelihood of one period's path, mutating x/z to the end state.

    Fills ``logps_out[:R]`` with per-step log choice probabilities.
    """
    n = x.shape[0]
    h = z.shape[1]
    lam_pp = n * (lamX + lamZ)
    total = -lam_pp * T
    if R > 0:
        total += R * math.log(lam_pp * T) - math.lgamma(R + 1.0)
    # per-step mark probability of (actor, network): lam^V / (n (lamX + lamZ))
    log_ratio_x = math.log(lamX / (lamX + lamZ)) - math.log(n) if lamX > 0 else -np.inf
    log_ratio_z = math.log(lamZ / (lamX + lamZ)) - math.log(n) if lamZ > 0 else -np.inf
    for r in range(R):
        net = steps[r, 0]
        i = steps[r, 1]
        t = steps[r, 2]
        lp = _step_logprob(x, z, n, h, net, i, t,
                           kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                           covmat, logn, zbar, buf)
        logps_out[r] = lp
        total += lp + (log_ratio_x if net == 0 else log_ratio_z)
        _apply(x, z, net, i, t)
    return total


@njit(cache=True)
def simulate_steps(x, z, R, steps_out, kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                   covmat, logn, zbar, lamX, lamZ, gen, buf):
    """Draw R mini-steps forward, mutating x/z; records every opportunity."""
    n = x.shape[0]
    h = z.shape[1]
    p_x = lamX / (lamX + lamZ)
    for r in range(R):
        net = 0 if gen.random() < p_x else 1
        i = int(gen.random() * n)
        if i == n:
            i = n - 1
        if net == 0:
            _delta_x(x, z, n, h, i, kx, cx, a1x, a2x, tx, covmat, logn, zbar, buf)
            m = n
            diag_slot = i
        else:
            _delta_z(x, z, n, h, i, kz, cz, a1z, a2z, tz, covmat, logn, zbar, buf)
            m = h + 1
            diag_slot = h
        mx = buf[0]
        for j in range(1, m):
            if buf[j] > mx:
                mx = buf[j]
        s = 0.0
        for j in range(m):
            s += math.exp(buf[j] - mx)
        u = gen.random() * s
        acc = 0.0
        pick = m - 1
        for j in range(m):
            acc += math.exp(buf[j] - mx)
            if u <= acc:
                pick = j
                break
        steps_out[r, 0] = net
        steps_out[r, 1] = i
        if pick == diag_slot:
            steps_out[r, 2] = -1
        else:
            steps_out[r, 2] = pick
            _apply(x, z, net, i, pick)


@njit(cache=True)
def _code_of(net, i, target, n, h):
    """Integer id of a tie variable (diagonal steps get -1)."""
    if target < 0:
        return -1
    if net == 0:
        return i * n + target
    return n * n + i * h + target


@njit(cache=True)
def _count_pairs(codes, R, buckets):
    """Number of unordered pairs of steps toggling the same variable."""
    for b in range(buckets.shape[0]):
        buckets[b] = 0
    for r in range(R):
        c = codes[r]
        if c >= 0:
            buckets[c] += 1
    total = 0
    for b in range(buckets.shape[0]):
        m = buckets[b]
        if m >= 2:
            total += m * (m - 1) // 2
    return total


@njit(cache=True, inline="always")
def _x_step_affected(i, vnet, vk, vt, flags, sx):
    """Does flipping variable (vnet, vk, vt) change actor i's one-mode scores?"""
    if vnet == 0:
        if i == vk or i == vt:
            return True
        if (flags & 1) != 0 and (sx[i, vk] != 0 or sx[i, vt] != 0):
            return True
        if (flags & 2) != 0 and sx[vt, i] != 0:
            return True
        return False
    # two-mode flip: odd/id cross effects couple every actor's option scores
    if (flags & 4) != 0:
        return True
    return i == vk


@njit(cache=True, inline="always")
def _z_step_affected(i, vnet, vk, vt, flags, sx):
    """Does flipping variable (vnet, vk, vt) change actor i's two-mode scores?"""
    if vnet == 0:
        return i == vk or i == vt
    if (flags & 8) != 0:
        return True
    if i == vk:
        return True
    return (flags & 16) != 0 and sx[i, vk] != 0


@njit(cache=True, inline="always")
def _step_affected(net, i, vnet, vk, vt, flags, sx):
    if net == 0:
        return _x_step_affected(i, vnet, vk, vt, flags, sx)
    return _z_step_affected(i, vnet, vk, vt, flags, sx)


@njit(cache=True)
def path_sweep(x0, z0, steps, codes, logps, R, n_updates, move_cum,
               kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
               covmat, logn, zbar, lamX, lamZ, T, has_z, skip_flags, gen,
               sx, sz, buf, tmp, buckets, npairs_state, counters):
    """Metropolis-Hastings path updates targeting the augmented likelihood.

    ``steps``/``codes``/``logps`` are updated in place; returns the new
    path length, or -(length+1) if the capacity of the arrays was reached
    (the caller grows them and resumes with the remaining updates, which
    are returned via counters[10]).  ``buckets``/``npairs_state`` hold the
    per-variable toggle counts and the cancelling-pair count, maintained
    incrementally across calls.  ``skip_flags`` encodes which effect kinds
    force recomputation of other actors' cached step probabilities when a
    variable flips (0 disables the shortcut entirely).

    ``counters``: proposals[0:5], acceptances[5:10] per move kind,
    remaining updates [10].
    """
    n = x0.shape[0]
    h = z0.shape[1]
    cap = steps.shape[0]
    nvars = n * (n - 1) + (n * h if has_z == 1 else 0)
    ndiag = n * (2 if has_z == 1 else 1)
    log_ratio_x = math.log(lamX / (lamX + lamZ)) - math.log(n) if lamX > 0 else -np.inf
    log_ratio_z = math.log(lamZ / (lamX + lamZ)) - math.log(n) if lamZ > 0 else -np.inf
    lam_pp_T = n * (lamX + lamZ) * T
    log_lam_pp_T = math.log(lam_pp_T)
    no_skip = skip_flags < 0
    flags = 0 if no_skip else skip_flags

    for upd in range(n_updates):
        u = gen.random()
        move = 0
        for mvi in range(5):
            if u < move_cum[mvi]:
                move = mvi
                break
        counters[move] += 1

        if move == MV_INSERT_PAIR:
            if R + 2 > cap:
                counters[10] = n_updates - upd
                return -(R + 1)
            # uniform tie variable
            v = int(gen.random() * nvars)
            if v == nvars:
                v -= 1
            if v < n * (n - 1):
                vnet = 0
                vi = v // (n - 1)
                rmd = v % (n - 1)
                vt = rmd if rmd < vi else rmd + 1
            else:
                v2 = v - n * (n - 1)
                vnet = 1
                vi = v2 // h
                vt = v2 % h
            vcode = _code_of(vnet, vi, vt, n, h)
            # two distinct uniform positions in the candidate path (length R+2)
            a = int(gen.random() * (R + 2))
            if a > R + 1:
                a = R + 1
            b = int(gen.random() * (R + 1))
            if b > R:
                b = R
            if b >= a:
                b += 1
            if a > b:
                a, b = b, a
            # pairs of identical toggles after insertion, for the reverse move
            mv = buckets[vcode]
            ndel_new = npairs_state[0] + 2 * mv + 1
            # replay prefix
            for ii in range(n):
                for jj in range(n):
                    sx[ii, jj] = x0[ii, jj]
                for kk in range(h):
                    sz[ii, kk] = z0[ii, kk]
            for r in range(a):
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            new_sum = 0.0
            old_sum = 0.0
            lp1 = _step_logprob(sx, sz, n, h, vnet, vi, vt,
                                kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                                covmat, logn, zbar, buf)
            _apply(sx, sz, vnet, vi, vt)
            new_sum += lp1
            for r in range(a, b - 1):
                if no_skip or _step_affected(steps[r, 0], steps[r, 1], vnet, vi, vt, flags, sx):
                    lp = _step_logprob(sx, sz, n, h, steps[r, 0], steps[r, 1], steps[r, 2],
                                       kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                                       covmat, logn, zbar, buf)
                    tmp[r - a] = lp
                    new_sum += lp
                    old_sum += logps[r]
                else:
                    tmp[r - a] = logps[r]
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            lp2 = _step_logprob(sx, sz, n, h, vnet, vi, vt,
                                kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                                covmat, logn, zbar, buf)
            new_sum += lp2
            lr = log_ratio_x if vnet == 0 else log_ratio_z
            d_rate = 2.0 * lr + 2.0 * log_lam_pp_T - math.log((R + 1.0) * (R + 2.0))
            npairs_pos = (R + 2.0) * (R + 1.0) / 2.0
            log_hastings = (math.log(move_cum[1] - move_cum[0]) - math.log(ndel_new)
                            - math.log(move_cum[0]) + math.log(nvars) + math.log(npairs_pos))
            log_alpha = new_sum - old_sum + d_rate + log_hastings
            if log_alpha >= 0.0 or gen.random() < math.exp(log_alpha):
                counters[5 + move] += 1
                for r in range(R - 1, b - 2, -1):
                    steps[r + 2, 0] = steps[r, 0]
                    steps[r + 2, 1] = steps[r, 1]
                    steps[r + 2, 2] = steps[r, 2]
                    codes[r + 2] = codes[r]
                    logps[r + 2] = logps[r]
                for r in range(b - 2, a - 1, -1):
                    steps[r + 1, 0] = steps[r, 0]
                    steps[r + 1, 1] = steps[r, 1]
                    steps[r + 1, 2] = steps[r, 2]
                    codes[r + 1] = codes[r]
                    logps[r + 1] = tmp[r - a]
                steps[a, 0] = vnet
                steps[a, 1] = vi
                steps[a, 2] = vt
                codes[a] = vcode
                logps[a] = lp1
                steps[b, 0] = vnet
                steps[b, 1] = vi
                steps[b, 2] = vt
                codes[b] = vcode
                logps[b] = lp2
                R += 2
                buckets[vcode] = mv + 2
                npairs_state[0] = ndel_new

        elif move == MV_DELETE_PAIR:
            ndel = npairs_state[0]
            if ndel == 0:
                continue
            # pick variable with probability proportional to its pair count
            t_pair = int(gen.random() * ndel)
            if t_pair == ndel:
                t_pair -= 1
            vcode = -1
            acc_pairs = 0
            for bkt in range(buckets.shape[0]):
                m = buckets[bkt]
                if m >= 2:
                    acc_pairs += m * (m - 1) // 2
                    if t_pair < acc_pairs:
                        vcode = bkt
                        break
            mv = buckets[vcode]
            prev_pairs = acc_pairs - mv * (mv - 1) // 2
            within = t_pair - prev_pairs  # pair ordinal within this variable
            # decode unordered occurrence pair (p, q), p < q
            p = 0
            q = 1
            left = within
            while True:
                npair_row = mv - 1 - p
                if left < npair_row:
                    q = p + 1 + left
                    break
                left -= npair_row
                p += 1
            # locate the p-th and q-th occurrences
            occ = -1
            r1 = -1
            r2 = -1
            for r in range(R):
                if codes[r] == vcode:
                    occ += 1
                    if occ == p:
                        r1 = r
                    if occ == q:
                        r2 = r
                        break
            vnet = steps[r1, 0]
            vi = steps[r1, 1]
            vt = steps[r1, 2]
            # replay prefix
            for ii in range(n):
                for jj in range(n):
                    sx[ii, jj] = x0[ii, jj]
                for kk in range(h):
                    sz[ii, kk] = z0[ii, kk]
            for r in range(r1):
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            # states between the pair lose the v flip; evaluate without it
            new_sum = 0.0
            old_sum = logps[r1] + logps[r2]
            for r in range(r1 + 1, r2):
                if no_skip or _step_affected(steps[r, 0], steps[r, 1], vnet, vi, vt, flags, sx):
                    lp = _step_logprob(sx, sz, n, h, steps[r, 0], steps[r, 1], steps[r, 2],
                                       kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                                       covmat, logn, zbar, buf)
                    tmp[r - r1 - 1] = lp
                    new_sum += lp
                    old_sum += logps[r]
                else:
                    tmp[r - r1 - 1] = logps[r]
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            lr = log_ratio_x if vnet == 0 else log_ratio_z
            d_rate = -2.0 * lr - 2.0 * log_lam_pp_T + math.log(R * (R - 1.0))
            npairs_pos = R * (R - 1.0) / 2.0  # insertion slots of the shorter path
            log_hastings = (math.log(move_cum[0]) - math.log(nvars) - math.log(npairs_pos)
                            - math.log(move_cum[1] - move_cum[0]) + math.log(ndel))
            log_alpha = new_sum - old_sum + d_rate + log_hastings
            if log_alpha >= 0.0 or gen.random() < math.exp(log_alpha):
                counters[5 + move] += 1
                for r in range(r1 + 1, r2):
                    steps[r - 1, 0] = steps[r, 0]
                    steps[r - 1, 1] = steps[r, 1]
                    steps[r - 1, 2] = steps[r, 2]
                    codes[r - 1] = codes[r]
                    logps[r - 1] = tmp[r - r1 - 1]
                for r in range(r2 + 1, R):
                    steps[r - 2, 0] = steps[r, 0]
                    steps[r - 2, 1] = steps[r, 1]
                    steps[r - 2, 2] = steps[r, 2]
                    codes[r - 2] = codes[r]
                    logps[r - 2] = logps[r]
                R -= 2
                buckets[vcode] = mv - 2
                npairs_state[0] = ndel - (2 * mv - 3)

        elif move == MV_INSERT_DIAG:
            if R + 1 > cap:
                counters[10] = n_updates - upd
                return -(R + 1)
            pick = int(gen.random() * ndiag)
            if pick == ndiag:
                pick -= 1
            vnet = 0 if pick < n else 1
            vi = pick % n
            a = int(gen.random() * (R + 1))
            if a > R:
                a = R
            ndiag_now = 0
            for r in range(R):
                if steps[r, 2] < 0:
                    ndiag_now += 1
            for ii in range(n):
                for jj in range(n):
                    sx[ii, jj] = x0[ii, jj]
                for kk in range(h):
                    sz[ii, kk] = z0[ii, kk]
            for r in range(a):
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            lp = _step_logprob(sx, sz, n, h, vnet, vi, -1,
                               kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                               covmat, logn, zbar, buf)
            lr = log_ratio_x if vnet == 0 else log_ratio_z
            d_rate = lr + log_lam_pp_T - math.log(R + 1.0)
            log_hastings = (math.log(move_cum[3] - move_cum[2]) - math.log(ndiag_now + 1.0)
                            - math.log(move_cum[2] - move_cum[1]) + math.log(ndiag) + math.log(R + 1.0))
            log_alpha = lp + d_rate + log_hastings
            if log_alpha >= 0.0 or gen.random() < math.exp(log_alpha):
                counters[5 + move] += 1
                for r in range(R - 1, a - 1, -1):
                    steps[r + 1, 0] = steps[r, 0]
                    steps[r + 1, 1] = steps[r, 1]
                    steps[r + 1, 2] = steps[r, 2]
                    codes[r + 1] = codes[r]
                    logps[r + 1] = logps[r]
                steps[a, 0] = vnet
                steps[a, 1] = vi
                steps[a, 2] = -1
                codes[a] = -1
                logps[a] = lp
                R += 1

        elif move == MV_DELETE_DIAG:
            ndiag_now = 0
            for r in range(R):
                if steps[r, 2] < 0:
                    ndiag_now += 1
            if ndiag_now == 0:
                continue
            pick = int(gen.random() * ndiag_now)
            if pick == ndiag_now:
                pick -= 1
            a = -1
            seen = -1
            for r in range(R):
                if steps[r, 2] < 0:
                    seen += 1
                    if seen == pick:
                        a = r
                        break
            vnet = steps[a, 0]
            lr = log_ratio_x if vnet == 0 else log_ratio_z
            d_rate = -lr - log_lam_pp_T + math.log(float(R))
            log_hastings = (math.log(move_cum[2] - move_cum[1]) - math.log(ndiag) - math.log(float(R))
                            - math.log(move_cum[3] - move_cum[2]) + math.log(float(ndiag_now)))
            log_alpha = -logps[a] + d_rate + log_hastings
            if log_alpha >= 0.0 or gen.random() < math.exp(log_alpha):
                counters[5 + move] += 1
                for r in range(a + 1, R):
                    steps[r - 1, 0] = steps[r, 0]
                    steps[r - 1, 1] = steps[r, 1]
                    steps[r - 1, 2] = steps[r, 2]
                    codes[r - 1] = codes[r]
                    logps[r - 1] = logps[r]
                R -= 1

        else:  # MV_PERMUTE
            if R < 2:
                continue
            lmax = 8 if R > 8 else R
            L = 2 + int(gen.random() * (lmax - 1))
            if L > lmax:
                L = lmax
            a = int(gen.random() * (R - L + 1))
            if a > R - L:
                a = R - L
            # Fisher-Yates permutation of [0, L)
            perm = np.empty(L, dtype=np.int64)
            for r in range(L):
                perm[r] = r
            for r in range(L - 1, 0, -1):
                jswap = int(gen.random() * (r + 1))
                if jswap > r:
                    jswap = r
                tmp_i = perm[r]
                perm[r] = perm[jswap]
                perm[jswap] = tmp_i
            for ii in range(n):
                for jj in range(n):
                    sx[ii, jj] = x0[ii, jj]
                for kk in range(h):
                    sz[ii, kk] = z0[ii, kk]
            for r in range(a):
                _apply(sx, sz, steps[r, 0], steps[r, 1], steps[r, 2])
            new_sum = 0.0
            old_sum = 0.0
            for r in range(L):
                src = a + perm[r]
                lp = _step_logprob(sx, sz, n, h, steps[src, 0], steps[src, 1], steps[src, 2],
                                   kx, cx, a1x, a2x, tx, kz, cz, a1z, a2z, tz,
                                   covmat, logn, zbar, buf)
                tmp[r] = lp
                new_sum += lp
                old_sum += logps[a + r]
                _apply(sx, sz, steps[src, 0], steps[src, 1], steps[src, 2])
            log_alpha = new_sum - old_sum
            if log_alpha >= 0.0 or gen.random() < math.exp(log_alpha):
                counters[5 + move] += 1
                for r in range(L):
                    src = a + perm[r]
                    tmp[L + 3 * r] = steps[src, 0]
                    tmp[L + 3 * r + 1] = steps[src, 1]
                    tmp[L + 3 * r + 2] = steps[src, 2]
                for r in range(L):
                    steps[a + r, 0] = int(tmp[L + 3 * r])
                    steps[a + r, 1] = int(tmp[L + 3 * r + 1])
                    steps[a + r, 2] = int(tmp[L + 3 * r + 2])
                    codes[a + r] = _code_of(steps[a + r, 0], steps[a + r, 1], steps[a + r, 2], n, h)
                    logps[a + r] = tmp[r]

    counters[10] = 0
    return R


def skip_flags_for(kinds_x, kinds_z) -> int:
    """Effect-kind coupling flags for the path sweep's recompute shortcut."""
    flags = 0
    kx = set(int(k) for k in kinds_x)
    kz = set(int(k) for k in kinds_z)
    if K_TRANSTRIP in kx or K_TRANSRECTRIP in kx:
        flags |= 1
    if K_THREE_CYCLES in kx:
        flags |= 2
    if K_ODD in kx or K_ID in kx:
        flags |= 4
    if K_INDEG_POP in kz:
        flags |= 8
    if K_ODD in kz or K_OD_AV in kz:
        flags |= 16
    return flags
