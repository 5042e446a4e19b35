"""Proximal operator of the weighted overlapping-group l-infinity penalty.

The prox dual — minimize 0.5*||u - sum_g xi_g||^2 subject to per-group l1
caps ||xi_g||_1 <= scale*w_g — is solved as a quadratic min-cost flow:
a capped-simplex projection proposes per-covariate absorption targets, a
push-relabel max flow checks whether the group caps can realize them, and
the residual min cut splits the problem for recursion until every target
is met exactly.

Sign handling: flows are computed on magnitudes |u_j| and the primal point
is restored as sign(u_j) * (|u_j| - aggregate_j); the aggregate never
exceeds |u_j|, so all capacities stay non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .groups import GroupingStructure, validate

# A sink arc counts as saturated when gamma_j - aggregate_j <= SAT_TOL*max(1, gamma_j);
# residual capacities below RES_EPS*max(1, cap) are treated as zero in cut detection.
SAT_TOL = 1e-10
RES_EPS = 1e-12


class FlowError(RuntimeError):
    """Raised on malformed networks or a failed min-cut recursion."""


@dataclass
class FlowNetwork:
    """Source/sink/group/variable network in Table-1 shape.

    Nodes: 0 = source, 1 = sink, 2..2+K-1 group nodes, then V variable nodes.
    Arcs are ordered source arcs (K), membership arcs (sum of group sizes,
    grouped by group with members ascending), sink arcs (V).
    ``flow``, ``excess`` and ``distance`` are filled in by :func:`max_flow`.
    """

    n_groups: int
    var_indices: np.ndarray
    arc_from: np.ndarray
    arc_to: np.ndarray
    capacity: np.ndarray
    flow: np.ndarray = None
    excess: np.ndarray = None
    distance: np.ndarray = None

    source: int = 0
    sink: int = 1

    @property
    def n_vars(self) -> int:
        return len(self.var_indices)

    @property
    def n_nodes(self) -> int:
        return 2 + self.n_groups + self.n_vars

    @property
    def n_arcs(self) -> int:
        return len(self.arc_from)

    def node_label(self, v: int) -> str:
        if v == self.source:
            return "s1"
        if v == self.sink:
            return "s2"
        if v < 2 + self.n_groups:
            return f"g{v - 2}"
        return f"x{self.var_indices[v - 2 - self.n_groups]}"

    def dump(self) -> str:
        """Edge-list debug text, one arc per line: ``from to capacity flow``."""
        flow = self.flow if self.flow is not None else np.zeros(self.n_arcs)
        lines = [
            f"{self.node_label(int(u))} {self.node_label(int(v))} {float(c)!r} {float(f)!r}"
            for u, v, c, f in zip(self.arc_from, self.arc_to, self.capacity, flow)
        ]
        return "\n".join(lines) + "\n"


def build_network(
    var_indices: np.ndarray,
    member_lists: list[np.ndarray],
    weights: np.ndarray,
    scale: float,
    gamma: np.ndarray,
) -> FlowNetwork:
    """Assemble the Table-1 network over a covariate/group subset.

    Source arcs carry ``scale * weight`` per group, membership arcs are
    unbounded (a finite never-saturating stand-in is used), and sink arcs
    carry the projection targets ``gamma``.
    """
    var_indices = np.asarray(var_indices, dtype=np.int64)
    gamma = np.asarray(gamma, dtype=float)
    K, V = len(member_lists), len(var_indices)
    if len(weights) != K or len(gamma) != V:
        raise FlowError("inconsistent group/covariate input sizes")
    pos = {int(j): i for i, j in enumerate(var_indices)}
    src_caps = scale * np.asarray(weights, dtype=float)
    inf_cap = src_caps.sum() + 1.0

    froms = [np.zeros(K, np.int64)]
    tos = [2 + np.arange(K, dtype=np.int64)]
    caps = [src_caps]
    for k, members in enumerate(member_lists):
        members = np.asarray(members, dtype=np.int64)
        local = np.array([pos[int(j)] for j in members], dtype=np.int64)
        if len(local) == 0:
            raise FlowError(f"group {k} has no members inside the covariate subset")
        froms.append(np.full(len(local), 2 + k, np.int64))
        tos.append(2 + K + local)
        caps.append(np.full(len(local), inf_cap))
    froms.append(2 + K + np.arange(V, dtype=np.int64))
    tos.append(np.ones(V, np.int64))
    caps.append(gamma.copy())
    return FlowNetwork(K, var_indices, np.concatenate(froms), np.concatenate(tos),
                       np.concatenate(caps))


@njit(cache=True, nogil=True)
def _global_relabel(n, s, t, adj_ptr, arc_to, arc_res, arc_pair, h, queue):
    big = 2 * n + 5
    for v in range(n):
        h[v] = big
    # distance to sink through the residual graph
    h[t] = 0
    head, tail = 0, 0
    queue[tail] = t
    tail += 1
    while head < tail:
        x = queue[head]
        head += 1
        for a in range(adj_ptr[x], adj_ptr[x + 1]):
            v = arc_to[a]
            if h[v] == big and v != s and arc_res[arc_pair[a]] > 0.0:
                h[v] = h[x] + 1
                queue[tail] = v
                tail += 1
    # nodes cut off from the sink return excess toward the source
    h[s] = n
    head, tail = 0, 0
    queue[tail] = s
    tail += 1
    while head < tail:
        x = queue[head]
        head += 1
        for a in range(adj_ptr[x], adj_ptr[x + 1]):
            v = arc_to[a]
            if h[v] == big and arc_res[arc_pair[a]] > 0.0:
                h[v] = h[x] + 1
                queue[tail] = v
                tail += 1
    for v in range(n):
        if h[v] == big:
            h[v] = n + 1


@njit(cache=True, nogil=True)
def _push_relabel(n, s, t, adj_ptr, arc_to, arc_res, arc_pair, excess, h):
    """Highest-label push-relabel with gap heuristic and periodic global relabeling."""
    queue = np.empty(n, np.int64)
    _global_relabel(n, s, t, adj_ptr, arc_to, arc_res, arc_pair, h, queue)

    max_h = 2 * n + 1
    count = np.zeros(max_h + 2, np.int64)
    for v in range(n):
        count[h[v]] += 1
    cur = adj_ptr[:n].copy()
    bucket = np.full(max_h + 2, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    queued = np.zeros(n, np.bool_)
    highest = -1

    # saturate all source arcs
    for a in range(adj_ptr[s], adj_ptr[s + 1]):
        v = arc_to[a]
        c = arc_res[a]
        if c > 0.0:
            arc_res[a] = 0.0
            arc_res[arc_pair[a]] += c
            excess[v] += c
            excess[s] -= c
            if v != t and not queued[v] and excess[v] > 0.0:
                queued[v] = True
                nxt[v] = bucket[h[v]]
                bucket[h[v]] = v
                if h[v] > highest:
                    highest = h[v]

    relabels = 0
    while True:
        while highest >= 0 and bucket[highest] == -1:
            highest -= 1
        if highest < 0:
            break
        v = bucket[highest]
        bucket[highest] = nxt[v]
        queued[v] = False
        if excess[v] <= 0.0 or v == s or v == t:
            continue
        while excess[v] > 0.0:
            if cur[v] == adj_ptr[v + 1]:
                # relabel
                newh = max_h + 1
                for a in range(adj_ptr[v], adj_ptr[v + 1]):
                    if arc_res[a] > 0.0 and h[arc_to[a]] + 1 < newh:
                        newh = h[arc_to[a]] + 1
                old = h[v]
                count[old] -= 1
                if newh > max_h:
                    h[v] = max_h + 1
                    break
                h[v] = newh
                count[newh] += 1
                if count[old] == 0 and old < n:
                    # gap: heights in (old, n) can no longer reach the sink
                    for u in range(n):
                        if u != s and old < h[u] < n:
                            count[h[u]] -= 1
                            h[u] = n + 1
                            count[n + 1] += 1
                cur[v] = adj_ptr[v]
                relabels += 1
                if relabels >= n:
                    relabels = 0
                    _global_relabel(n, s, t, adj_ptr, arc_to, arc_res, arc_pair, h, queue)
                    count[:] = 0
                    for u in range(n):
                        count[h[u]] += 1
                    for hh in range(max_h + 2):
                        bucket[hh] = -1
                    for u in range(n):
                        queued[u] = False
                        nxt[u] = -1
                        cur[u] = adj_ptr[u]
                    highest = -1
                    for u in range(n):
                        if u != s and u != t and excess[u] > 0.0:
                            queued[u] = True
                            nxt[u] = bucket[h[u]]
                            bucket[h[u]] = u
                            if h[u] > highest:
                                highest = h[u]
                    break
                continue
            a = cur[v]
            w = arc_to[a]
            if arc_res[a] > 0.0 and h[v] == h[w] + 1:
                send = excess[v]
                if arc_res[a] < send:
                    send = arc_res[a]
                arc_res[a] -= send
                arc_res[arc_pair[a]] += send
                excess[v] -= send
                excess[w] += send
                if w != s and w != t and not queued[w] and excess[w] > 0.0:
                    queued[w] = True
                    nxt[w] = bucket[h[w]]
                    bucket[h[w]] = w
                    if h[w] > highest:
                        highest = h[w]
            else:
                cur[v] += 1
        if excess[v] > 0.0 and not queued[v] and h[v] <= max_h:
            queued[v] = True
            nxt[v] = bucket[h[v]]
            bucket[h[v]] = v
            if h[v] > highest:
                highest = h[v]


def _csr(network: FlowNetwork):
    n = network.n_nodes
    m = network.n_arcs
    tails = np.concatenate([network.arc_from, network.arc_to])
    order = np.argsort(tails, kind="stable")
    slot = np.empty(2 * m, np.int64)
    slot[order] = np.arange(2 * m)
    adj_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(tails, minlength=n), out=adj_ptr[1:])
    arc_to = np.empty(2 * m, np.int64)
    arc_res = np.zeros(2 * m)
    arc_pair = np.empty(2 * m, np.int64)
    fwd, rev = slot[:m], slot[m:]
    arc_to[fwd] = network.arc_to
    arc_to[rev] = network.arc_from
    arc_res[fwd] = network.capacity
    arc_pair[fwd] = rev
    arc_pair[rev] = fwd
    return adj_ptr, arc_to, arc_res, arc_pair, fwd


def max_flow(network: FlowNetwork) -> tuple[float, np.ndarray]:
    """Run push-relabel to completion; returns (flow value, per-arc flows).

    Fills ``network.flow``, ``network.excess`` and ``network.distance``.
    At termination every non-terminal excess is exactly zero.
    """
    if not np.any(network.arc_from == network.source):
        raise FlowError("network has no source arcs")
    if not np.any(network.arc_to == network.sink):
        raise FlowError("network has no sink arcs")
    n = network.n_nodes
    adj_ptr, arc_to, arc_res, arc_pair, fwd = _csr(network)
    excess = np.zeros(n)
    h = np.zeros(n, np.int64)
    _push_relabel(n, network.source, network.sink, adj_ptr, arc_to, arc_res, arc_pair,
                  excess, h)
    network.flow = network.capacity - arc_res[fwd]
    network.excess = excess
    network.distance = h
    network._residual = (adj_ptr, arc_to, arc_res, arc_pair)
    return float(excess[network.sink]), network.flow


def min_cut_source_side(network: FlowNetwork, sink_open: np.ndarray = None) -> np.ndarray:
    """Nodes reachable from the source in the residual graph of a max flow.

    ``sink_open`` optionally overrides traversability of the variable->sink
    arcs (aligned with ``var_indices``) so the cut uses the same saturation
    tolerance as the caller; all other arcs use their exact residuals.
    """
    if network.flow is None:
        raise FlowError("run max_flow before extracting the cut")
    adj_ptr, arc_to, arc_res, arc_pair = network._residual
    n = network.n_nodes
    first_var = 2 + network.n_groups
    seen = np.zeros(n, bool)
    seen[network.source] = True
    stack = [network.source]
    while stack:
        x = stack.pop()
        for a in range(adj_ptr[x], adj_ptr[x + 1]):
            v = arc_to[a]
            if seen[v]:
                continue
            if v == network.sink and sink_open is not None and x >= first_var:
                if not sink_open[x - first_var]:
                    continue
            if arc_res[a] > 0.0:
                seen[v] = True
                stack.append(v)
    if seen[network.sink]:
        raise FlowError("sink reachable from source after max flow")
    return seen


@njit(cache=True, nogil=True)
def _project_budget_nb(u, budget):
    out = np.empty_like(u)
    total = 0.0
    for i in range(u.shape[0]):
        total += u[i]
    if total <= budget:
        out[:] = u
        return out
    if budget <= 0.0:
        out[:] = 0.0
        return out
    srt = np.sort(u)[::-1]
    css = 0.0
    tau = 0.0
    for i in range(srt.shape[0]):
        css += srt[i]
        t = (css - budget) / (i + 1)
        if srt[i] > t:
            tau = t
        else:
            break
    for i in range(u.shape[0]):
        v = u[i] - tau
        out[i] = v if v > 0.0 else 0.0
    return out


def _project_budget(u: np.ndarray, budget: float) -> np.ndarray:
    """min 0.5*||u - g||^2 s.t. sum(g) <= budget, g >= 0, for u >= 0.

    Sort-based continuous knapsack with non-negativity clipping.
    """
    return _project_budget_nb(np.asarray(u, float), float(budget))


@njit(cache=True, nogil=True)
def _compute_flow_kernel(u_abs, mem_flat, mem_off, weights, scale, sat_tol):
    """Projection / max-flow / min-cut recursion over contiguous work slices.

    Subproblems partition the covered covariates and the groups, so both
    live in single work arrays that get reordered in place; memberships of
    split groups are compacted in place.  Returns (aggregate, xi aligned
    with mem_flat, splits, error code): error 0 ok, 1 too many splits,
    2 degenerate cut, 3 residual source-sink path after max flow.
    """
    p = u_abs.shape[0]
    K = mem_off.shape[0] - 1
    M = mem_flat.shape[0]
    aggregate = np.zeros(p)
    xi_flat = np.zeros(M)

    work_mem = mem_flat.copy()
    work_pos = np.arange(M)
    g_start = mem_off[:K].copy()
    g_len = np.empty(K, np.int64)
    for k in range(K):
        g_len[k] = mem_off[k + 1] - mem_off[k]

    covered = np.zeros(p, np.bool_)
    for i in range(M):
        covered[mem_flat[i]] = True
    nv = 0
    for j in range(p):
        if covered[j]:
            nv += 1
    var_work = np.empty(nv, np.int64)
    c = 0
    for j in range(p):
        if covered[j]:
            var_work[c] = j
            c += 1
    grp_work = np.arange(K)

    localof = np.empty(p, np.int64)
    stamp = np.zeros(p, np.int64)
    stamp_id = 0

    stack = np.empty((2 * K + 2, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = nv
    stack[0, 2] = 0
    stack[0, 3] = K
    top = 1
    splits = 0

    while top > 0:
        top -= 1
        v_lo = stack[top, 0]
        v_hi = stack[top, 1]
        g_lo = stack[top, 2]
        g_hi = stack[top, 3]
        nvs = v_hi - v_lo
        ngs = g_hi - g_lo
        if nvs == 0 or ngs == 0:
            continue
        budget = 0.0
        for gi in range(g_lo, g_hi):
            budget += weights[grp_work[gi]]
        budget *= scale
        if budget <= 0.0:
            continue
        uv = np.empty(nvs)
        for i in range(nvs):
            uv[i] = u_abs[var_work[v_lo + i]]
        gamma = _project_budget_nb(uv, budget)

        # ---- assemble subnetwork: 0 = source, 1 = sink, groups, vars ----
        n = 2 + ngs + nvs
        n_mem = 0
        for gi in range(g_lo, g_hi):
            n_mem += g_len[grp_work[gi]]
        m = ngs + n_mem + nvs
        for i in range(nvs):
            localof[var_work[v_lo + i]] = i
        inf_cap = budget + 1.0
        eu = np.empty(m, np.int64)
        ev = np.empty(m, np.int64)
        ecap = np.empty(m)
        idx = 0
        for gi in range(ngs):
            eu[idx] = 0
            ev[idx] = 2 + gi
            ecap[idx] = scale * weights[grp_work[g_lo + gi]]
            idx += 1
        for gi in range(ngs):
            g = grp_work[g_lo + gi]
            st = g_start[g]
            for ii in range(st, st + g_len[g]):
                eu[idx] = 2 + gi
                ev[idx] = 2 + ngs + localof[work_mem[ii]]
                ecap[idx] = inf_cap
                idx += 1
        for i in range(nvs):
            eu[idx] = 2 + ngs + i
            ev[idx] = 1
            ecap[idx] = gamma[i]
            idx += 1

        deg = np.zeros(n + 1, np.int64)
        for e in range(m):
            deg[eu[e] + 1] += 1
            deg[ev[e] + 1] += 1
        adj_ptr = np.empty(n + 1, np.int64)
        adj_ptr[0] = 0
        for v in range(n):
            adj_ptr[v + 1] = adj_ptr[v] + deg[v + 1]
        fill = adj_ptr[:n].copy()
        arc_to = np.empty(2 * m, np.int64)
        arc_res = np.empty(2 * m)
        arc_pair = np.empty(2 * m, np.int64)
        fslot = np.empty(m, np.int64)
        for e in range(m):
            a = fill[eu[e]]
            fill[eu[e]] += 1
            b = fill[ev[e]]
            fill[ev[e]] += 1
            arc_to[a] = ev[e]
            arc_res[a] = ecap[e]
            arc_to[b] = eu[e]
            arc_res[b] = 0.0
            arc_pair[a] = b
            arc_pair[b] = a
            fslot[e] = a

        excess = np.zeros(n)
        h = np.zeros(n, np.int64)
        _push_relabel(n, 0, 1, adj_ptr, arc_to, arc_res, arc_pair, excess, h)

        # ---- saturation check against the projection targets ----
        sink0 = ngs + n_mem
        all_sat = True
        for i in range(nvs):
            flow_i = gamma[i] - arc_res[fslot[sink0 + i]]
            tol = sat_tol * (1.0 if gamma[i] < 1.0 else gamma[i])
            if gamma[i] - flow_i > tol:
                all_sat = False
                break
        if all_sat:
            for i in range(nvs):
                aggregate[var_work[v_lo + i]] = gamma[i]
            idx = ngs
            for gi in range(ngs):
                g = grp_work[g_lo + gi]
                st = g_start[g]
                for ii in range(st, st + g_len[g]):
                    xi_flat[work_pos[ii]] = ecap[idx] - arc_res[fslot[idx]]
                    idx += 1
            continue

        # ---- split on the residual min cut ----
        splits += 1
        if splits > K:
            return aggregate, xi_flat, splits, 1
        seen = np.zeros(n, np.bool_)
        seen[0] = True
        bfs = np.empty(n, np.int64)
        bfs[0] = 0
        head, tail = 0, 1
        while head < tail:
            x = bfs[head]
            head += 1
            for a in range(adj_ptr[x], adj_ptr[x + 1]):
                v = arc_to[a]
                if seen[v] or arc_res[a] <= 0.0:
                    continue
                if v == 1:
                    if x >= 2 + ngs:
                        i = x - 2 - ngs
                        flow_i = gamma[i] - arc_res[fslot[sink0 + i]]
                        tol = sat_tol * (1.0 if gamma[i] < 1.0 else gamma[i])
                        if gamma[i] - flow_i > tol:
                            return aggregate, xi_flat, splits, 3
                    continue
                seen[v] = True
                bfs[tail] = v
                tail += 1

        stamp_id += 1
        n_vplus = 0
        for i in range(nvs):
            if seen[2 + ngs + i]:
                n_vplus += 1
                stamp[var_work[v_lo + i]] = stamp_id
        if n_vplus == 0 or n_vplus == nvs:
            return aggregate, xi_flat, splits, 2
        # stable partition of the var slice: source side first
        scratch_v = np.empty(nvs, np.int64)
        a_i, b_i = 0, n_vplus
        for i in range(nvs):
            v = var_work[v_lo + i]
            if seen[2 + ngs + i]:
                scratch_v[a_i] = v
                a_i += 1
            else:
                scratch_v[b_i] = v
                b_i += 1
        for i in range(nvs):
            var_work[v_lo + i] = scratch_v[i]
        # stable partition of the group slice; restrict split-off groups to
        # their sink-side members and drop any that end up empty
        n_gplus = 0
        for gi in range(ngs):
            if seen[2 + gi]:
                n_gplus += 1
        scratch_g = np.empty(ngs, np.int64)
        empties = np.empty(ngs, np.int64)
        a_i, b_i, e_i = 0, n_gplus, 0
        for gi in range(ngs):
            g = grp_work[g_lo + gi]
            if seen[2 + gi]:
                scratch_g[a_i] = g
                a_i += 1
            else:
                st = g_start[g]
                keep = st
                for ii in range(st, st + g_len[g]):
                    if stamp[work_mem[ii]] != stamp_id:
                        work_mem[keep] = work_mem[ii]
                        work_pos[keep] = work_pos[ii]
                        keep += 1
                g_len[g] = keep - st
                if g_len[g] > 0:
                    scratch_g[b_i] = g
                    b_i += 1
                else:
                    empties[e_i] = g
                    e_i += 1
        for i in range(e_i):
            scratch_g[b_i + i] = empties[i]
        for gi in range(ngs):
            grp_work[g_lo + gi] = scratch_g[gi]

        stack[top, 0] = v_lo
        stack[top, 1] = v_lo + n_vplus
        stack[top, 2] = g_lo
        stack[top, 3] = g_lo + n_gplus
        top += 1
        stack[top, 0] = v_lo + n_vplus
        stack[top, 1] = v_hi
        stack[top, 2] = g_lo + n_gplus
        stack[top, 3] = g_lo + b_i
        top += 1

    return aggregate, xi_flat, splits, 0


@dataclass
class DualVariables:
    """Per-group dual vectors xi_g, stored sparsely on each group's members."""

    p: int
    members: list[np.ndarray]
    values: list[np.ndarray]

    def group_vector(self, k: int) -> np.ndarray:
        out = np.zeros(self.p)
        out[self.members[k]] = self.values[k]
        return out

    def aggregate(self) -> np.ndarray:
        out = np.zeros(self.p)
        for m, v in zip(self.members, self.values):
            np.add.at(out, m, v)
        return out

    def l1_norms(self) -> np.ndarray:
        return np.array([np.abs(v).sum() for v in self.values])


_FLOW_ERRORS = {
    1: "min-cut recursion split more often than there are groups",
    2: "degenerate min cut: one side holds every covariate",
    3: "sink reachable from source after max flow",
}


def compute_flow(
    u_abs: np.ndarray,
    members: list[np.ndarray],
    weights: np.ndarray,
    scale: float,
) -> tuple[np.ndarray, list[np.ndarray], int]:
    """Aggregate dual magnitudes per covariate for non-negative inputs.

    Runs projection / max-flow updating / min-cut recursion until the
    aggregate matches the projection on every part.  Returns (aggregate of
    length p, per-group magnitude vectors aligned with ``members``, number
    of recursion splits).
    """
    u_abs = np.asarray(u_abs, float)
    if np.any(u_abs < 0):
        raise FlowError("compute_flow expects magnitudes; apply signs outside")
    members = [np.asarray(m, np.int64) for m in members]
    if not members:
        return np.zeros(len(u_abs)), [], 0
    mem_flat = np.concatenate(members)
    sizes = np.array([len(m) for m in members], np.int64)
    mem_off = np.concatenate([np.zeros(1, np.int64), np.cumsum(sizes)])
    aggregate, xi_flat, splits, err = _compute_flow_kernel(
        u_abs, mem_flat, mem_off, np.asarray(weights, float), float(scale), SAT_TOL
    )
    if err:
        raise FlowError(_FLOW_ERRORS[err])
    xi = [xi_flat[mem_off[k]:mem_off[k + 1]] for k in range(len(members))]
    return aggregate, xi, splits


def prox(u: np.ndarray, structure: GroupingStructure, scale: float
         ) -> tuple[np.ndarray, DualVariables]:
    """Proximal operator of beta -> scale * sum_g w_g * max_j|beta_(g,j)|.

    Returns the minimizer of 0.5*||beta - u||^2 + penalty and a feasible
    dual decomposition satisfying u - beta = sum_g xi_g.  Zeros in the
    result are exact (no thresholding).
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise FlowError("non-finite input to prox")
    if scale < 0:
        raise FlowError("negative penalty scale")
    diags = validate(structure)
    if diags:
        raise FlowError("invalid grouping structure: " + "; ".join(diags))
    if len(u) != structure.p:
        raise FlowError(f"input has length {len(u)}, structure expects {structure.p}")
    members = structure.member_arrays()
    weights = structure.weights()
    return _prox_arrays(u, members, weights, scale, structure.p)


def _prox_arrays(u, members, weights, scale, p):
    if scale == 0.0:
        duals = DualVariables(p, members, [np.zeros(len(m)) for m in members])
        return u.copy(), duals
    signs = np.sign(u)
    aggregate, xi_mag, _ = compute_flow(np.abs(u), members, weights, scale)
    beta = signs * (np.abs(u) - aggregate) + 0.0
    values = [mag * signs[m] for mag, m in zip(xi_mag, members)]
    return beta, DualVariables(p, list(members), values)
