# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: graph sweeps and depth-first tree walks.

The random draws, stream keys and floating point expression order match
``_fallback`` exactly; see that module for the reference implementation.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport log, sqrt, cos, pow, M_PI
from libc.stdint cimport uint64_t, int64_t, int32_t, int8_t
from libc.stdlib cimport malloc, calloc, free

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #define ON_GOLDEN 0x9E3779B97F4A7C15ULL
    #define ON_SALT 0xD6E8FEB86659FD93ULL
    static inline uint64_t on_fmix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static inline double on_unit(uint64_t w) {
        return ((double)(w >> 12) + 0.5) * (1.0 / 4503599627370496.0);
    }
    static inline uint64_t on_prefix(uint64_t master, uint64_t ctx, uint64_t entity) {
        uint64_t h = on_fmix(master);
        h = on_fmix(h + (ctx + 1) * ON_GOLDEN);
        return on_fmix(h + (entity + 1) * ON_GOLDEN);
    }
    static inline uint64_t on_base(uint64_t prefix, uint64_t step) {
        return on_fmix(prefix + (step + 1) * ON_GOLDEN);
    }
    static inline uint64_t on_child(uint64_t parent, uint64_t j) {
        return on_fmix((parent ^ ON_SALT) + j * ON_GOLDEN);
    }
    """
    uint64_t ON_GOLDEN
    uint64_t on_fmix(uint64_t z) nogil
    double on_unit(uint64_t w) nogil
    uint64_t on_prefix(uint64_t master, uint64_t ctx, uint64_t entity) nogil
    uint64_t on_base(uint64_t prefix, uint64_t step) nogil
    uint64_t on_child(uint64_t parent, uint64_t j) nogil

ctypedef uint64_t u64

cdef enum:
    UNIFORM = 0
    DISCRETE = 1
    BETASHIFT = 2
    CONST = 3
    COPYQ = 4
    CTX_SIGNAL = 2
    CTX_ATTRS = 5
    CTX_TREE = 6

NAME = "compiled"


cdef struct Tab:
    const int32_t* kind
    const double* la
    const double* lb
    const int64_t* lptr
    const double* lvals
    const double* lcum
    int n_rules
    const int32_t* rfield
    const int32_t* rop
    const double* rval
    const double* ccum
    const int32_t* cqlaw
    const int8_t* cs
    const int64_t* ctag
    const int32_t* coff
    int root_c0
    int root_c1
    int node_c0
    int node_c1
    const int64_t* optr
    const double* ocum
    int root_off
    int node_off
    double c
    double d
    double b


cdef const void* _ptr(object arr, list keep, object dtype) except NULL:
    a = np.ascontiguousarray(arr, dtype=dtype)
    if a.size == 0:
        a = np.zeros(1, dtype=dtype)
    keep.append(a)
    return cnp.PyArray_DATA(<cnp.ndarray>a)


cdef void _fill_laws(Tab* t, object laws, list keep):
    t.kind = <const int32_t*>_ptr(laws.kind, keep, np.int32)
    t.la = <const double*>_ptr(laws.a, keep, np.float64)
    t.lb = <const double*>_ptr(laws.b, keep, np.float64)
    t.lptr = <const int64_t*>_ptr(laws.ptr, keep, np.int64)
    t.lvals = <const double*>_ptr(laws.vals, keep, np.float64)
    t.lcum = <const double*>_ptr(laws.cum, keep, np.float64)


cdef void _fill(Tab* t, object tb, list keep):
    _fill_laws(t, tb.laws, keep)
    t.n_rules = tb.rule_field.size
    t.rfield = <const int32_t*>_ptr(tb.rule_field, keep, np.int32)
    t.rop = <const int32_t*>_ptr(tb.rule_op, keep, np.int32)
    t.rval = <const double*>_ptr(tb.rule_value, keep, np.float64)
    t.ccum = <const double*>_ptr(tb.comp_cum, keep, np.float64)
    t.cqlaw = <const int32_t*>_ptr(tb.comp_qlaw, keep, np.int32)
    t.cs = <const int8_t*>_ptr(tb.comp_s, keep, np.int8)
    t.ctag = <const int64_t*>_ptr(tb.comp_tag, keep, np.int64)
    t.coff = <const int32_t*>_ptr(tb.comp_off, keep, np.int32)
    t.root_c0, t.root_c1 = tb.root_comp
    t.node_c0, t.node_c1 = tb.node_comp
    t.optr = <const int64_t*>_ptr(tb.off_ptr, keep, np.int64)
    t.ocum = <const double*>_ptr(tb.off_cum, keep, np.float64)
    t.root_off = tb.root_off
    t.node_off = tb.node_off
    t.c = tb.c
    t.d = tb.d
    t.b = tb.b


cdef inline double _unitw(u64 base, u64 ctr) noexcept nogil:
    return on_unit(on_fmix(base + ctr * ON_GOLDEN))


cdef double _gamma(u64 base, u64* ctr, double shape) noexcept nogil:
    cdef bint boost = shape < 1.0
    cdef double a = shape + 1.0 if boost else shape
    cdef double dd = a - 1.0 / 3.0
    cdef double cc = 1.0 / sqrt(9.0 * dd)
    cdef double u1, u2, x, v, u, g
    while True:
        u1 = _unitw(base, ctr[0] + 1)
        u2 = _unitw(base, ctr[0] + 2)
        x = sqrt(-2.0 * log(u1)) * cos(2.0 * M_PI * u2)
        v = 1.0 + cc * x
        if v <= 0.0:
            ctr[0] += 2
            continue
        v = v * v * v
        u = _unitw(base, ctr[0] + 3)
        ctr[0] += 3
        if log(u) < 0.5 * x * x + dd - dd * v + dd * log(v):
            g = dd * v
            break
    if boost:
        u = _unitw(base, ctr[0] + 1)
        ctr[0] += 1
        g = g * pow(u, 1.0 / shape)
    return g


cdef double _sample_law(const Tab* t, int j, u64 base, u64 ctr, double q) noexcept nogil:
    cdef int kind = t.kind[j]
    cdef double u, x, y
    cdef int64_t lo, hi, k
    if kind == UNIFORM:
        return t.la[j] + (t.lb[j] - t.la[j]) * _unitw(base, ctr + 1)
    if kind == DISCRETE:
        u = _unitw(base, ctr + 1)
        lo = t.lptr[j]
        hi = t.lptr[j + 1]
        k = lo
        while k < hi - 1 and u >= t.lcum[k]:
            k += 1
        return t.lvals[k]
    if kind == BETASHIFT:
        x = _gamma(base, &ctr, t.la[j])
        y = _gamma(base, &ctr, t.lb[j])
        return -1.0 + 2.0 * (x / (x + y))
    if kind == CONST:
        return t.la[j]
    return q


cdef inline bint _cmp(int op, double x, double v) noexcept nogil:
    if op == 0:
        return x > v
    if op == 1:
        return x >= v
    if op == 2:
        return x < v
    if op == 3:
        return x <= v
    if op == 4:
        return x == v
    return x != v


cdef int _resolve(const Tab* t, double q, double s, double tag) noexcept nogil:
    cdef int r
    cdef double x
    for r in range(t.n_rules):
        if t.rfield[r] == 0:
            x = q
        elif t.rfield[r] == 1:
            x = s
        else:
            x = tag
        if _cmp(t.rop[r], x, t.rval[r]):
            return r
    return t.n_rules


cdef struct Node:
    double q
    int law
    int64_t n


cdef Node _draw_node(const Tab* t, bint root, u64 master, u64 label) noexcept nogil:
    cdef Node nd
    cdef int c0 = t.root_c0 if root else t.node_c0
    cdef int c1 = t.root_c1 if root else t.node_c1
    cdef u64 base = on_base(on_prefix(master, CTX_ATTRS, label), 0)
    cdef double u = _unitw(base, 1)
    cdef int comp = c0
    while comp < c1 - 1 and u >= t.ccum[comp]:
        comp += 1
    nd.q = _sample_law(t, t.cqlaw[comp], base, 1, 0.0)
    cdef int off = t.coff[comp]
    if off < 0:
        off = t.root_off if root else t.node_off
    u = _unitw(on_base(on_prefix(master, CTX_TREE, label), 0), 1)
    cdef int64_t lo = t.optr[off]
    cdef int64_t hi = t.optr[off + 1]
    cdef int64_t k = lo
    while k < hi - 1 and u >= t.ocum[k]:
        k += 1
    nd.n = k - lo
    nd.law = _resolve(t, nd.q, <double>t.cs[comp], <double>t.ctag[comp])
    return nd


cdef inline double _signal(const Tab* t, Node* nd, u64 prefix, int step) noexcept nogil:
    cdef double wsum = t.c if nd.n > 0 else 0.0
    cdef double z = _sample_law(t, nd.law, on_base(prefix, step), 0, nd.q)
    return nd.q * (t.c - wsum) + t.d * z


# graph sweep

cdef inline double _vertex_update(const int64_t* indptr, const int64_t* src, const double* w,
                                  const double* r, int64_t i, double wi, double b) noexcept nogil:
    cdef double acc = 0.0
    cdef int64_t e
    for e in range(indptr[i], indptr[i + 1]):
        acc = acc + w[e] * r[src[e]]
    return acc + wi + b * r[i]


def graph_sweep(indptr, src, weight, qterm, law_idx, q, laws, double d, double b, u64 master,
                int64_t k0, int64_t steps, r0, record, int threads=1):
    cdef list keep = []
    cdef Tab tab
    _fill_laws(&tab, laws, keep)
    cdef int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef int64_t[::1] sr = np.ascontiguousarray(src, dtype=np.int64)
    cdef double[::1] wt = np.ascontiguousarray(weight, dtype=np.float64)
    cdef double[::1] qt = np.ascontiguousarray(qterm, dtype=np.float64)
    cdef int32_t[::1] li = np.ascontiguousarray(law_idx, dtype=np.int32)
    cdef double[::1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef int64_t n = ip.shape[0] - 1
    cur_arr = np.array(r0, dtype=np.float64, copy=True)
    nxt_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] cv = cur_arr
    cdef double[::1] nv = nxt_arr
    cdef double* cur = &cv[0] if n else NULL
    cdef double* nxt = &nv[0] if n else NULL
    cdef double* tmp
    cdef u64[::1] pre = np.empty(n, dtype=np.uint64)
    cdef int64_t i, t, j
    cdef double z
    cdef int nthreads = max(1, threads)
    cdef bint has_rec = record is not None
    rec = np.empty((steps + 1, len(record) if has_rec else 0))
    cdef int64_t[::1] rv = np.ascontiguousarray(record if has_rec else [], dtype=np.int64)
    cdef double[:, ::1] traj = rec
    for j in range(rv.shape[0]):
        traj[0, j] = cur[rv[j]]
    cdef const int64_t* pip = &ip[0]
    cdef const int64_t* psr = &sr[0] if sr.shape[0] else NULL
    cdef const double* pwt = &wt[0] if wt.shape[0] else NULL
    with nogil:
        for i in prange(n, num_threads=nthreads, schedule="static"):
            pre[i] = on_prefix(master, CTX_SIGNAL, <u64>i)
        for t in range(steps):
            for i in prange(n, num_threads=nthreads, schedule="static"):
                z = _sample_law(&tab, li[i], on_base(pre[i], <u64>(k0 + t)), 0, qq[i])
                nxt[i] = _vertex_update(pip, psr, pwt, cur, i, qt[i] + d * z, b)
            tmp = cur
            cur = nxt
            nxt = tmp
            for j in range(rv.shape[0]):
                traj[t + 1, j] = cur[rv[j]]
    final = cur_arr if steps % 2 == 0 else nxt_arr
    return final.copy(), (rec if has_rec else None)


# trees

cdef double _series_one(const Tab* t, u64 master, int S, int L, const double* a, double tail) noexcept nogil:
    cdef u64* lab = <u64*>malloc((L + 1) * sizeof(u64))
    cdef Node* nd = <Node*>malloc((L + 1) * sizeof(Node))
    cdef int64_t* nxt = <int64_t*>malloc((L + 1) * sizeof(int64_t))
    cdef double* pi = <double*>malloc((L + 1) * sizeof(double))
    cdef double total = 0.0, inner, contrib, al
    cdef int sp = 0, l, s
    cdef u64 prefix
    cdef bint entered = True
    lab[0] = on_fmix(0x5851F42D4C957F2DULL)
    pi[0] = 1.0
    while sp >= 0:
        if entered:
            l = sp
            nd[l] = _draw_node(t, l == 0, master, lab[l])
            nxt[l] = 1
            prefix = on_prefix(master, CTX_SIGNAL, lab[l])
            inner = 0.0
            for s in range(l, S + 1):
                al = a[l * (S + 1) + s]
                if al != 0.0:
                    inner = inner + al * _signal(t, &nd[l], prefix, s)
            contrib = pi[l] * inner
            if l == L and L < S and nd[l].n > 0:
                contrib = contrib + pi[l] * t.c * tail
            total = total + contrib
            entered = False
        if sp < L and nxt[sp] <= nd[sp].n:
            lab[sp + 1] = on_child(lab[sp], <u64>nxt[sp])
            pi[sp + 1] = pi[sp] * (t.c / nd[sp].n)
            nxt[sp] += 1
            sp += 1
            entered = True
        else:
            sp -= 1
    free(lab)
    free(nd)
    free(nxt)
    free(pi)
    return total


def tree_series_batch(tables, masters, int horizon, int max_depth, a, double tail,
                      double expected_nodes=1.0, int threads=1):
    cdef list keep = []
    cdef Tab tab
    _fill(&tab, tables, keep)
    cdef u64[::1] ms = np.ascontiguousarray(masters, dtype=np.uint64)
    cdef double[:, ::1] av = np.ascontiguousarray(a[:horizon + 1, :horizon + 1], dtype=np.float64)
    out_arr = np.empty(ms.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r
    cdef int L = min(max_depth, horizon)
    with nogil:
        for r in prange(ms.shape[0], num_threads=max(1, threads), schedule="dynamic"):
            out[r] = _series_one(&tab, ms[r], horizon, L, &av[0, 0], tail)
    return out_arr


cdef void _dynamics_one(const Tab* t, u64 master, int K, double* out) noexcept nogil:
    # frames per depth; acc[l*(K+1)+t] collects sum of C * R_child^(t)
    cdef u64* lab = <u64*>malloc(K * sizeof(u64))
    cdef Node* nd = <Node*>malloc(K * sizeof(Node))
    cdef int64_t* nxt = <int64_t*>malloc(K * sizeof(int64_t))
    cdef double* acc = <double*>calloc(K * (K + 1), sizeof(double))
    cdef double* traj = <double*>malloc((K + 1) * sizeof(double))
    cdef int sp = 0, l, s, horizon
    cdef double cw
    cdef u64 prefix
    cdef bint entered = True
    lab[0] = on_fmix(0x5851F42D4C957F2DULL)
    while sp >= 0:
        if entered:
            nd[sp] = _draw_node(t, sp == 0, master, lab[sp])
            nxt[sp] = 1
            for s in range(K + 1):
                acc[sp * (K + 1) + s] = 0.0
            entered = False
        if sp < K - 1 and nxt[sp] <= nd[sp].n:
            lab[sp + 1] = on_child(lab[sp], <u64>nxt[sp])
            nxt[sp] += 1
            sp += 1
            entered = True
            continue
        # node finished: its trajectory up to time K - depth
        l = sp
        horizon = K - l
        prefix = on_prefix(master, CTX_SIGNAL, lab[l])
        traj[0] = 0.0
        for s in range(horizon):
            traj[s + 1] = acc[l * (K + 1) + s] + _signal(t, &nd[l], prefix, s) + t.b * traj[s]
        if l == 0:
            for s in range(K + 1):
                out[s] = traj[s]
        else:
            cw = t.c / nd[l - 1].n
            for s in range(horizon + 1):
                acc[(l - 1) * (K + 1) + s] = acc[(l - 1) * (K + 1) + s] + cw * traj[s]
        sp -= 1
    free(lab)
    free(nd)
    free(nxt)
    free(acc)
    free(traj)


def tree_dynamics_batch(tables, masters, int steps, double expected_nodes=1.0, int threads=1):
    cdef list keep = []
    cdef Tab tab
    _fill(&tab, tables, keep)
    cdef u64[::1] ms = np.ascontiguousarray(masters, dtype=np.uint64)
    out_arr = np.zeros((ms.shape[0], steps + 1))
    if steps == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r
    with nogil:
        for r in prange(ms.shape[0], num_threads=max(1, threads), schedule="dynamic"):
            _dynamics_one(&tab, ms[r], steps, &out[r, 0])
    return out_arr


cdef void _level_sums_one(const Tab* t, u64 master, int K, double* out) noexcept nogil:
    cdef u64* lab = <u64*>malloc(K * sizeof(u64))
    cdef Node* nd = <Node*>malloc(K * sizeof(Node))
    cdef int64_t* nxt = <int64_t*>malloc(K * sizeof(int64_t))
    cdef double* pi = <double*>malloc(K * sizeof(double))
    cdef int sp = 0, l, s
    cdef u64 prefix
    cdef bint entered = True
    lab[0] = on_fmix(0x5851F42D4C957F2DULL)
    pi[0] = 1.0
    while sp >= 0:
        if entered:
            l = sp
            nd[l] = _draw_node(t, l == 0, master, lab[l])
            nxt[l] = 1
            prefix = on_prefix(master, CTX_SIGNAL, lab[l])
            for s in range(K - l):
                out[l * K + s] = out[l * K + s] + pi[l] * _signal(t, &nd[l], prefix, s)
            entered = False
        if sp < K - 1 and nxt[sp] <= nd[sp].n:
            lab[sp + 1] = on_child(lab[sp], <u64>nxt[sp])
            pi[sp + 1] = pi[sp] * (t.c / nd[sp].n)
            nxt[sp] += 1
            sp += 1
            entered = True
        else:
            sp -= 1
    free(lab)
    free(nd)
    free(nxt)
    free(pi)


def tree_level_sums_batch(tables, masters, int steps, double expected_nodes=1.0, int threads=1):
    cdef list keep = []
    cdef Tab tab
    _fill(&tab, tables, keep)
    cdef u64[::1] ms = np.ascontiguousarray(masters, dtype=np.uint64)
    cdef int K = max(steps, 1)
    out_arr = np.zeros((ms.shape[0], K, K))
    if steps == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t r
    with nogil:
        for r in prange(ms.shape[0], num_threads=max(1, threads), schedule="dynamic"):
            _level_sums_one(&tab, ms[r], steps, &out[r, 0, 0])
    return out_arr
