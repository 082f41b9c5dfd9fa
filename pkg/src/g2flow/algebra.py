"""Pointwise G2 / octonion linear algebra on R^7 and the real spin module R^8.

Conventions, fixed once and validated in exact integer arithmetic at import:

  * reference three-form  phi0 = e123 + e145 + e167 + e246 - e257 - e347 - e356
  * flat metric delta_ab, orientation / volume form e1^...^e7
  * spin module R^8 realized as the octonions with unit table generated from
    phi0; the reference spinor psibar is the octonion unit (1, 0, ..., 0)
  * the Clifford action of a vector is MINUS octonion left multiplication.
    With that sign, (X.Y.Z.psibar, psibar) reproduces phi0 with a plus sign
    and X.Y.psibar = -(X x Y).psibar - <X,Y> psibar holds as printed.

Forms are stored on sorted index tuples: a 3-form is a length-35 vector over
TRIPLES, a 4-form a length-35 vector over QUADS, a 2-form a length-21 vector
over PAIRS.  The antisymmetric "dense" representation (shape (7,)*p) is
available through dense3/dense4 and friends.  All structure tables have
entries in {-1, 0, +1} and are kept as int8.

Everything here is immutable after construction and safe for concurrent use;
every operation is a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

# ---------------------------------------------------------------------------
# index bookkeeping for antisymmetric components

PAIRS = tuple(combinations(range(7), 2))      # 21
TRIPLES = tuple(combinations(range(7), 3))    # 35
QUADS = tuple(combinations(range(7), 4))      # 35

PAIR_INDEX = {t: i for i, t in enumerate(PAIRS)}
TRIPLE_INDEX = {t: i for i, t in enumerate(TRIPLES)}
QUAD_INDEX = {t: i for i, t in enumerate(QUADS)}

# phi0 on sorted triples, 0-indexed (e1 -> index 0)
_PHI0_TRIPLES = (
    ((0, 1, 2), 1),
    ((0, 3, 4), 1),
    ((0, 5, 6), 1),
    ((1, 3, 5), 1),
    ((1, 4, 6), -1),
    ((2, 3, 6), -1),
    ((2, 4, 5), -1),
)


def perm_sign(seq) -> int:
    """Sign of the permutation given as a sequence of distinct integers."""
    sign = 1
    seq = list(seq)
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _sorting_sign(idx):
    """(sign, sorted tuple) for a tuple of distinct indices."""
    return perm_sign(idx), tuple(sorted(idx))


def _dense_maps(tuples, p):
    """Index/sign tables expanding sorted components to the dense rank-p array."""
    index = {t: i for i, t in enumerate(tuples)}
    shape = (7,) * p
    idx = np.zeros(shape, dtype=np.int64)
    sgn = np.zeros(shape, dtype=np.int8)
    for multi in np.ndindex(*shape):
        if len(set(multi)) < p:
            continue
        s, t = _sorting_sign(multi)
        idx[multi] = index[t]
        sgn[multi] = s
    return idx, sgn


_D3_IDX, _D3_SGN = _dense_maps(TRIPLES, 3)
_D4_IDX, _D4_SGN = _dense_maps(QUADS, 4)
_D2_IDX, _D2_SGN = _dense_maps(PAIRS, 2)

_T3 = np.array(TRIPLES)  # (35, 3)
_Q4 = np.array(QUADS)    # (35, 4)
_P2 = np.array(PAIRS)    # (21, 2)


def dense3(comps):
    """Expand (..., 35) sorted 3-form components to the dense (..., 7,7,7) array."""
    comps = np.asarray(comps)
    return comps[..., _D3_IDX] * _D3_SGN


def dense4(comps):
    comps = np.asarray(comps)
    return comps[..., _D4_IDX] * _D4_SGN


def dense2(comps):
    comps = np.asarray(comps)
    return comps[..., _D2_IDX] * _D2_SGN


def comps3(dense):
    """Gather sorted components from a dense rank-3 antisymmetric array."""
    dense = np.asarray(dense)
    return dense[..., _T3[:, 0], _T3[:, 1], _T3[:, 2]]


def comps4(dense):
    dense = np.asarray(dense)
    return dense[..., _Q4[:, 0], _Q4[:, 1], _Q4[:, 2], _Q4[:, 3]]


# ---------------------------------------------------------------------------
# Hodge star and wedge tables (flat metric, volume e1^...^e7)


def _star_matrix(tuples_in, tuples_out):
    """Signed permutation matrix sending a p-form to its (7-p)-form dual."""
    out_index = {t: i for i, t in enumerate(tuples_out)}
    mat = np.zeros((len(tuples_out), len(tuples_in)), dtype=np.int8)
    for i, t in enumerate(tuples_in):
        comp = tuple(sorted(set(range(7)) - set(t)))
        mat[out_index[comp], i] = perm_sign(t + comp)
    return mat


STAR3 = _star_matrix(TRIPLES, QUADS)  # Lambda^3 -> Lambda^4
STAR4 = _star_matrix(QUADS, TRIPLES)  # Lambda^4 -> Lambda^3


@lru_cache(maxsize=None)
def wedge_table(p: int, q: int):
    """Dense coefficient tensor W with (a ^ b)_K = W[K, I, J] a_I b_J.

    Components live on sorted tuples; the (p, q) shuffle signs are baked in.
    """
    tuples = {1: tuple((i,) for i in range(7)), 2: PAIRS, 3: TRIPLES, 4: QUADS}
    out_deg = p + q
    if out_deg == 7:
        tuples_out = (tuple(range(7)),)
    elif out_deg > 7:
        raise ValueError("wedge degree exceeds 7")
    else:
        tuples_out = tuples[out_deg]
    tin_p, tin_q = tuples[p], tuples[q]
    idx_p = {t: i for i, t in enumerate(tin_p)}
    idx_q = {t: i for i, t in enumerate(tin_q)}
    W = np.zeros((len(tuples_out), len(tin_p), len(tin_q)), dtype=np.int8)
    for k, T in enumerate(tuples_out):
        for S in combinations(T, p):
            rest = tuple(x for x in T if x not in S)
            W[k, idx_p[S], idx_q[rest]] += perm_sign(S + rest) * perm_sign(T)
    return W


def wedge(a, b, p: int, q: int):
    """Wedge product on sorted components, result on sorted components."""
    W = wedge_table(p, q)
    return np.einsum("kij,...i,...j->...k", W, np.asarray(a), np.asarray(b))


def _interior3_table():
    """I3 with (X interior phi)_P = X^a I3[a, P, T] phi_T for sorted pair P."""
    I3 = np.zeros((7, 21, 35), dtype=np.int8)
    for a in range(7):
        for pi, (i, j) in enumerate(PAIRS):
            if a in (i, j):
                continue
            s, t = _sorting_sign((a, i, j))
            I3[a, pi, TRIPLE_INDEX[t]] = s
    return I3


def _interior4_table():
    """I4 with (X interior omega)_T = X^a I4[a, T, Q] omega_Q for 4-form omega."""
    I4 = np.zeros((7, 35, 35), dtype=np.int8)
    for a in range(7):
        for ti, t in enumerate(TRIPLES):
            if a in t:
                continue
            s, q = _sorting_sign((a,) + t)
            I4[a, ti, QUAD_INDEX[q]] = s
    return I4


INTERIOR3 = _interior3_table()
INTERIOR4 = _interior4_table()


def interior3(X, phi):
    """Contraction of a vector into a 3-form: a 2-form on sorted pairs."""
    return np.einsum("apt,...a,...t->...p", INTERIOR3, np.asarray(X), np.asarray(phi))


def interior4(X, omega):
    """Contraction of a vector into a 4-form: a 3-form on sorted triples."""
    return np.einsum("atq,...a,...q->...t", INTERIOR4, np.asarray(X), np.asarray(omega))


def hodge_star_3(phi):
    """Hodge dual of a 3-form (sorted comps in, sorted comps out)."""
    return np.einsum("qt,...t->...q", STAR3, np.asarray(phi))


def hodge_star_4(omega):
    return np.einsum("tq,...q->...t", STAR4, np.asarray(omega))


def star_of_wedge(phi, X):
    """star(phi ^ X) for a 3-form phi and vector X, as a 3-form."""
    return hodge_star_4(wedge(phi, X, 3, 1))


# ---------------------------------------------------------------------------
# structure tables


class CalibrationError(RuntimeError):
    """A structure-table identity failed; the convention setup is broken."""


def _build_phi0_comps():
    comps = np.zeros(35, dtype=np.int8)
    for t, s in _PHI0_TRIPLES:
        comps[TRIPLE_INDEX[t]] = s
    return comps


def _build_octonion_table(phi0_dense):
    """mult[p, q, r] = coefficient of e_r in e_p e_q, with e_0 the unit."""
    mult = np.zeros((8, 8, 8), dtype=np.int8)
    mult[0, :, :] = np.eye(8, dtype=np.int8)
    for p in range(1, 8):
        mult[p, 0, p] = 1
        for q in range(1, 8):
            if p == q:
                mult[p, q, 0] = -1
            else:
                mult[p, q, 1:] = phi0_dense[p - 1, q - 1, :]
    return mult


@dataclass(frozen=True)
class StructureTables:
    """Constant component tables of phi0, star phi0, the cross product and
    the Clifford matrices, plus the cubic form used by spinor_to_threeform.

    All arrays are int8 with entries in {-1, 0, +1}; treat as read-only.
    """

    phi0: np.ndarray        # (35,) sorted comps
    phi0_dense: np.ndarray  # (7,7,7)
    star_phi0: np.ndarray   # (35,) sorted comps on QUADS
    star_phi0_dense: np.ndarray  # (7,7,7,7)
    cross: np.ndarray       # (7,7,7): (X x Y)_c = X^a Y^b cross[a,b,c]
    gamma: np.ndarray       # (7,8,8): gamma[a] acts on spinors from the left
    cubic: np.ndarray       # (35,8,8): phi_T(psi) = psi^T cubic[T] psi
    psibar: np.ndarray      # (8,)

    def checksums(self) -> dict:
        out = {}
        for name in ("phi0", "star_phi0", "cross", "gamma"):
            out[name] = hashlib.sha256(getattr(self, name).tobytes()).hexdigest()
        return out

    def as_json_dict(self) -> dict:
        """Sparse JSON dump of the tables for the debug CLI."""
        def sparse(arr):
            entries = []
            for multi in zip(*np.nonzero(arr)):
                entries.append([int(i) for i in multi] + [int(arr[multi])])
            return entries

        return {
            "convention": "phi0 = e123 + e145 + e167 + e246 - e257 - e347 - e356",
            "orientation": "volume = e1^e2^e3^e4^e5^e6^e7",
            "clifford": "gamma(X) = minus octonion left multiplication by X",
            "phi0_triples": [[*t, int(s)] for t, s in zip(TRIPLES, self.phi0) if s],
            "star_phi0_quads": [[*q, int(s)] for q, s in zip(QUADS, self.star_phi0) if s],
            "cross_nonzeros": sparse(self.cross),
            "gamma": self.gamma.tolist(),
            "checksums": self.checksums(),
        }


def _build_tables() -> StructureTables:
    phi0 = _build_phi0_comps()
    phi0_d = dense3(phi0).astype(np.int8)
    star = hodge_star_3(phi0).astype(np.int8)
    star_d = dense4(star).astype(np.int8)
    mult = _build_octonion_table(phi0_d)
    # gamma[a][r, q] = -mult[a+1, q, r]: minus left multiplication by e_{a+1}
    gamma = -np.transpose(mult[1:], (0, 2, 1)).astype(np.int8)
    psibar = np.zeros(8, dtype=np.int8)
    psibar[0] = 1
    # cubic[T] = gamma_a gamma_b gamma_c for T = (a,b,c); integer matrices
    cubic = np.zeros((35, 8, 8), dtype=np.int8)
    for ti, (a, b, c) in enumerate(TRIPLES):
        m = gamma[a].astype(np.int64) @ gamma[b].astype(np.int64) @ gamma[c].astype(np.int64)
        cubic[ti] = m.astype(np.int8)
    return StructureTables(
        phi0=phi0, phi0_dense=phi0_d, star_phi0=star, star_phi0_dense=star_d,
        cross=phi0_d, gamma=gamma, cubic=cubic, psibar=psibar,
    )


# The normalization of the torsion contraction oracle: exhaustive contraction
# of the star-phi0 table gives (star phi)_{ebcd} (star phi)_{fbcd} = 24 delta_ef.
STAR_CONTRACTION = 24


def calibration_failures(t: StructureTables) -> list[str]:
    """Run every exact table identity; return the list of violated ones.

    All checks are integer arithmetic on the tables, no floating point.
    """
    bad = []
    g = t.gamma.astype(np.int64)
    # Clifford relation and antisymmetry
    for a in range(7):
        if not np.array_equal(g[a].T, -g[a]):
            bad.append(f"gamma_{a + 1} is not antisymmetric")
        for b in range(7):
            anti = g[a] @ g[b] + g[b] @ g[a]
            want = -2 * np.eye(8, dtype=np.int64) if a == b else 0 * anti
            if not np.array_equal(anti, want):
                bad.append(f"Clifford relation fails for ({a + 1},{b + 1})")
    # Clifford multiplication maps the frame isometrically onto psibar-perp
    cols = g[:, :, 0]  # gamma_a psibar
    gram = cols @ cols.T
    if not np.array_equal(gram, np.eye(7, dtype=np.int64)):
        bad.append("frame image under Clifford multiplication is not orthonormal")
    if np.any(cols[:, 0] != 0):
        bad.append("Clifford image of the frame is not orthogonal to psibar")
    # vector-triple identity: e_a . e_b . psibar + (e_a x e_b) . psibar + delta_ab psibar = 0
    for a in range(7):
        for b in range(7):
            v = g[a] @ g[b][:, 0]
            v = v + np.einsum("c,cij,j->i", t.cross[a, b].astype(np.int64), g,
                              t.psibar.astype(np.int64))
            if a == b:
                v = v + t.psibar.astype(np.int64)
            if np.any(v != 0):
                bad.append(f"cross/Clifford identity fails for ({a + 1},{b + 1})")
    # four-form identity:
    # (star phi)(a,b,c,d) = phi(a,b, e_c x e_d) - del_ac del_bd + del_ad del_bc
    phi_d = t.phi0_dense.astype(np.int64)
    star_d = t.star_phi0_dense.astype(np.int64)
    eye = np.eye(7, dtype=np.int64)
    rhs = (np.einsum("abm,cdm->abcd", phi_d, t.cross.astype(np.int64))
           - np.einsum("ac,bd->abcd", eye, eye)
           + np.einsum("ad,bc->abcd", eye, eye))
    if not np.array_equal(star_d, rhs):
        bad.append("star-phi0 four-form identity fails")
    # cubic form reproduces phi0 on the reference spinor
    phi_of_psibar = t.cubic[:, 0, 0].astype(np.int64)
    if not np.array_equal(phi_of_psibar, t.phi0.astype(np.int64)):
        bad.append("cubic form on the reference spinor does not reproduce phi0")
    # norm and duality invariants
    if int(np.sum(t.phi0.astype(np.int64) ** 2)) != 7:
        bad.append("|phi0|^2 != 7")
    if not np.array_equal(STAR4.astype(np.int64) @ STAR3.astype(np.int64),
                          np.eye(35, dtype=np.int64)):
        bad.append("double Hodge star is not the identity on 3-forms")
    # contraction normalization used by the torsion oracle
    contr = np.einsum("ebcd,fbcd->ef", star_d, star_d)
    if not np.array_equal(contr, STAR_CONTRACTION * eye):
        bad.append("star-phi0 self-contraction != 24 delta")
    return bad


_TABLES: StructureTables | None = None


def tables() -> StructureTables:
    """The calibrated structure tables (built and checked once per process)."""
    global _TABLES
    if _TABLES is None:
        t = _build_tables()
        bad = calibration_failures(t)
        if bad:
            raise CalibrationError("; ".join(bad))
        _TABLES = t
    return _TABLES


# ---------------------------------------------------------------------------
# pointwise operations (all broadcast over leading axes)


def clifford_mul(X, s):
    """Clifford product X . s of a vector field and a spinor field."""
    t = tables()
    return np.einsum("...a,aij,...j->...i", np.asarray(X, dtype=float),
                     t.gamma.astype(float), np.asarray(s, dtype=float))


def cross(X, Y, form_dense=None):
    """Cross product; by default the one of phi0, else of the given 3-form."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if form_dense is None:
        return np.einsum("...a,...b,abc->...c", X, Y, tables().cross.astype(float))
    return np.einsum("...a,...b,...abc->...c", X, Y, form_dense)


def spinor_to_threeform(psi, tol: float = 1e-12):
    """Three-form of the G2-structure defined by a unit spinor.

    phi(X,Y,Z) = (X.Y.Z.psi, psi); the result is even in psi, so antipodal
    spinors give the same form.  Non-unit input raises ValueError.
    """
    psi = np.asarray(psi, dtype=float)
    nrm2 = np.sum(psi * psi, axis=-1)
    if np.max(np.abs(nrm2 - 1.0)) > tol:
        raise ValueError("spinor_to_threeform needs unit spinors "
                         f"(max | |psi|^2 - 1 | = {np.max(np.abs(nrm2 - 1.0)):.3e})")
    t = tables()
    return np.einsum("tij,...i,...j->...t", t.cubic.astype(float), psi, psi)


def form_norm2(comps):
    """Squared norm of a form stored on sorted components."""
    comps = np.asarray(comps)
    return np.sum(comps * comps, axis=-1)
