"""Localization of states in Fock space: the doubling isometry, q-localized
states, strong subadditivity of entropy, classical-quantum states, and the
lattice quantization oracle for their entropy.
"""

import itertools
from math import factorial

import numpy as np
import scipy.sparse as sp

from . import fock
from .fock import FockState, build_space, entropy_of_spectrum, ladder
from .inequalities import Report

__all__ = [
    "LocalizationWeight",
    "LocalizedState",
    "localization_isometry",
    "localize_state",
    "localize_positive_operator",
    "family_weight",
    "ssa_gap",
    "CQState",
    "cq_entropy",
    "cq_localize",
    "cq_ssa_gap",
    "quantize_cq",
    "QuantizeResult",
]

_EIG_FLOOR = 1e-14


class LocalizationWeight:
    """Hermitian 0 <= q <= 1 on the one-body space with complement
    r = (1 - q^2)^(1/2)."""

    def __init__(self, q, n=None):
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            if np.any(q < -1e-12) or np.any(q > 1 + 1e-12):
                raise ValueError("diagonal weight leaves [0, 1]")
            self.diagonal = np.clip(q, 0.0, 1.0)
            self.q = np.diag(self.diagonal)
            self.r = np.diag(np.sqrt(1.0 - self.diagonal ** 2))
        else:
            lam, V = np.linalg.eigh(q)
            if lam.min() < -1e-12 or lam.max() > 1 + 1e-12:
                raise ValueError("weight eigenvalues leave [0, 1]")
            lam = np.clip(lam, 0.0, 1.0)
            self.diagonal = None
            self.q = (V * lam) @ V.conj().T
            self.r = (V * np.sqrt(1.0 - lam ** 2)) @ V.conj().T

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n))

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n))

    @property
    def n(self):
        return self.q.shape[0]


def _coerce_weight(q, n):
    if isinstance(q, LocalizationWeight):
        return q
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return LocalizationWeight(np.full(n, float(q)))
    return LocalizationWeight(q)


def localization_isometry(space, q):
    """The doubling isometry on Fock space for a weight q.

    Maps each creation monomial adag(e_i1)...adag(e_ik)|0> to the product of
    (cdag(q e_i) + ddag(r e_i)) acting on the doubled vacuum, where
    cdag(f) = adag(f) (x) 1 and ddag(f) = (-1)^(eps N) (x) adag(f) with eps = 1
    for fermions and 0 for bosons.  Returns a sparse (dim^2, dim) matrix with
    Upsilon* Upsilon = 1.
    """
    w = _coerce_weight(q, space.n)
    D = space.dim
    sign = (
        sp.diags(np.where(space.totals % 2 == 0, 1.0, -1.0))
        if space.is_fermionic
        else sp.identity(D)
    )
    eye = sp.identity(D, format="csr")
    creators = [ladder(space, i, "create") for i in range(space.n)]

    def lifted_create(f, which):
        op = sp.csr_matrix((D, D))
        for j in np.nonzero(np.abs(f) > 1e-15)[0]:
            op = op + f[j] * creators[j]
        if which == "c":
            return sp.kron(op, eye, format="csr")
        return sp.kron(sign, op, format="csr")

    mode_ops = []
    for i in range(space.n):
        op = lifted_create(w.q[:, i], "c") + lifted_create(w.r[:, i], "d")
        mode_ops.append(op.tocsr())

    vac = np.zeros(D * D)
    vac[space.vacuum_index() * D + space.vacuum_index()] = 1.0
    cols, rows, vals = [], [], []
    for col, occ in enumerate(space.occupations.tolist()):
        vec = vac
        norm = 1.0
        # highest mode first: the basis monomial carries ascending indices
        # left to right, so the rightmost (largest) creator acts first
        for mode in reversed(range(space.n)):
            for _ in range(int(occ[mode])):
                vec = mode_ops[mode] @ vec
            if occ[mode] > 1:
                norm *= np.sqrt(float(factorial(int(occ[mode]))))
        vec = vec / norm
        nz = np.nonzero(np.abs(vec) > 1e-15)[0]
        rows.extend(nz.tolist())
        cols.extend([col] * len(nz))
        vals.extend(vec[nz].tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(D * D, D))


class LocalizedState:
    """Result of localizing a state: the reduced matrix on F(H) plus the
    bookkeeping of where it came from."""

    def __init__(self, matrix, source, weight):
        self.matrix = matrix
        self.source = source
        self.weight = weight

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    def entropy(self):
        return fock.entropy(self.matrix)

    def as_state(self, space):
        return FockState(space, self.matrix, validate=False)


def localize_positive_operator(space, matrix, q, upsilon=None):
    """tr_2(Upsilon M Upsilon*) for a positive semidefinite M (not necessarily
    normalized), via the spectral mixture of M."""
    M = np.asarray(matrix)
    D = space.dim
    U = localization_isometry(space, q) if upsilon is None else upsilon
    lam, vecs = np.linalg.eigh(M)
    out = np.zeros((D, D), dtype=complex)
    floor = max(lam.max(initial=0.0), 1.0) * 1e-15
    for k in np.nonzero(lam > floor)[0]:
        phi = U @ vecs[:, k]
        Phi = phi.reshape(D, D)
        out += lam[k] * (Phi @ Phi.conj().T)
    return out


def localize_state(state, q, upsilon=None):
    """q-localized state: extend through the doubling isometry, trace out the
    second factor.  The one-body density transforms as gamma -> q gamma q."""
    space = state.space if isinstance(state, FockState) else None
    if space is None:
        raise ValueError("localize_state needs a FockState")
    M = localize_positive_operator(space, state.matrix, q, upsilon=upsilon)
    return LocalizedState(M, state, _coerce_weight(q, space.n))


def family_weight(weights, P, check_partition=True):
    """q_P = (sum_{i in P} q_i^2)^(1/2) for a commuting family with
    sum_i q_i^2 = 1; q of the empty set is 0."""
    ws = [_coerce_weight(w, None if isinstance(w, LocalizationWeight) else len(np.atleast_1d(w))) for w in weights]
    n = ws[0].n
    diag = all(w.diagonal is not None for w in ws)
    if not diag:
        for wa, wb in itertools.combinations(ws, 2):
            if np.abs(wa.q @ wb.q - wb.q @ wa.q).max() > 1e-10:
                raise ValueError("weight family must commute")
    if check_partition:
        total = sum(w.q @ w.q for w in ws)
        if np.abs(total - np.eye(n)).max() > 1e-10:
            raise ValueError("weight family is not a partition: sum q_i^2 != 1")
    P = list(P)
    if not P:
        return LocalizationWeight.zero(n)
    if diag:
        acc = np.zeros(n)
        for i in P:
            acc += ws[i].diagonal ** 2
        return LocalizationWeight(np.sqrt(np.clip(acc, 0.0, 1.0)))
    acc = sum(ws[i].q @ ws[i].q for i in P)
    lam, V = np.linalg.eigh(acc)
    return LocalizationWeight((V * np.sqrt(np.clip(lam, 0.0, 1.0))) @ V.conj().T)


def ssa_gap(state, weights, P1, P2, P3, tol=1e-9):
    """Strong subadditivity gap S(12) + S(23) - S(2) - S(123) >= 0 for the
    localized states of a commuting partition-of-unity family."""
    sets = [set(P1), set(P2), set(P3)]
    for a, b in itertools.combinations(sets, 2):
        if a & b:
            raise ValueError("index sets must be pairwise disjoint")
    P1, P2, P3 = [sorted(s) for s in sets]
    ent = {}
    for name, P in (
        ("12", P1 + P2),
        ("23", P2 + P3),
        ("2", P2),
        ("123", P1 + P2 + P3),
    ):
        qP = family_weight(weights, P)
        ent[name] = localize_state(state, qP).entropy()
    gap = ent["12"] + ent["23"] - ent["2"] - ent["123"]
    return Report(
        "ssa_quantum",
        lhs=ent["12"] + ent["23"],
        rhs=ent["2"] + ent["123"],
        tol=tol,
        extras={"entropies": ent},
    )


# ---------------------------------------------------------------------------
# classical-quantum states


class CQState:
    """Finite-grid classical particles coupled to a quantum Fock factor.

    blocks[K] is an array of shape (m,)*K + (D, D): a positive operator on the
    quantum space per ordered K-tuple of classical cells, symmetric under
    permutation of the tuple.  The cell volume h weights all classical sums,
    so the normalization reads tr rho_0 + sum_K (h^K/K!) sum_tuples tr rho_K.
    """

    def __init__(self, space, cell_volume, blocks, validate=True, norm_tol=1e-10):
        self.space = space
        self.cell_volume = float(cell_volume)
        self.blocks = {int(K): np.asarray(B, dtype=complex) for K, B in blocks.items()}
        if 0 not in self.blocks:
            raise ValueError("need the K = 0 block")
        self.n_cells = self.blocks[1].shape[0] if 1 in self.blocks else 1
        self.K_max = max(self.blocks)
        D = space.dim
        for K, B in self.blocks.items():
            if B.shape != (self.n_cells,) * K + (D, D):
                raise ValueError(f"block K={K} has wrong shape {B.shape}")
        if validate:
            self._validate(norm_tol)

    def _validate(self, norm_tol):
        for K, B in self.blocks.items():
            for idx in itertools.product(range(self.n_cells), repeat=K):
                M = B[idx]
                if np.abs(M - M.conj().T).max() > 1e-10:
                    raise ValueError("cq block is not Hermitian")
                if np.linalg.eigvalsh(M).min() < -1e-10:
                    raise ValueError("cq block is not positive semidefinite")
                for perm in itertools.permutations(idx):
                    if np.abs(B[perm] - M).max() > 1e-12:
                        raise ValueError("cq blocks must be permutation symmetric")
        if norm_tol is not None and abs(self.mass() - 1.0) > norm_tol:
            raise ValueError(f"cq state mass {self.mass():.3e} differs from one")

    def mass(self):
        total = float(np.trace(self.blocks[0]).real)
        for K in range(1, self.K_max + 1):
            if K not in self.blocks:
                continue
            B = self.blocks[K]
            tr = np.trace(B, axis1=-2, axis2=-1).real
            total += self.cell_volume ** K / factorial(K) * float(tr.sum())
        return total

    def mean_classical_number(self):
        total = 0.0
        for K in range(1, self.K_max + 1):
            if K in self.blocks:
                tr = np.trace(self.blocks[K], axis1=-2, axis2=-1).real
                total += K * self.cell_volume ** K / factorial(K) * float(tr.sum())
        return total




def cq_entropy(rho):
    """-tr rho_0 log rho_0 - sum_K (h^K/K!) sum_tuples tr rho_K log rho_K."""
    total = entropy_of_spectrum(np.linalg.eigvalsh(rho.blocks[0]))
    for K in range(1, rho.K_max + 1):
        if K not in rho.blocks:
            continue
        B = rho.blocks[K]
        weight = rho.cell_volume ** K / factorial(K)
        for idx in itertools.product(range(rho.n_cells), repeat=K):
            total += weight * entropy_of_spectrum(np.linalg.eigvalsh(B[idx]))
    return total


def cq_localize(rho, q, theta, k_max=None, warn_tol=1e-8):
    """(q, theta)-localized classical-quantum state.

    Kept classical particles are weighted by theta^2 per cell; absorbed ones
    are summed out with eta^2 = 1 - theta^2 weights; the quantum factor is
    q-localized.  Exact when the source blocks vanish above K_max; an
    explicit k_max below the source's top sector sets truncation_warning on
    the result when the dropped weight exceeds warn_tol.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != rho.n_cells:
        raise ValueError("theta must give one value per classical cell")
    if np.any(theta < -1e-12) or np.any(theta > 1 + 1e-12):
        raise ValueError("theta must take values in [0, 1]")
    eta_sq = np.clip(1.0 - theta ** 2, 0.0, 1.0)
    th_sq = np.clip(theta, 0.0, 1.0) ** 2
    K_top = rho.K_max if k_max is None else min(k_max, rho.K_max)
    h = rho.cell_volume
    D = rho.space.dim
    m = rho.n_cells
    upsilon = localization_isometry(rho.space, q)
    out = {}
    for K in range(0, K_top + 1):
        shape = (m,) * K + (D, D)
        acc = np.zeros(shape, dtype=complex)
        for M in range(0, rho.K_max - K + 1):
            if K + M not in rho.blocks:
                continue
            B = rho.blocks[K + M]
            w = h ** M / factorial(M)
            if M == 0:
                acc += B
                continue
            # sum absorbed coordinates against eta^2 weights
            summed = B
            for _ in range(M):
                summed = np.tensordot(summed, eta_sq, axes=([K], [0]))
            acc += w * summed
        loc = np.zeros(shape, dtype=complex)
        for idx in itertools.product(range(m), repeat=K):
            weight = float(np.prod(th_sq[list(idx)])) if K else 1.0
            loc[idx] = weight * localize_positive_operator(
                rho.space, acc[idx], q, upsilon=upsilon
            )
        out[K] = loc
    result = CQState(rho.space, h, out, validate=False)
    result.truncation_warning = (
        K_top < rho.K_max and abs(result.mass() - rho.mass()) > warn_tol
    )
    return result


def cq_ssa_gap(rho, q_weights, thetas, P1, P2, P3, tol=1e-9):
    """Strong subadditivity gap for classical-quantum localized states."""
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    total = sum(t ** 2 for t in thetas)
    if np.abs(total - 1.0).max() > 1e-10:
        raise ValueError("classical partition fails: sum theta_i^2 != 1")
    sets = [set(P1), set(P2), set(P3)]
    for a, b in itertools.combinations(sets, 2):
        if a & b:
            raise ValueError("index sets must be pairwise disjoint")

    def theta_P(P):
        if not P:
            return np.zeros(rho.n_cells)
        return np.sqrt(np.clip(sum(thetas[i] ** 2 for i in P), 0.0, 1.0))

    ent = {}
    for name, P in (
        ("12", sets[0] | sets[1]),
        ("23", sets[1] | sets[2]),
        ("2", sets[1]),
        ("123", sets[0] | sets[1] | sets[2]),
    ):
        P = sorted(P)
        qP = family_weight(q_weights, P)
        ent[name] = cq_entropy(cq_localize(rho, qP, theta_P(P)))
    return Report(
        "ssa_cq",
        lhs=ent["12"] + ent["23"],
        rhs=ent["2"] + ent["123"],
        tol=tol,
        extras={"entropies": ent},
    )


# ---------------------------------------------------------------------------
# quantization oracle


class QuantizeResult:
    """Fock-space quantization of a cq-state on F(H) (x) F(V).

    The classical factor is a bosonic lattice of the classical cells; each
    ordered tuple block enters with weight h^K/t on the corresponding
    occupation projector.  corrected_entropy inverts the cell-volume weights:
    t (S_ell - log t + <K> log h), which converges to the cq entropy as the
    grid refines.
    """

    def __init__(self, matrix, quantum_space, aux_space, t, cell_volume, mean_k):
        self.matrix = matrix
        self.quantum_space = quantum_space
        self.aux_space = aux_space
        self.t = t
        self.cell_volume = cell_volume
        self.mean_K = mean_k
        self.n_cells = aux_space.n
        self.S_ell = fock.entropy(matrix)

    @property
    def corrected_entropy(self):
        return self.t * (
            self.S_ell - np.log(self.t) + self.mean_K * np.log(self.cell_volume)
        )

    def as_state(self):
        return self.matrix


def quantize_cq(rho, dim_cap=65536):
    """Materialize the lattice quantization of a cq-state.

    The auxiliary register holds one bosonic mode per classical cell (cap 1:
    ordered tuples are strictly increasing).  Works for unnormalized states;
    t is the state's grid mass and tends to 1 under refinement of a smooth
    normalized fixture.
    """
    m = rho.n_cells
    D = rho.space.dim
    aux = build_space(m, "boson", boson_cap=1, n_max=rho.K_max, dim_cap=dim_cap)
    if D * aux.dim > dim_cap:
        raise ValueError(f"quantized dimension {D * aux.dim} exceeds cap {dim_cap}")
    h = rho.cell_volume
    M = np.zeros((D * aux.dim, D * aux.dim), dtype=complex)
    t = 0.0
    mean_k_raw = 0.0
    for K in range(0, rho.K_max + 1):
        if K not in rho.blocks:
            continue
        B = rho.blocks[K]
        for combo in itertools.combinations(range(m), K):
            occ = [0] * m
            for c in combo:
                occ[c] = 1
            j = aux.index_of[tuple(occ)]
            block = h ** K * B[combo] if K else h ** K * B
            rows = np.arange(D) * aux.dim + j
            M[np.ix_(rows, rows)] += block
            tr = float(np.trace(block).real)
            t += tr
            mean_k_raw += K * tr
    M /= t
    return QuantizeResult(M, rho.space, aux, t, h, mean_k_raw / t)
