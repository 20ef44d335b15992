"""Discretized Coulomb Hamiltonians on Fock space: ground-state energies,
Gibbs free energies, Hartree-Fock energies, the two-species model with
bosonic nuclei in a magnetic field, and movable-nuclei optimization.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.special import logsumexp

from . import fock
from .fock import FockState, build_space, second_quantize_onebody, second_quantize_twobody

__all__ = [
    "MagneticField",
    "NucleiConfig",
    "ManyBodyOperator",
    "EnergyResult",
    "FreeEnergyResult",
    "OnePdm",
    "HFResult",
    "onsite_alpha",
    "coulomb_kernel",
    "kinetic_operator",
    "nuclear_potential",
    "nuclear_constant",
    "coulomb_hamiltonian",
    "ground_state_energy",
    "ground_state_vector",
    "free_energy",
    "variational_free_energy",
    "hf_energy",
    "hf_minimize",
    "charge_concavity_scan",
    "two_species_hamiltonian",
    "movable_nuclei_energy",
    "classical_nuclei_free_energy",
]


# ---------------------------------------------------------------------------
# fields and nuclei


class MagneticField:
    """Vector potential A as a rule point -> R^3; hopping phases are Peierls
    phases A(midpoint).(y - x)."""

    def __init__(self, func, label="custom", periodicity=None):
        self._func = func
        self.label = label
        self.periodicity = periodicity

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = np.asarray(self._func(pts.reshape(-1, 3)), dtype=float).reshape(-1, 3)
        return out[0] if single else out

    @classmethod
    def constant(cls, B):
        B = np.asarray(B, dtype=float).reshape(3)

        def A(pts):
            return 0.5 * np.cross(np.broadcast_to(B, pts.shape), pts)

        return cls(A, label=f"constant{B.tolist()}")

    @classmethod
    def periodic_sine(cls, amplitude, period):
        """A = (0, amp sin(2 pi x / L), 0): divergence free, curl periodic."""
        k = 2.0 * np.pi / period

        def A(pts):
            out = np.zeros_like(pts)
            out[:, 1] = amplitude * np.sin(k * pts[:, 0])
            return out

        return cls(A, label="periodic_sine", periodicity=period)

    @classmethod
    def random_bounded(cls, seed, scale=1.0, n_modes=3):
        rng = np.random.default_rng(seed)
        ks = rng.uniform(0.3, 2.0, size=(n_modes, 3))
        amps = rng.normal(scale=scale, size=(n_modes, 3))
        phases = rng.uniform(0, 2 * np.pi, size=(n_modes, 3))

        def A(pts):
            out = np.zeros_like(pts)
            for m in range(n_modes):
                arg = (pts @ ks[m])[:, None] + phases[m][None, :]
                out += amps[m][None, :] * np.sin(arg)
            return out

        return cls(A, label=f"random{seed}")

    def curl_fd(self, point, h=1e-5):
        """Finite-difference curl, for gauge spot checks."""
        p = np.asarray(point, dtype=float)
        J = np.zeros((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            J[:, k] = (self(p + e) - self(p - e)) / (2 * h)
        return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


class NucleiConfig:
    """Point nuclei {(R_k, z_k)} with optional periodic-lattice bookkeeping.

    Positions must be pairwise distinct whenever both charges are nonzero;
    min_separation is the smallest pairwise distance over all entries.
    """

    def __init__(self, entries, generator=None):
        self.entries = [(np.asarray(R, dtype=float).reshape(3), float(z)) for R, z in entries]
        if any(z < 0 for _, z in self.entries):
            raise ValueError("nuclear charges must be nonnegative")
        self.generator = generator
        self.min_separation = np.inf
        for (Ra, za), (Rb, zb) in itertools.combinations(self.entries, 2):
            d = float(np.linalg.norm(Ra - Rb))
            if d < 1e-12 and za * zb != 0.0:
                raise ValueError("coincident nuclei with nonzero charges")
            self.min_separation = min(self.min_separation, d)

    def __len__(self):
        return len(self.entries)

    @property
    def positions(self):
        return np.array([R for R, _ in self.entries]).reshape(-1, 3)

    @property
    def charges(self):
        return np.array([z for _, z in self.entries])

    @classmethod
    def empty(cls):
        return cls([])

    @classmethod
    def from_lattice(
        cls,
        cell,
        basis,
        domain,
        deformation=None,
        defects=(),
        margin=0.5,
    ):
        """Nuclei of a (possibly deformed) lattice lying inside the domain.

        cell is the cubic lattice constant; basis lists (fractional position,
        charge) per cell; deformation maps a lattice position to
        (displacement, charge shift); defects are extra (position, charge)
        pairs.  A nucleus is kept when it lies within margin*a (max-norm) of a
        grid site, the discrete version of "inside Omega".
        """
        cell = float(cell)
        pts = domain.points
        lo = pts.min(axis=0) - domain.a
        hi = pts.max(axis=0) + domain.a
        n_lo = np.floor(lo / cell).astype(int) - 1
        n_hi = np.ceil(hi / cell).astype(int) + 1
        entries = []
        for shift in itertools.product(
            range(n_lo[0], n_hi[0] + 1),
            range(n_lo[1], n_hi[1] + 1),
            range(n_lo[2], n_hi[2] + 1),
        ):
            origin = cell * np.array(shift, dtype=float)
            for frac, z in basis:
                R = origin + cell * np.asarray(frac, dtype=float)
                if deformation is not None:
                    disp, dch = deformation(R, z)
                    R = R + np.asarray(disp, dtype=float)
                    z = z + float(dch)
                if _inside_domain(domain, R, margin):
                    entries.append((R, max(z, 0.0)))
        for R, z in defects:
            if _inside_domain(domain, np.asarray(R, dtype=float), margin):
                entries.append((np.asarray(R, dtype=float), float(z)))
        try:
            cfg = cls(entries, generator={"cell": cell, "basis": list(basis)})
        except ValueError as exc:
            raise ValueError(f"hyp_D3 violated: {exc}")
        if len(cfg) > 1 and cfg.min_separation <= 1e-9:
            raise ValueError("hyp_D3 violated: deformed nuclei collide")
        return cfg


def _inside_domain(domain, R, margin):
    d = np.abs(domain.points - R).max(axis=1).min()
    return d <= margin * domain.a + 1e-12


# ---------------------------------------------------------------------------
# one-body pieces


def kinetic_operator(domain, field=None, mass_scale=1.0):
    """Discrete Dirichlet Laplacian with optional Peierls phases.

    Diagonal 6/a^2 scaled by mass_scale (units with electron mass 1/2, so the
    operator approximates -Delta); missing neighbors contribute Dirichlet
    walls (no wrap-around).
    """
    n = domain.n_sites
    a = domain.a
    dtype = complex if field is not None else float
    T = np.zeros((n, n), dtype=dtype)
    np.fill_diagonal(T, 6.0 / a ** 2)
    pts = domain.points
    for i, j, _axis in domain.neighbor_pairs():
        if field is None:
            T[i, j] = T[j, i] = -1.0 / a ** 2
        else:
            mid = 0.5 * (pts[i] + pts[j])
            phase = float(field(mid) @ (pts[j] - pts[i]))
            T[i, j] = -np.exp(1j * phase) / a ** 2
            T[j, i] = np.conj(T[i, j])
    return mass_scale * T


_ALPHA_CACHE = {}


def onsite_alpha(seed=2024, samples=10 ** 6):
    """Cell-averaged Coulomb constant: E[1/|u - v|] for u, v uniform in the
    unit cube, by seeded Monte Carlo.  The on-site kernel value is alpha/a."""
    key = (seed, samples)
    if key not in _ALPHA_CACHE:
        rng = np.random.default_rng(seed)
        u = rng.random((samples, 3))
        v = rng.random((samples, 3))
        _ALPHA_CACHE[key] = float(np.mean(1.0 / np.linalg.norm(u - v, axis=1)))
    return _ALPHA_CACHE[key]


def coulomb_kernel(domain, alpha=None):
    """Site kernel w(x, y) = 1/|x - y|, with the cell-averaged value alpha/a
    on the diagonal (only bosonic double occupation ever samples it)."""
    if alpha is None:
        alpha = onsite_alpha()
    pts = domain.points
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, 1.0)
    W = 1.0 / dist
    np.fill_diagonal(W, alpha / domain.a)
    return W


def nuclear_potential(domain, nuclei):
    """Site samples of -sum_k z_k / |x - R_k|; nuclei closer than a/10 to a
    site are rejected (the sample would be unbounded)."""
    v = np.zeros(domain.n_sites)
    if len(nuclei) == 0:
        return v
    pts = domain.points
    for R, z in nuclei.entries:
        dist = np.linalg.norm(pts - R, axis=1)
        if dist.min() < domain.a / 10.0 - 1e-15:
            raise ValueError(
                f"regularization violated: nucleus at {R.tolist()} is within a/10 of a site"
            )
        if z != 0.0:
            v -= z / dist
    return v


def nuclear_constant(nuclei):
    """sum_{k < k'} z_k z_k' / |R_k - R_k'|."""
    c = 0.0
    for (Ra, za), (Rb, zb) in itertools.combinations(nuclei.entries, 2):
        if za * zb != 0.0:
            c += za * zb / np.linalg.norm(Ra - Rb)
    return c


# ---------------------------------------------------------------------------
# many-body operators


class ManyBodyOperator:
    """Number-conserving operator stored as one sparse matrix plus the sector
    index lists; charges holds the particle numbers entering mu.N."""

    def __init__(self, matrix, sectors, charges, space=None, spaces=None, label=""):
        self.matrix = matrix.tocsr()
        self.sectors = dict(sorted(sectors.items()))
        self.charges = np.asarray(charges, dtype=float)
        if self.charges.ndim == 1:
            self.charges = self.charges[:, None]
        self.space = space
        self.spaces = spaces
        self.label = label

    @property
    def dim(self):
        return self.matrix.shape[0]

    def sector_matrix(self, key):
        idx = self.sectors[key]
        return self.matrix[np.ix_(idx, idx)]

    def block_offdiagonal_norm(self):
        """Largest matrix element outside the sector blocks (0 by construction)."""
        M = self.matrix.tocoo()
        sector_of = np.empty(self.dim, dtype=int)
        for s, (key, idx) in enumerate(self.sectors.items()):
            sector_of[idx] = s
        mask = sector_of[M.row] != sector_of[M.col]
        return float(np.abs(M.data[mask]).max()) if mask.any() else 0.0

    def mu_dot_charge(self, mu):
        mu_vec = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu_vec.shape[0] != self.charges.shape[1]:
            raise ValueError("chemical potential arity does not match the model")
        return self.charges @ mu_vec

    def shifted(self, c):
        return ManyBodyOperator(
            self.matrix + c * sp.identity(self.dim, format="csr"),
            self.sectors,
            self.charges,
            space=self.space,
            spaces=self.spaces,
            label=self.label,
        )


def coulomb_hamiltonian(
    domain,
    nuclei,
    field=None,
    statistics="fermion",
    n_max=None,
    boson_cap=4,
    dim_cap=16384,
    alpha=None,
):
    """H = dGamma(T(A) - sum_k z_k/|x - R_k|) + (1/2) sum_{i != j} 1/|x_i - x_j|
    + nuclear constant, block diagonal over particle-number sectors."""
    space = build_space(
        domain.n_sites, statistics=statistics, boson_cap=boson_cap, n_max=n_max, dim_cap=dim_cap
    )
    T = kinetic_operator(domain, field)
    v = nuclear_potential(domain, nuclei)
    h = T + np.diag(v).astype(T.dtype)
    W = coulomb_kernel(domain, alpha=alpha)
    H = second_quantize_onebody(space, h) + second_quantize_twobody(space, W)
    H = H + nuclear_constant(nuclei) * sp.identity(space.dim, dtype=H.dtype, format="csr")
    sectors = {int(N): idx for N, idx in space.sectors.items()}
    return ManyBodyOperator(H, sectors, space.totals, space=space, label="coulomb")


@dataclass
class EnergyResult:
    value: float
    sector_minima: dict
    n_star: object
    method: dict = field(default_factory=dict)

    def __repr__(self):
        return f"EnergyResult(E={self.value:.10g}, N*={self.n_star})"


def _sector_lowest(mat, dense_cap, tol=1e-9):
    dim = mat.shape[0]
    if dim <= dense_cap:
        vals = np.linalg.eigvalsh(np.asarray(mat.todense()))
        return float(vals[0]), {"solver": "dense", "dim": dim}
    try:
        vals, vecs = eigsh(mat.tocsc(), k=1, which="SA", tol=tol, maxiter=5000)
    except Exception as exc:  # pragma: no cover - non-convergence path
        raise RuntimeError(f"iterative eigensolver failed on dim {dim}: {exc}")
    v = vecs[:, 0]
    resid = float(np.linalg.norm(mat @ v - vals[0] * v))
    if resid > max(tol * 100 * max(abs(vals[0]), 1.0), 1e-6):
        raise RuntimeError(f"iterative eigensolver residual {resid:g} too large")
    return float(vals[0]), {"solver": "lanczos", "dim": dim, "residual": resid}


def ground_state_energy(op, dense_cap=2048):
    """Per-sector lowest eigenvalue; global minimum over sectors (vacuum
    included), ties resolved toward the smallest particle number."""
    minima, method = {}, {}
    for key in op.sectors:
        val, info = _sector_lowest(op.sector_matrix(key), dense_cap)
        minima[key] = val
        method[key] = info
    best_key = None
    best = np.inf
    for key in sorted(minima):
        if minima[key] < best - 1e-12:
            best, best_key = minima[key], key
    return EnergyResult(best, minima, best_key, method)


def ground_state_vector(op, dense_cap=4096):
    """(energy, sector key, full-space vector) of the minimizing sector."""
    res = ground_state_energy(op, dense_cap=dense_cap)
    idx = op.sectors[res.n_star]
    block = np.asarray(op.sector_matrix(res.n_star).todense())
    vals, vecs = np.linalg.eigh(block)
    full = np.zeros(op.dim, dtype=block.dtype)
    full[idx] = vecs[:, 0]
    return res.value, res.n_star, full


class FreeEnergyResult:
    """F = -log(Z)/beta with the exact sector eigenvalue table retained."""

    def __init__(self, op, beta, mu, sector_eigs):
        self.op = op
        self.beta = float(beta)
        self.mu = mu
        self.sector_eigs = sector_eigs
        terms = []
        for key, eigs in sector_eigs.items():
            shift = self._mu_charge(key)
            terms.append(-beta * (eigs - shift))
        self.log_z = float(logsumexp(np.concatenate(terms)))
        self.value = -self.log_z / beta

    def _mu_charge(self, key):
        mu_vec = np.atleast_1d(np.asarray(self.mu, dtype=float))
        charge = np.atleast_1d(np.asarray(key, dtype=float))
        return float(mu_vec @ charge)

    def sector_weights(self):
        out = {}
        for key, eigs in self.sector_eigs.items():
            out[key] = np.exp(-self.beta * (eigs - self._mu_charge(key)) - self.log_z)
        return out

    def mean_charge(self):
        w = self.sector_weights()
        m = np.zeros(np.atleast_1d(np.asarray(next(iter(w)), dtype=float)).shape)
        for key, wk in w.items():
            m = m + wk.sum() * np.atleast_1d(np.asarray(key, dtype=float))
        return m if m.size > 1 else float(m[0])

    def gibbs_matrix(self):
        """Dense Gibbs density matrix exp(-beta(H - mu.N))/Z."""
        M = np.zeros((self.op.dim, self.op.dim), dtype=complex)
        for key, idx in self.op.sectors.items():
            block = np.asarray(self.op.sector_matrix(key).todense())
            vals, vecs = np.linalg.eigh(block)
            w = np.exp(-self.beta * (vals - self._mu_charge(key)) - self.log_z)
            M[np.ix_(idx, idx)] = (vecs * w) @ vecs.conj().T
        return M

    def gibbs_state(self):
        if self.op.space is None:
            raise ValueError("no Fock space attached to this operator")
        return FockState(self.op.space, self.gibbs_matrix(), validate=False)

    def variational_value(self, state):
        return variational_free_energy(self.op, self.beta, self.mu, state)


def free_energy(op, beta, mu, dense_cap=4096):
    """Exact grand-canonical free energy by full per-sector diagonalization."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    sector_eigs = {}
    for key in op.sectors:
        block = op.sector_matrix(key)
        if block.shape[0] > dense_cap:
            raise ValueError(
                f"sector {key} dimension {block.shape[0]} exceeds dense cap {dense_cap}"
            )
        sector_eigs[key] = np.linalg.eigvalsh(np.asarray(block.todense()))
    return FreeEnergyResult(op, beta, mu, sector_eigs)


def variational_free_energy(op, beta, mu, state):
    """tr[(H - mu.N) G] + (1/beta) tr[G log G] for a trial state G; this is
    bounded below by the Gibbs free energy."""
    mu_diag = op.mu_dot_charge(mu)
    energy = np.real(state.expectation(op.matrix))
    energy -= float(mu_diag @ np.real(np.diag(state.matrix)))
    return energy - fock.entropy(state) / beta


# ---------------------------------------------------------------------------
# Hartree-Fock


class OnePdm:
    """One-body density matrix with 0 <= gamma <= 1."""

    def __init__(self, matrix):
        G = np.asarray(matrix)
        if np.abs(G - G.conj().T).max() > 1e-10:
            raise ValueError("one-body density must be Hermitian")
        lam = np.linalg.eigvalsh(G)
        if lam.min() < -1e-10 or lam.max() > 1.0 + 1e-10:
            raise ValueError("one-body density eigenvalues leave [0, 1]")
        self.matrix = G

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    def density(self, spacing=1.0):
        return np.real(np.diag(self.matrix)) / spacing ** 3


@dataclass
class HFResult:
    gamma: OnePdm
    energy: float
    grand_value: float
    converged: bool
    iterations: int


def _hf_pieces(domain, nuclei, field, alpha=None):
    T = kinetic_operator(domain, field)
    v = nuclear_potential(domain, nuclei)
    h = T + np.diag(v).astype(T.dtype)
    W = coulomb_kernel(domain, alpha=alpha)
    return h, W, nuclear_constant(nuclei)


def hf_energy(domain, nuclei, gamma, field=None, alpha=None):
    """Direct-minus-exchange mean-field energy of a one-body density.

    The on-site kernel value cancels between direct and exchange, so fermionic
    self-interaction is absent; a rank-one gamma therefore has pure one-body
    energy plus the nuclear constant.
    """
    G = gamma.matrix if isinstance(gamma, OnePdm) else np.asarray(gamma)
    h, W, const = _hf_pieces(domain, nuclei, field, alpha=alpha)
    rho = np.real(np.diag(G))
    direct = 0.5 * float(rho @ W @ rho)
    exch = 0.5 * float((W * np.abs(G) ** 2).sum())
    return float(np.real(np.trace(h @ G))) + direct - exch + const


def hf_minimize(
    domain,
    nuclei,
    mu=0.0,
    beta=None,
    field=None,
    step=0.3,
    tol=1e-8,
    maxiter=500,
    gamma0=None,
    alpha=None,
):
    """Damped self-consistent field iteration over number-conserving
    quasi-free states (no pairing channel).

    At beta=None the update is the aufbau projector onto mean-field modes
    below mu; at finite beta it is the Fermi-Dirac map.  Returns the best
    iterate flagged unconverged when the fixed tolerance is not met.
    """
    h, W, const = _hf_pieces(domain, nuclei, field, alpha=alpha)
    n = domain.n_sites
    G = np.zeros_like(h) if gamma0 is None else np.asarray(gamma0, dtype=h.dtype).copy()
    converged = False
    iterations = 0
    for iterations in range(1, maxiter + 1):
        rho = np.real(np.diag(G))
        fockmat = h + np.diag(W @ rho).astype(h.dtype) - W * G
        vals, vecs = np.linalg.eigh(fockmat)
        if beta is None:
            occ = (vals < mu).astype(float)
        else:
            occ = 1.0 / (1.0 + np.exp(np.clip(beta * (vals - mu), -700, 700)))
        target = (vecs * occ) @ vecs.conj().T
        delta = np.linalg.norm(target - G)
        G = G + step * (target - G)
        if delta < tol:
            converged = True
            break
    G = 0.5 * (G + G.conj().T)
    gamma = OnePdm(_clip_pdm(G))
    energy = hf_energy(domain, nuclei, gamma, field=field, alpha=alpha)
    grand = energy - mu * gamma.trace
    if beta is not None:
        lam = np.clip(np.linalg.eigvalsh(gamma.matrix), 1e-15, 1 - 1e-15)
        s1 = float(-(lam * np.log(lam) + (1 - lam) * np.log(1 - lam)).sum())
        grand -= s1 / beta
    return HFResult(gamma, energy, grand, converged, iterations)


def _clip_pdm(G):
    lam, V = np.linalg.eigh(G)
    lam = np.clip(lam, 0.0, 1.0)
    return (V * lam) @ V.conj().T


# ---------------------------------------------------------------------------
# charge scans and movable nuclei


class _ChargeFamily:
    """Hamiltonians H(z_1..z_K) over a fixed Fock setup, affine in each charge
    apart from the explicit nuclear-repulsion constant."""

    def __init__(self, domain, positions, statistics, n_max, boson_cap, dim_cap, field=None):
        self.domain = domain
        self.positions = [np.asarray(R, dtype=float).reshape(3) for R in positions]
        self.space = build_space(
            domain.n_sites, statistics=statistics, boson_cap=boson_cap, n_max=n_max, dim_cap=dim_cap
        )
        T = kinetic_operator(domain, field)
        W = coulomb_kernel(domain)
        self.base = (
            second_quantize_onebody(self.space, T)
            + second_quantize_twobody(self.space, W)
        ).tocsr()
        self.unit_pots = []
        pts = domain.points
        for R in self.positions:
            dist = np.linalg.norm(pts - R, axis=1)
            if dist.min() < domain.a / 10.0 - 1e-15:
                raise ValueError("regularization violated: nucleus too close to a site")
            self.unit_pots.append(
                second_quantize_onebody(self.space, np.diag(-1.0 / dist)).tocsr()
            )

    def operator(self, charges):
        H = self.base.copy()
        for z, U in zip(charges, self.unit_pots):
            if z != 0.0:
                H = H + z * U
        const = 0.0
        for (i, zi), (j, zj) in itertools.combinations(enumerate(charges), 2):
            if zi * zj != 0.0:
                const += zi * zj / np.linalg.norm(self.positions[i] - self.positions[j])
        H = H + const * sp.identity(self.space.dim, format="csr")
        sectors = {int(N): idx for N, idx in self.space.sectors.items()}
        return ManyBodyOperator(H, sectors, self.space.totals, space=self.space)

    def ground(self, charges, dense_cap=2048):
        return ground_state_energy(self.operator(charges), dense_cap=dense_cap).value


@dataclass
class ConcavityReport:
    z_grid: np.ndarray
    table: np.ndarray
    concave: bool
    corner_attained: bool
    min_value: float
    corner_min: float
    worst_midpoint_defect: float


def charge_concavity_scan(
    domain,
    positions,
    z_max,
    grid_steps,
    statistics="fermion",
    n_max=None,
    boson_cap=4,
    dim_cap=16384,
    dense_cap=2048,
    tol=1e-9,
):
    """Tabulate f(z_1..z_K) = inf spec H over a charge grid; checks discrete
    per-axis midpoint concavity and corner attainment of the minimum."""
    K = len(positions)
    if K > 3 or grid_steps > 9:
        raise ValueError("scan limited to K <= 3 nuclei and <= 9 grid steps")
    fam = _ChargeFamily(domain, positions, statistics, n_max, boson_cap, dim_cap)
    zs = np.linspace(0.0, z_max, grid_steps)
    table = np.empty((grid_steps,) * K)
    for idx in itertools.product(range(grid_steps), repeat=K):
        table[idx] = fam.ground(zs[list(idx)], dense_cap=dense_cap)
    worst = -np.inf
    for axis in range(K):
        t = np.moveaxis(table, axis, 0)
        defect = (t[:-2] + t[2:] - 2 * t[1:-1]).max() if grid_steps >= 3 else -np.inf
        worst = max(worst, float(defect))
    concave = worst <= tol
    corner_vals = [
        table[tuple(grid_steps - 1 if c else 0 for c in corner)]
        for corner in itertools.product([0, 1], repeat=K)
    ]
    corner_min = float(min(corner_vals))
    min_value = float(table.min())
    corner_attained = min_value >= corner_min - tol
    return ConcavityReport(zs, table, concave, corner_attained, min_value, corner_min, worst)


def movable_nuclei_energy(
    domain,
    z,
    candidate_sites,
    K_max=2,
    statistics="fermion",
    n_max=None,
    dim_cap=16384,
    dense_cap=2048,
):
    """Exhaustive grand-canonical minimum over at most K_max nuclei of charge z
    placed on the candidate positions.

    Also evaluates the charge-relaxed value by corner reduction (charges in
    {0, z} on the full candidate set) and checks the two agree.
    """
    fam = _ChargeFamily(domain, candidate_sites, statistics, n_max, 4, dim_cap)
    best = np.inf
    best_cfg = ()
    minima = {}
    n_star = None
    subset_values = {}
    for K in range(0, min(K_max, len(candidate_sites)) + 1):
        for subset in itertools.combinations(range(len(candidate_sites)), K):
            charges = np.zeros(len(candidate_sites))
            charges[list(subset)] = z
            res = ground_state_energy(fam.operator(charges), dense_cap=dense_cap)
            subset_values[subset] = res.value
            if res.value < best - 1e-12:
                best, best_cfg, minima, n_star = res.value, subset, res.sector_minima, res.n_star
    # corner reduction: a corner of [0, z]^K with m active charges is the
    # m-nucleus configuration, so scanning corners re-derives the same minimum
    relaxed = min(subset_values.values())
    result = EnergyResult(best, minima, n_star, {"config": best_cfg})
    return result, [candidate_sites[i] for i in best_cfg], float(relaxed)


def classical_nuclei_free_energy(
    domain,
    z,
    beta,
    mu,
    K_max,
    nucleus_grid,
    cell_volume,
    charge_nodes=1,
    statistics="fermion",
    n_max=None,
    dim_cap=16384,
    dense_cap=4096,
    with_relaxed=True,
    truncation_tol=1e-6,
):
    """Free energy with a classical-nucleus sum: -log(Z)/beta with

    Z = sum_{K <= K_max} (h^K / K!) sum_{R in grid^K}
        tr exp(-beta (H_{R, z} - mu_el N - mu_nuc K)),

    h the nucleus-grid cell volume, the position sum over ordered tuples of
    distinct grid points.  The charge-relaxed variant adds a right-endpoint
    charge quadrature on [0, z] (nodes i z/m, weight z/m; the top node is z,
    so with weight >= 1 the relaxed value cannot exceed F).
    """
    mu_el, mu_nuc = float(mu[0]), float(mu[1])
    fam = _ChargeFamily(domain, nucleus_grid, statistics, n_max, 4, dim_cap)
    G = len(nucleus_grid)

    def log_trace(charges):
        op = fam.operator(charges)
        fe = free_energy(op, beta, mu_el, dense_cap=dense_cap)
        return fe.log_z

    log_terms = []
    log_terms_relaxed = []
    top_k_terms = []
    nodes = [(k + 1) * z / charge_nodes for k in range(charge_nodes)]
    log_w = np.log(z / charge_nodes)
    for K in range(0, min(K_max, G) + 1):
        for subset in itertools.combinations(range(G), K):
            charges = np.zeros(G)
            charges[list(subset)] = z
            # ordered distinct tuples / K! = unordered subsets
            lt = log_trace(charges) + K * np.log(cell_volume) + beta * mu_nuc * K
            log_terms.append(lt)
            if K == K_max:
                top_k_terms.append(lt)
            if with_relaxed:
                for assign in itertools.product(range(charge_nodes), repeat=K):
                    ch = np.zeros(G)
                    ch[list(subset)] = [nodes[i] for i in assign]
                    ltr = (
                        log_trace(ch)
                        + K * (np.log(cell_volume) + log_w)
                        + beta * mu_nuc * K
                    )
                    log_terms_relaxed.append(ltr)
    log_z = float(logsumexp(np.array(log_terms)))
    value = -log_z / beta
    truncated = False
    if top_k_terms and K_max >= 1:
        frac = np.exp(float(logsumexp(np.array(top_k_terms))) - log_z)
        truncated = frac > truncation_tol
    relaxed = None
    if with_relaxed:
        relaxed = -float(logsumexp(np.array(log_terms_relaxed))) / beta
    return {
        "value": value,
        "log_z": log_z,
        "relaxed": relaxed,
        "beta": beta,
        "mu": (mu_el, mu_nuc),
        "truncation_flagged": truncated,
        "onsite_alpha": onsite_alpha(),
    }


# ---------------------------------------------------------------------------
# two species


def two_species_hamiltonian(
    domain,
    z,
    M,
    field=None,
    el_max=1,
    nuc_max=1,
    dim_cap=65536,
):
    """Electrons (fermions) and bosonic nuclei of charge z and mass M/2 on the
    same grid: H = dGamma_el(T(A)) + dGamma_nuc(T(A))/M - z (cross Coulomb)
    + el-el + z^2 nuc-nuc, commuting with both number operators.

    Same-site pairs use the cell-averaged kernel value alpha/a.
    """
    n = domain.n_sites
    el = build_space(n, "fermion", n_max=el_max, dim_cap=dim_cap)
    nuc = build_space(n, "boson", boson_cap=max(1, nuc_max), n_max=nuc_max, dim_cap=dim_cap)
    if el.dim * nuc.dim > dim_cap:
        raise ValueError(
            f"product dimension {el.dim * nuc.dim} exceeds cap {dim_cap}"
        )
    T = kinetic_operator(domain, field)
    W = coulomb_kernel(domain)
    H_el = second_quantize_onebody(el, T) + second_quantize_twobody(el, W)
    H_nuc = (1.0 / M) * second_quantize_onebody(nuc, T) + second_quantize_twobody(
        nuc, z ** 2 * W
    )
    Ie = sp.identity(el.dim, format="csr")
    In = sp.identity(nuc.dim, format="csr")
    H = sp.kron(H_el, In) + sp.kron(Ie, H_nuc)
    cross = -z * (el.occupations.astype(float) @ W @ nuc.occupations.astype(float).T)
    H = H + sp.diags(cross.ravel())
    sectors = {}
    for Ne, ie in el.sectors.items():
        for Kn, jn in nuc.sectors.items():
            idx = (ie[:, None] * nuc.dim + jn[None, :]).ravel()
            sectors[(int(Ne), int(Kn))] = np.sort(idx)
    charges = np.zeros((el.dim * nuc.dim, 2))
    charges[:, 0] = np.repeat(el.totals, nuc.dim)
    charges[:, 1] = np.tile(nuc.totals, el.dim)
    return ManyBodyOperator(
        H.tocsr(), sectors, charges, spaces=(el, nuc), label="two_species"
    )
