import numpy as np
import pytest

from coulomblab import coulomb as C
from coulomblab import fock as F
from coulomblab import geometry as G


def cube(side, a=1.0):
    return G.build_domain({"shape": "cube", "side": side * a}, a)


def chain(n, a=1.0):
    return G.build_domain({"shape": "custom", "sites": [[0, 0, k] for k in range(n)]}, a)


TWO_NUCLEI = C.NucleiConfig([([0.4, 0.4, 0.4], 2.0), ([1.6, 1.6, 1.6], 2.0)])


class TestKinetic:
    def test_zero_field_real_positive(self):
        dom = cube(3)
        T = C.kinetic_operator(dom)
        assert np.abs(T - T.T).max() == 0.0
        assert T.dtype == float
        assert np.linalg.eigvalsh(T)[0] > 0.0
        assert np.all(T.sum(axis=1) >= -1e-12)

    def test_chain_closed_form(self):
        # 1 x 1 x n chain: transverse Dirichlet walls shift the 1D chain
        # spectrum (2 - 2 cos(k pi/(n+1)))/a^2 up by 4/a^2
        a = 0.5
        n = 6
        dom = chain(n, a)
        lam = np.sort(np.linalg.eigvalsh(C.kinetic_operator(dom)))
        k = np.arange(1, n + 1)
        expected = np.sort(4.0 / a ** 2 + (2.0 - 2.0 * np.cos(k * np.pi / (n + 1))) / a ** 2)
        assert np.abs(lam - expected).max() < 1e-11

    def test_mass_scale(self):
        dom = cube(2)
        assert np.allclose(
            C.kinetic_operator(dom, mass_scale=0.01), 0.01 * C.kinetic_operator(dom)
        )

    def test_peierls_hermitian(self):
        dom = cube(3)
        fld = C.MagneticField.constant([0.0, 0.0, 0.8])
        T = C.kinetic_operator(dom, fld)
        assert np.abs(T - T.conj().T).max() < 1e-14
        assert np.abs(np.abs(T[T != 0]) - np.abs(C.kinetic_operator(dom)[T != 0])).max() < 1e-12

    def test_constant_gauge_curl(self):
        B = np.array([0.3, -1.2, 0.7])
        fld = C.MagneticField.constant(B)
        for p in ([0.4, 0.2, -0.3], [1.0, 0.0, 2.0]):
            assert np.abs(fld.curl_fd(p) - B).max() < 1e-6 * np.abs(B).max()


class TestNuclei:
    def test_coincident_charged_rejected(self):
        with pytest.raises(ValueError, match="coincident"):
            C.NucleiConfig([([0, 0, 0], 1.0), ([0, 0, 0], 2.0)])

    def test_zero_charge_coincidence_allowed(self):
        cfg = C.NucleiConfig([([0, 0, 0], 0.0), ([0, 0, 0], 2.0)])
        assert len(cfg) == 2

    def test_site_regularization_guard(self):
        dom = cube(2)
        bad = C.NucleiConfig([([0.0, 0.0, 0.05], 1.0)])
        with pytest.raises(ValueError, match="regularization violated"):
            C.nuclear_potential(dom, bad)

    def test_lattice_generation_counts(self):
        dom = cube(3)
        cfg = C.NucleiConfig.from_lattice(1.0, [((0.25, 0.25, 0.25), 1.0)], dom, margin=0.49)
        assert len(cfg) == 27

    def test_deformation_collision_rejected(self):
        dom = cube(2)

        def smash(R, z):
            # collapse every nucleus onto one point
            return -R + np.array([0.3, 0.3, 0.3]), 0.0

        with pytest.raises(ValueError, match="hyp_D3"):
            C.NucleiConfig.from_lattice(
                1.0, [((0.25, 0.25, 0.25), 1.0)], dom, deformation=smash, margin=0.49
            )


class TestHamiltonianAndGroundState:
    def test_vacuum_sector_is_nuclear_constant(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI, n_max=1)
        d = np.linalg.norm(np.array([1.2, 1.2, 1.2]))
        res = C.ground_state_energy(op)
        assert res.sector_minima[0] == pytest.approx(4.0 / d, abs=1e-12)

    def test_no_nuclei_one_electron_matches_kinetic(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=1)
        idx = op.space.sector_indices(1)
        block = np.asarray(op.matrix.todense())[np.ix_(idx, idx)]
        assert np.allclose(
            np.sort(np.linalg.eigvalsh(block)),
            np.sort(np.linalg.eigvalsh(C.kinetic_operator(dom))),
            atol=1e-12,
        )

    def test_commutes_with_number(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI, n_max=3)
        assert op.block_offdiagonal_norm() == 0.0

    def test_vacuum_optimal_without_nuclei(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=2)
        res = C.ground_state_energy(op)
        assert res.value == 0.0 and res.n_star == 0

    def test_dense_oracle_agreement(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI)  # full space, 2^8
        sector = C.ground_state_energy(op).value
        dense = np.linalg.eigvalsh(np.asarray(op.matrix.todense()))[0]
        assert sector == pytest.approx(dense, abs=1e-9)

    def test_constant_shift(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI, n_max=2)
        res = C.ground_state_energy(op)
        res_shift = C.ground_state_energy(op.shifted(2.5))
        assert res_shift.value == pytest.approx(res.value + 2.5, abs=1e-12)


class TestFreeEnergy:
    def test_single_site_two_level(self):
        dom = G.build_domain({"shape": "custom", "sites": [[0, 0, 0]]}, 1.0)
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty())
        beta, mu = 2.0, 1.0
        fe = C.free_energy(op, beta, mu)
        assert fe.value == pytest.approx(
            -np.log(1 + np.exp(-beta * (6.0 - mu))) / beta, abs=1e-14
        )

    def test_low_temperature_limit(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI, n_max=2)
        res = C.ground_state_energy(op)
        mu = 0.5
        target = min(res.sector_minima[N] - mu * N for N in res.sector_minima)
        fe = C.free_energy(op, 1000.0, mu)
        assert fe.value == pytest.approx(target, abs=1e-6)

    def test_free_fermion_product_formula(self):
        # noninteracting electrons: dGamma(T) alone factorizes over modes
        dom = cube(2)
        sp = F.build_space(8, "fermion")
        T = C.kinetic_operator(dom)
        H = F.second_quantize_onebody(sp, T)
        op = C.ManyBodyOperator(H, dict(sp.sectors), sp.totals, space=sp)
        beta, mu = 0.7, 2.0
        lam = np.linalg.eigvalsh(T)
        product = -np.sum(np.log(1 + np.exp(-beta * (lam - mu)))) / beta
        fe = C.free_energy(op, beta, mu)
        assert fe.value == pytest.approx(product, rel=1e-12)

    def test_boson_product_formula_diagonal(self):
        # diagonal one-body energies: the truncated trace factorizes exactly
        sp = F.build_space(3, "boson", boson_cap=4)
        eps = np.array([1.0, 2.3, 0.6])
        H = F.second_quantize_onebody(sp, np.diag(eps))
        beta = 1.1
        vals = np.linalg.eigvalsh(H.toarray())
        lhs = np.exp(-beta * vals).sum()
        rhs = np.prod([(1 - np.exp(-beta * e * 5)) / (1 - np.exp(-beta * e)) for e in eps])
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_boson_product_formula_truncation_corrected(self):
        dom = chain(3)
        sp = F.build_space(3, "boson", boson_cap=4)
        T = C.kinetic_operator(dom)
        H = F.second_quantize_onebody(sp, T)
        beta = 1.0
        lam = np.linalg.eigvalsh(T)
        full = np.prod(1.0 / (1.0 - np.exp(-beta * lam)))
        vals = np.linalg.eigvalsh(H.toarray())
        lhs = np.exp(-beta * vals).sum()
        # truncation bound: occupation > cap carries weight < e^(-beta lam_min cap)
        assert abs(lhs - full) / full < 3 * np.exp(-beta * lam.min() * 5)

    def test_gibbs_state_and_variational_bound(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI, n_max=2)
        beta, mu = 1.3, 0.4
        fe = C.free_energy(op, beta, mu)
        gibbs = fe.gibbs_state()
        assert fe.variational_value(gibbs) == pytest.approx(fe.value, abs=1e-9)
        rng = np.random.default_rng(5)
        for trial in range(20):
            X = rng.standard_normal((op.dim, op.dim))
            M = X @ X.T
            st = F.FockState(op.space, M / np.trace(M), validate=False)
            assert fe.variational_value(st) >= fe.value - 1e-10

    def test_mean_charge(self):
        dom = cube(2)
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=2)
        fe = C.free_energy(op, 1.0, -50.0)
        assert fe.mean_charge() == pytest.approx(0.0, abs=1e-12)


class TestHartreeFock:
    def test_zero_density_gives_constant(self):
        dom = cube(2)
        e = C.hf_energy(dom, TWO_NUCLEI, np.zeros((8, 8)))
        assert e == pytest.approx(C.nuclear_constant(TWO_NUCLEI), abs=1e-12)

    def test_rank_one_self_interaction_free(self):
        dom = cube(2)
        rng = np.random.default_rng(6)
        phi = rng.standard_normal(8)
        phi /= np.linalg.norm(phi)
        gamma = np.outer(phi, phi)
        h = C.kinetic_operator(dom) + np.diag(C.nuclear_potential(dom, TWO_NUCLEI))
        expected = phi @ h @ phi + C.nuclear_constant(TWO_NUCLEI)
        assert C.hf_energy(dom, TWO_NUCLEI, gamma) == pytest.approx(expected, abs=1e-10)

    def test_hf_upper_bounds_schroedinger(self):
        rng = np.random.default_rng(8)
        for trial in range(4):
            dom = cube(2)
            pos = rng.uniform(0.3, 1.7, size=(2, 3))
            while np.linalg.norm(pos[0] - pos[1]) < 0.5:
                pos = rng.uniform(0.3, 1.7, size=(2, 3))
            nuc = C.NucleiConfig([(pos[0], 3.0), (pos[1], 2.0)])
            op = C.coulomb_hamiltonian(dom, nuc)
            exact = C.ground_state_energy(op).value
            hf = C.hf_minimize(dom, nuc, mu=0.0)
            assert hf.energy >= exact - 1e-9

    def test_finite_temperature_map_converges(self):
        dom = cube(2)
        res = C.hf_minimize(dom, TWO_NUCLEI, mu=1.0, beta=2.0)
        assert res.converged
        lam = np.linalg.eigvalsh(res.gamma.matrix)
        assert lam.min() > -1e-10 and lam.max() < 1 + 1e-10

    def test_finite_temperature_upper_bounds_gibbs(self):
        # quasi-free trial states bound the exact grand potential from above
        dom = cube(2)
        beta, mu = 1.5, 0.5
        hf = C.hf_minimize(dom, TWO_NUCLEI, mu=mu, beta=beta)
        op = C.coulomb_hamiltonian(dom, TWO_NUCLEI)
        fe = C.free_energy(op, beta, mu)
        assert hf.grand_value >= fe.value - 1e-9


class TestChargeConcavity:
    def test_single_nucleus_concave(self):
        dom = cube(2)
        rep = C.charge_concavity_scan(dom, [[0.6, 0.6, 0.6]], z_max=6.0, grid_steps=9, n_max=2)
        assert rep.concave and rep.corner_attained

    def test_two_nuclei_corner(self):
        dom = cube(2)
        rep = C.charge_concavity_scan(
            dom, [[0.4, 0.4, 0.4], [1.6, 1.6, 0.4]], z_max=4.0, grid_steps=5, n_max=2
        )
        assert rep.concave and rep.corner_attained
        assert rep.min_value == pytest.approx(rep.corner_min, abs=1e-9)

    def test_zero_charges_match_free_model(self):
        dom = cube(2)
        rep = C.charge_concavity_scan(dom, [[0.6, 0.6, 0.6]], z_max=3.0, grid_steps=3, n_max=2)
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=2)
        assert rep.table[0] == pytest.approx(C.ground_state_energy(op).value, abs=1e-12)

    def test_cost_guard(self):
        dom = cube(2)
        with pytest.raises(ValueError, match="limited"):
            C.charge_concavity_scan(dom, [[0.5] * 3] * 4, z_max=1.0, grid_steps=3)


class TestTwoSpecies:
    def test_decoupled_at_zero_charge(self):
        dom = cube(2)
        op = C.two_species_hamiltonian(dom, z=0.0, M=50.0, el_max=1, nuc_max=1)
        res = C.ground_state_energy(op)
        el = C.ground_state_energy(C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=1))
        T = C.kinetic_operator(dom)
        nuc_min = min(0.0, np.linalg.eigvalsh(T / 50.0)[0])
        assert res.value == pytest.approx(el.value + nuc_min, abs=1e-12)

    def test_monotone_in_inverse_mass(self):
        dom = cube(2)
        vals = []
        for M in (1e3, 1e6):
            op = C.two_species_hamiltonian(dom, z=6.0, M=M, el_max=1, nuc_max=1)
            vals.append(C.ground_state_energy(op).value)
        assert vals[1] <= vals[0] + 1e-9

    def test_conserves_both_numbers(self):
        dom = cube(2)
        op = C.two_species_hamiltonian(dom, z=2.0, M=10.0, el_max=1, nuc_max=1)
        assert op.block_offdiagonal_norm() == 0.0

    def test_binding_at_large_charge(self):
        dom = cube(2)
        op = C.two_species_hamiltonian(dom, z=8.0, M=100.0, el_max=1, nuc_max=1)
        res = C.ground_state_energy(op)
        assert res.value < 0.0
        assert res.n_star == (1, 1)

    def test_periodic_field_diamagnetic(self):
        dom = cube(2)
        fld = C.MagneticField.periodic_sine(0.8, 2.0)
        e0 = C.ground_state_energy(
            C.two_species_hamiltonian(dom, z=8.0, M=100.0, el_max=1, nuc_max=1)
        ).value
        eA = C.ground_state_energy(
            C.two_species_hamiltonian(dom, z=8.0, M=100.0, field=fld, el_max=1, nuc_max=1)
        ).value
        assert eA >= e0 - 1e-10


class TestMovableNuclei:
    def test_never_positive(self):
        dom = cube(2)
        cands = [[0.4, 0.4, 0.4], [1.6, 1.6, 1.6]]
        res, cfg, relaxed = C.movable_nuclei_energy(dom, 3.0, cands, K_max=2, n_max=2)
        assert res.value <= 0.0
        assert res.value == pytest.approx(relaxed, abs=1e-9)

    def test_monotone_in_candidates(self):
        dom = cube(2)
        small = [[0.4, 0.4, 0.4]]
        big = small + [[1.6, 1.6, 1.6], [0.4, 1.6, 0.4]]
        e_small = C.movable_nuclei_energy(dom, 5.0, small, K_max=1, n_max=2)[0].value
        e_big = C.movable_nuclei_energy(dom, 5.0, big, K_max=1, n_max=2)[0].value
        assert e_big <= e_small + 1e-12

    def test_binding_with_strong_charge(self):
        dom = cube(2)
        cands = [[0.4, 0.4, 0.4], [1.6, 1.6, 1.6]]
        res, cfg, _ = C.movable_nuclei_energy(dom, 6.0, cands, K_max=1, n_max=2)
        assert res.value < 0.0 and len(cfg) == 1


class TestClassicalFreeEnergy:
    GRID = [[0.45, 0.45, 0.45], [1.55, 1.55, 1.55]]

    def test_suppressed_nuclei_reduce_to_electrons(self):
        dom = cube(2)
        out = C.classical_nuclei_free_energy(
            dom, 1.0, 1.0, (0.0, -1000.0), K_max=1, nucleus_grid=self.GRID,
            cell_volume=4.0, n_max=2, with_relaxed=False,
        )
        op = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=2)
        fe = C.free_energy(op, 1.0, 0.0)
        assert out["value"] == pytest.approx(fe.value, abs=1e-9)

    def test_relaxed_below_fixed_charge(self):
        dom = cube(2)
        out = C.classical_nuclei_free_energy(
            dom, 2.0, 1.0, (0.0, 0.5), K_max=1, nucleus_grid=self.GRID,
            cell_volume=4.0, charge_nodes=2, n_max=2,
        )
        assert out["relaxed"] <= out["value"] + 1e-12

    def test_hand_assembled_two_term_sum(self):
        dom = cube(2)
        beta, mu = 0.9, (0.3, -0.7)
        grid = [self.GRID[0]]
        out = C.classical_nuclei_free_energy(
            dom, 1.5, beta, mu, K_max=1, nucleus_grid=grid, cell_volume=8.0,
            n_max=1, with_relaxed=False,
        )
        # direct evaluation: Z = tr e^(-beta(H0 - mu1 N)) + h^3 e^(beta mu2) tr ...
        op0 = C.coulomb_hamiltonian(dom, C.NucleiConfig.empty(), n_max=1)
        op1 = C.coulomb_hamiltonian(dom, C.NucleiConfig([(grid[0], 1.5)]), n_max=1)
        z = 0.0
        for op, w in ((op0, 1.0), (op1, 8.0 * np.exp(beta * mu[1]))):
            for N, idx in op.sectors.items():
                vals = np.linalg.eigvalsh(np.asarray(op.sector_matrix(N).todense()))
                z += w * np.exp(-beta * (vals - mu[0] * N)).sum()
        assert out["value"] == pytest.approx(-np.log(z) / beta, abs=1e-10)

    def test_truncation_flag(self):
        dom = cube(2)
        out = C.classical_nuclei_free_energy(
            dom, 2.0, 1.0, (0.0, 5.0), K_max=1, nucleus_grid=self.GRID,
            cell_volume=4.0, n_max=1, with_relaxed=False,
        )
        assert out["truncation_flagged"]


class TestDensityBound:
    def test_density_power_bounded_across_sizes(self):
        ratios = []
        for side in (2, 3):
            dom = cube(side)
            nuc = C.NucleiConfig.from_lattice(
                1.0, [((0.25, 0.25, 0.25), 0.5)], dom, margin=0.49
            )
            op = C.coulomb_hamiltonian(dom, nuc, n_max=2, dim_cap=70000)
            _e, _n, vec = C.ground_state_vector(op)
            st = F.FockState(op.space, np.outer(vec, vec.conj()), validate=False)
            rho = F.reduced_density(st, 1).site_density(dom.a)
            ratios.append(dom.a ** 3 * (rho ** (5.0 / 3.0)).sum() / dom.volume)
        assert all(np.isfinite(r) for r in ratios)
        assert max(ratios) < 10.0


class TestOnsiteAlpha:
    def test_deterministic_and_plausible(self):
        a1 = C.onsite_alpha(seed=11, samples=200000)
        a2 = C.onsite_alpha(seed=11, samples=200000)
        assert a1 == a2
        # cell-averaged Coulomb constant of the unit cube
        assert 1.85 < a1 < 1.92
