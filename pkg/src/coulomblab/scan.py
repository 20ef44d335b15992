"""Thermodynamic-scan drivers: energy and free energy per unit volume over
growing cubes for the three models, and the lattice-perturbation comparison.

Convergence is reported, never asserted; the asserted quantities are
boundedness (finite running floors) and the single monotonicity trend in
perturbation_compare.
"""

import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import coulomb as cb
from .geometry import build_domain

__all__ = ["ScanSpec", "ScanRow", "ScanResult", "run_scan", "perturbation_compare"]

_NUCLEUS_OFFSET = np.array([0.25, 0.25, 0.25])


@dataclass
class ScanSpec:
    model: str = "crystal"  # crystal | quantum-nuclei | movable
    sides: tuple = (2, 3, 4)
    spacing: float = 1.0
    z: float = 1.0
    beta: float = 1.0
    mu: object = 0.0  # scalar for crystal, pair for the two-species models
    nuc_mass: float = 100.0
    n_max: int = 2
    nuc_max: int = 1
    movable_k_max: int = 1
    candidates_per_side: int = 2
    dense_cap: int = 4096
    dim_cap: int = 70000
    budget: int = 70000
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("crystal", "quantum-nuclei", "movable"):
            raise ValueError(f"unknown scan model {self.model!r}")
        sides = tuple(int(s) for s in self.sides)
        if any(b <= a for a, b in zip(sides, sides[1:])):
            raise ValueError("sides must be strictly increasing")
        self.sides = sides
        if self.model == "crystal":
            self.mu = float(np.atleast_1d(self.mu)[0])
        else:
            mu = np.atleast_1d(self.mu)
            self.mu = (float(mu[0]), float(mu[-1]))

    @classmethod
    def from_dict(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        bad = set(obj) - known
        if bad:
            raise ValueError(f"unknown scan options: {sorted(bad)}")
        return cls(**obj)


@dataclass
class ScanRow:
    side: int
    volume: float
    energy: float
    energy_per_volume: float
    free_energy: float
    f_per_volume: float
    mean_n_per_volume: float
    delta_e: float
    seconds: float = 0.0
    flags: str = ""

    def output_fields(self):
        """Deterministic output record: timing deliberately excluded."""
        return {
            "side": self.side,
            "volume": self.volume,
            "energy": self.energy,
            "energy_per_volume": self.energy_per_volume,
            "free_energy": self.free_energy,
            "f_per_volume": self.f_per_volume,
            "mean_n_per_volume": self.mean_n_per_volume,
            "delta_e": self.delta_e,
            "flags": self.flags,
        }


@dataclass
class ScanResult:
    spec: ScanSpec
    rows: list
    floors: dict = field(default_factory=dict)

    def running_floors(self, which="energy_per_volume"):
        vals = [getattr(r, which) for r in self.rows]
        return [min(vals[: i + 1]) for i in range(len(vals))]

    def floor_variation(self, which="energy_per_volume"):
        """Relative change of the running floor when the largest size joins."""
        floors = self.running_floors(which)
        if len(floors) < 2:
            return 0.0
        prev, last = floors[-2], floors[-1]
        denom = max(abs(prev), 1e-12)
        return abs(last - prev) / denom


def _cube(side, a):
    return build_domain({"shape": "cube", "side": side * a}, a)


def _crystal_nuclei(domain, z):
    return cb.NucleiConfig.from_lattice(
        domain.a,
        [(_NUCLEUS_OFFSET, z)],
        domain,
        margin=0.49,
    )


def _candidate_positions(domain, per_side):
    """Coarse grid of nucleus candidates: off-site cell points of up to
    per_side^3 evenly spaced sites."""
    idx = domain.idx
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    picks = []
    for axis in range(3):
        count = min(per_side, hi[axis] - lo[axis] + 1)
        picks.append(np.unique(np.linspace(lo[axis], hi[axis], count).round().astype(int)))
    out = []
    for i in picks[0]:
        for j in picks[1]:
            for k in picks[2]:
                out.append((np.array([i, j, k], dtype=float) + _NUCLEUS_OFFSET) * domain.a)
    return out


def _estimate_dim(model, n_sites, spec):
    if model == "crystal" or model == "movable":
        return sum(comb(n_sites, N) for N in range(min(spec.n_max, n_sites) + 1))
    de = sum(comb(n_sites, N) for N in range(min(spec.n_max, n_sites) + 1))
    dn = sum(comb(n_sites + K - 1, K) for K in range(spec.nuc_max + 1))
    return de * dn


def run_scan(spec):
    """Rows of E/|O| and F/|O| for each cube side; sizes whose predicted
    dimension exceeds the budget are flagged and skipped."""
    rows = []
    prev_e = None
    for side in spec.sides:
        t0 = time.perf_counter()
        domain = _cube(side, spec.spacing)
        est = _estimate_dim(spec.model, domain.n_sites, spec)
        if est > spec.budget:
            rows.append(
                ScanRow(side, domain.volume, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan,
                        0.0, "skipped:budget")
            )
            continue
        flags = []
        if spec.model == "crystal":
            nuclei = _crystal_nuclei(domain, spec.z)
            op = cb.coulomb_hamiltonian(
                domain, nuclei, n_max=spec.n_max, dim_cap=spec.dim_cap
            )
            e_res = cb.ground_state_energy(op, dense_cap=spec.dense_cap)
            f_res = cb.free_energy(op, spec.beta, spec.mu, dense_cap=spec.dense_cap)
            energy, fval = e_res.value, f_res.value
            mean_n = float(np.atleast_1d(f_res.mean_charge())[0])
            if _cap_weight(f_res, spec.n_max) > 1e-6:
                flags.append("sector-cap-weight")
        elif spec.model == "quantum-nuclei":
            op = cb.two_species_hamiltonian(
                domain,
                spec.z,
                spec.nuc_mass,
                el_max=spec.n_max,
                nuc_max=spec.nuc_max,
                dim_cap=spec.dim_cap,
            )
            e_res = cb.ground_state_energy(op, dense_cap=spec.dense_cap)
            f_res = cb.free_energy(op, spec.beta, spec.mu, dense_cap=spec.dense_cap)
            energy, fval = e_res.value, f_res.value
            mean_n = float(np.atleast_1d(f_res.mean_charge())[0])
        else:
            candidates = _candidate_positions(domain, spec.candidates_per_side)
            e_res, _cfg, relaxed = cb.movable_nuclei_energy(
                domain,
                spec.z,
                candidates,
                K_max=spec.movable_k_max,
                n_max=spec.n_max,
                dim_cap=spec.dim_cap,
                dense_cap=spec.dense_cap,
            )
            energy = e_res.value
            if abs(energy - relaxed) > 1e-9:
                flags.append("relaxed-mismatch")
            fe = cb.classical_nuclei_free_energy(
                domain,
                spec.z,
                spec.beta,
                spec.mu,
                K_max=spec.movable_k_max,
                nucleus_grid=candidates,
                cell_volume=domain.volume / len(candidates),
                n_max=spec.n_max,
                dim_cap=spec.dim_cap,
                dense_cap=spec.dense_cap,
                with_relaxed=False,
            )
            fval = fe["value"]
            mean_n = np.nan
            if fe["truncation_flagged"]:
                flags.append("k-truncation")
        vol = domain.volume
        e_pv = energy / vol
        delta = np.nan if prev_e is None else abs(e_pv - prev_e)
        prev_e = e_pv
        rows.append(
            ScanRow(
                side,
                vol,
                energy,
                e_pv,
                fval,
                fval / vol,
                mean_n / vol if np.isfinite(mean_n) else np.nan,
                delta,
                time.perf_counter() - t0,
                ";".join(flags),
            )
        )
    result = ScanResult(spec, rows)
    good = [r for r in rows if not r.flags.startswith("skipped")]
    if good:
        result.floors = {
            "energy_per_volume": min(r.energy_per_volume for r in good),
            "f_per_volume": min(r.f_per_volume for r in good),
        }
    else:
        result.floors = {"energy_per_volume": np.nan, "f_per_volume": np.nan}
    return result


def _cap_weight(f_res, n_cap):
    """Gibbs weight sitting in the top particle-number sector."""
    weights = f_res.sector_weights()
    top = [k for k in weights if (k if np.isscalar(k) else max(k)) >= n_cap]
    return float(sum(weights[k].sum() for k in top))


def mu_sweep(spec, mu_values):
    """F/|O| versus the electron chemical potential at the smallest scan size.

    Purely tabulated: the near-linear large-mu trend is reported, never
    asserted.
    """
    side = spec.sides[0]
    domain = _cube(side, spec.spacing)
    if spec.model != "crystal":
        raise ValueError("the chemical-potential sweep runs on the crystal model")
    nuclei = _crystal_nuclei(domain, spec.z)
    op = cb.coulomb_hamiltonian(domain, nuclei, n_max=spec.n_max, dim_cap=spec.dim_cap)
    rows = []
    for mu in mu_values:
        fe = cb.free_energy(op, spec.beta, float(mu), dense_cap=spec.dense_cap)
        rows.append(
            {
                "mu": float(mu),
                "f_per_volume": fe.value / domain.volume,
                "mean_n_per_volume": float(np.atleast_1d(fe.mean_charge())[0]) / domain.volume,
            }
        )
    return rows


def perturbation_compare(spec, defects=(), deformation=None):
    """|E_(perturbed) - E_(periodic)| / |O| across the size sequence.

    For compactly supported perturbations the ratio is asserted nonincreasing
    between the two largest sizes; the full sequence is reported either way.
    """
    if spec.model != "crystal":
        raise ValueError("perturbation comparison applies to the crystal model")
    ratios = []
    rows = []
    for side in spec.sides:
        domain = _cube(side, spec.spacing)
        base = _crystal_nuclei(domain, spec.z)
        pert = cb.NucleiConfig.from_lattice(
            domain.a,
            [(_NUCLEUS_OFFSET, spec.z)],
            domain,
            deformation=deformation,
            defects=defects,
            margin=0.49,
        )
        op0 = cb.coulomb_hamiltonian(domain, base, n_max=spec.n_max, dim_cap=spec.dim_cap)
        op1 = cb.coulomb_hamiltonian(domain, pert, n_max=spec.n_max, dim_cap=spec.dim_cap)
        e0 = cb.ground_state_energy(op0, dense_cap=spec.dense_cap).value
        e1 = cb.ground_state_energy(op1, dense_cap=spec.dense_cap).value
        ratio = abs(e1 - e0) / domain.volume
        ratios.append(ratio)
        rows.append({"side": side, "e_periodic": e0, "e_perturbed": e1, "ratio": ratio})
    trend_ok = True
    if len(ratios) >= 2:
        trend_ok = ratios[-1] <= ratios[-2] + 1e-12
    return {"rows": rows, "trend_nonincreasing": trend_ok}
