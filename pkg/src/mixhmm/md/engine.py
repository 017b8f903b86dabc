"""Binary Lennard-Jones molecular dynamics in reduced units.

Reduced units: lengths in Angstrom, masses in u, energies in K (``E/k_B``).
Velocities are ``sqrt(K/u)`` and one time unit is about 1.097 ps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from mixhmm import units
from mixhmm.units import QuantityKind

log = logging.getLogger(__name__)

#: particles closer than this fraction of the smallest sigma abort the run
OVERLAP_FLOOR = 0.3


class MdError(RuntimeError):
    """Base class for MD failures."""

    exit_code = 10


class ParameterError(MdError, ValueError):
    exit_code = 11


class BlowUpError(MdError):
    """Two particles came unphysically close (or a velocity went non-finite)."""

    exit_code = 12


class InfeasibleDensityError(MdError):
    exit_code = 13


@dataclass(frozen=True)
class LjSpecies:
    name: str
    sigma: float  # Angstrom
    epsilon: float  # K
    mass: float  # u

    def __post_init__(self):
        if not (self.sigma > 0 and self.epsilon > 0 and self.mass > 0):
            raise ParameterError(f"LJ parameters of {self.name} must be positive")


ARGON = LjSpecies("Ar", sigma=3.3967, epsilon=117.05, mass=39.948)
METHANE = LjSpecies("CH4", sigma=3.7275, epsilon=148.99, mass=16.043)
#: Lorentz-Berthelot scaling for argon-methane
ETA_AR_CH4 = 1.00141
XI_AR_CH4 = 0.96400
R_CUTOFF = 2.5


@dataclass(frozen=True)
class LjTable:
    """Pair parameters for a two-species mixture."""

    sigma: np.ndarray  # (2, 2)
    epsilon: np.ndarray  # (2, 2)
    mass: np.ndarray  # (2,)
    r_cutoff: float = R_CUTOFF
    names: tuple[str, str] = ("0", "1")

    def __post_init__(self):
        s, e = np.asarray(self.sigma, float), np.asarray(self.epsilon, float)
        if s.shape != (2, 2) or e.shape != (2, 2):
            raise ParameterError("pair tables must be 2x2")
        if np.any(s <= 0) or np.any(e <= 0) or np.any(np.asarray(self.mass) <= 0):
            raise ParameterError("pair parameters must be positive")
        if s[0, 1] != s[1, 0] or e[0, 1] != e[1, 0]:
            raise ParameterError("pair tables must be symmetric")
        if not self.r_cutoff > 1:
            raise ParameterError("r_cutoff must exceed 1")

    @property
    def cutoff(self) -> np.ndarray:
        """Per-pair cutoff distance sigma_ab * r_cutoff [A]."""
        return np.asarray(self.sigma) * self.r_cutoff

    @property
    def max_cutoff(self) -> float:
        return float(self.cutoff.max())

    @property
    def sigma_min(self) -> float:
        return float(np.min(self.sigma))

    @property
    def sigma_max(self) -> float:
        return float(np.max(self.sigma))

    def molar_masses(self) -> tuple[float, float]:
        return tuple(float(m) * units.KG_PER_MOL_PER_U for m in self.mass)


def combine_lj(
    s0: LjSpecies,
    s1: LjSpecies,
    eta: float = 1.0,
    xi: float = 1.0,
    r_cutoff: float = R_CUTOFF,
) -> LjTable:
    """Lorentz-Berthelot mixing with scaling factors ``eta`` (sigma) and ``xi`` (epsilon)."""
    if not (eta > 0 and xi > 0):
        raise ParameterError("combination factors must be positive")
    s01 = eta * 0.5 * (s0.sigma + s1.sigma)
    e01 = xi * math.sqrt(s0.epsilon * s1.epsilon)
    sigma = np.array([[s0.sigma, s01], [s01, s1.sigma]])
    epsilon = np.array([[s0.epsilon, e01], [e01, s1.epsilon]])
    return LjTable(sigma, epsilon, np.array([s0.mass, s1.mass]), r_cutoff, (s0.name, s1.name))


def argon_methane(r_cutoff: float = R_CUTOFF) -> LjTable:
    return combine_lj(ARGON, METHANE, ETA_AR_CH4, XI_AR_CH4, r_cutoff)


def pair_interaction(r, a: int, b: int, table: LjTable):
    """Truncated LJ potential and radial force ``-dphi/dr`` for pair type (a, b).

    Both are zero at and beyond ``sigma_ab * r_cutoff``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise BlowUpError("pair distance must be positive")
    sig = table.sigma[a, b]
    eps = table.epsilon[a, b]
    sr6 = (sig / r) ** 6
    inside = r < sig * table.r_cutoff
    phi = np.where(inside, 4 * eps * (sr6 * sr6 - sr6), 0.0)
    force = np.where(inside, 24 * eps * (2 * sr6 * sr6 - sr6) / r, 0.0)
    if phi.ndim == 0:
        return float(phi), float(force)
    return phi, force


@dataclass
class ParticleSystem:
    """Particle state in reduced units; axis 0 is the interface-normal axis.

    ``group`` records the cuboid each particle was created in (0 liquid, 1
    vapour, -1 unknown) and is only used for thermostatting.
    """

    positions: np.ndarray
    velocities: np.ndarray
    species: np.ndarray
    box: np.ndarray
    periodic: np.ndarray = field(default_factory=lambda: np.array([False, True, True]))
    accelerations: np.ndarray | None = None
    group: np.ndarray | None = None
    potential_energy: float = float("nan")
    #: momentum delivered to the particles by the walls so far [u sqrt(K/u)]
    wall_impulse: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64)
        self.species = np.ascontiguousarray(self.species, dtype=np.int64)
        self.box = np.asarray(self.box, dtype=np.float64)
        self.periodic = np.asarray(self.periodic, dtype=bool)
        n = len(self.positions)
        if self.group is None:
            self.group = -np.ones(n, dtype=np.int64)
        if self.accelerations is None:
            self.accelerations = np.zeros((n, 3))

    @property
    def n(self) -> int:
        return len(self.positions)

    def counts(self) -> tuple[int, int]:
        return int(np.sum(self.species == 0)), int(np.sum(self.species == 1))

    def masses(self, table: LjTable) -> np.ndarray:
        return np.asarray(table.mass)[self.species]

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            self.positions.copy(),
            self.velocities.copy(),
            self.species.copy(),
            self.box.copy(),
            self.periodic.copy(),
            self.accelerations.copy(),
            self.group.copy(),
            self.potential_energy,
            self.wall_impulse.copy(),
        )

    def kinetic_energy(self, table: LjTable) -> float:
        m = self.masses(table)
        return 0.5 * float(np.sum(m[:, None] * self.velocities**2))

    def total_energy(self, table: LjTable) -> float:
        return self.kinetic_energy(table) + self.potential_energy

    def momentum(self, table: LjTable) -> np.ndarray:
        return np.sum(self.masses(table)[:, None] * self.velocities, axis=0)

    def volume(self) -> float:
        return float(np.prod(self.box))


# ---------------------------------------------------------------------------
# force evaluation


@numba.njit(cache=True)
def _half_shell(ncell, periodic, box):
    """Per-cell list of (neighbour cell, image shift) over the 13-cell half shell plus self."""
    ncx, ncy, ncz = ncell[0], ncell[1], ncell[2]
    ntot = ncx * ncy * ncz
    nbr = -np.ones((ntot, 14), dtype=np.int64)
    shift = np.zeros((ntot, 14, 3))
    for cx in range(ncx):
        for cy in range(ncy):
            for cz in range(ncz):
                c0 = (cx * ncy + cy) * ncz + cz
                k = 0
                for dx in range(-1, 2):
                    for dy in range(-1, 2):
                        for dz in range(-1, 2):
                            # lexicographically non-negative offsets only
                            if dx < 0 or (dx == 0 and (dy < 0 or (dy == 0 and dz < 0))):
                                continue
                            idx = (cx + dx, cy + dy, cz + dz)
                            cc = np.empty(3, dtype=np.int64)
                            sh = np.zeros(3)
                            ok = True
                            for d in range(3):
                                v = idx[d]
                                if v < 0 or v >= ncell[d]:
                                    if not periodic[d]:
                                        ok = False
                                        break
                                    # neighbour is a periodic image one box length away
                                    sh[d] = box[d] * (1.0 if v >= ncell[d] else -1.0)
                                    v = v % ncell[d]
                                cc[d] = v
                            if not ok:
                                continue
                            nbr[c0, k] = (cc[0] * ncy + cc[1]) * ncz + cc[2]
                            shift[c0, k, 0] = sh[0]
                            shift[c0, k, 1] = sh[1]
                            shift[c0, k, 2] = sh[2]
                            k += 1
    return nbr, shift


@numba.njit(cache=True)
def _lj_cells_kernel(pos, species, cell, start, nbr, shift, sig2, eps, rc2):
    """Pair forces for particles sorted by cell; ``start[c]:start[c+1]`` spans cell ``c``."""
    n = pos.shape[0]
    ntot = nbr.shape[0]
    forces = np.zeros((n, 3))
    epot = 0.0
    min_r2 = np.inf
    for c0 in range(ntot):
        a0, a1 = start[c0], start[c0 + 1]
        if a0 == a1:
            continue
        for k in range(nbr.shape[1]):
            c1 = nbr[c0, k]
            if c1 < 0:
                continue
            b0, b1 = start[c1], start[c1 + 1]
            sx, sy, sz = shift[c0, k, 0], shift[c0, k, 1], shift[c0, k, 2]
            same = c1 == c0 and sx == 0.0 and sy == 0.0 and sz == 0.0
            for i in range(a0, a1):
                si = species[i]
                xi, yi, zi = pos[i, 0], pos[i, 1], pos[i, 2]
                fxi = 0.0
                fyi = 0.0
                fzi = 0.0
                jstart = i + 1 if same else b0
                for j in range(jstart, b1):
                    d0 = xi - (pos[j, 0] + sx)
                    d1 = yi - (pos[j, 1] + sy)
                    d2 = zi - (pos[j, 2] + sz)
                    r2 = d0 * d0 + d1 * d1 + d2 * d2
                    sj = species[j]
                    if r2 < rc2[si, sj]:
                        if r2 < min_r2:
                            min_r2 = r2
                        sr2 = sig2[si, sj] / r2
                        sr6 = sr2 * sr2 * sr2
                        e4 = 4.0 * eps[si, sj]
                        epot += e4 * (sr6 * sr6 - sr6)
                        fr = 6.0 * e4 * (2.0 * sr6 * sr6 - sr6) / r2
                        fxi += fr * d0
                        fyi += fr * d1
                        fzi += fr * d2
                        forces[j, 0] -= fr * d0
                        forces[j, 1] -= fr * d1
                        forces[j, 2] -= fr * d2
                forces[i, 0] += fxi
                forces[i, 1] += fyi
                forces[i, 2] += fzi
    return forces, epot, min_r2


@numba.njit(cache=True)
def _cell_index(pos, box, ncell):
    n = pos.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        flat = 0
        for d in range(3):
            c = int(pos[i, d] / box[d] * ncell[d])
            if c < 0:
                c = 0
            elif c >= ncell[d]:
                c = ncell[d] - 1
            flat = flat * ncell[d] + c
        out[i] = flat
    return out


def _check_box(sys: ParticleSystem, table: LjTable):
    rc = table.max_cutoff
    for d in range(3):
        if sys.periodic[d] and sys.box[d] < 2 * rc:
            raise ParameterError(
                f"periodic box length {sys.box[d]:.3f} A on axis {d} is below twice the cutoff"
            )


def cell_counts(box: np.ndarray, table: LjTable) -> np.ndarray:
    """Linked-cell grid with cell width at least the largest pair cutoff."""
    return np.maximum(1, np.floor(np.asarray(box) / table.max_cutoff)).astype(np.int64)


def _overlap_check(min_r2: float, table: LjTable):
    floor = OVERLAP_FLOOR * table.sigma_min
    if math.isfinite(min_r2) and min_r2 < floor * floor:
        raise BlowUpError(
            f"particles overlapped: r = {math.sqrt(min_r2):.4f} A < {floor:.4f} A"
        )


def compute_forces(sys: ParticleSystem, table: LjTable) -> tuple[np.ndarray, float]:
    """Linked-cell LJ forces [K/A] and potential energy [K]."""
    _check_box(sys, table)
    if sys.n == 0:
        return np.zeros((0, 3)), 0.0
    sig = np.asarray(table.sigma, dtype=np.float64)
    ncell = cell_counts(sys.box, table)
    key = (tuple(ncell), tuple(sys.periodic), tuple(sys.box))
    cache = _SHELL_CACHE.get(key)
    if cache is None:
        cache = _half_shell(ncell, sys.periodic, sys.box)
        if len(_SHELL_CACHE) > 16:
            _SHELL_CACHE.clear()
        _SHELL_CACHE[key] = cache
    nbr, shift = cache
    cell = _cell_index(sys.positions, sys.box, ncell)
    order = np.argsort(cell, kind="stable")
    start = np.searchsorted(cell[order], np.arange(nbr.shape[0] + 1))
    forces_sorted, epot, min_r2 = _lj_cells_kernel(
        np.ascontiguousarray(sys.positions[order]),
        np.ascontiguousarray(sys.species[order]),
        cell[order],
        start,
        nbr,
        shift,
        sig * sig,
        np.asarray(table.epsilon, dtype=np.float64),
        (sig * table.r_cutoff) ** 2,
    )
    _overlap_check(min_r2, table)
    forces = np.empty_like(forces_sorted)
    forces[order] = forces_sorted
    return forces, epot


_SHELL_CACHE: dict = {}


def compute_accelerations(sys: ParticleSystem, table: LjTable) -> np.ndarray:
    """Accelerations from the truncated LJ interactions; updates ``sys`` in place."""
    forces, epot = compute_forces(sys, table)
    acc = forces / sys.masses(table)[:, None]
    sys.accelerations = acc
    sys.potential_energy = epot
    return acc


def brute_force_forces(sys: ParticleSystem, table: LjTable) -> tuple[np.ndarray, float]:
    """O(N^2) all-pairs reference evaluation (minimum image on periodic axes)."""
    x = sys.positions
    d = x[:, None, :] - x[None, :, :]
    for ax in range(3):
        if sys.periodic[ax]:
            d[..., ax] -= sys.box[ax] * np.rint(d[..., ax] / sys.box[ax])
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, np.inf)
    s = sys.species
    sig2 = np.asarray(table.sigma)[s[:, None], s[None, :]] ** 2
    eps = np.asarray(table.epsilon)[s[:, None], s[None, :]]
    inside = r2 < sig2 * table.r_cutoff**2
    sr6 = np.where(inside, (sig2 / r2) ** 3, 0.0)
    phi = 4 * eps * (sr6 * sr6 - sr6)
    fr = 24 * eps * (2 * sr6 * sr6 - sr6) / r2
    forces = np.einsum("ij,ijk->ik", fr, d)
    return forces, 0.5 * float(phi.sum())


# ---------------------------------------------------------------------------
# integration


def apply_boundaries(
    sys: ParticleSystem, velocities: np.ndarray | None = None, masses: np.ndarray | None = None
) -> None:
    """Wrap periodic axes and reflect elastically off walls on the others.

    ``velocities`` (defaults to ``sys.velocities``) get their normal component
    flipped for reflected particles. With ``masses`` given, the momentum the
    walls hand to the particles is added to ``sys.wall_impulse``.
    """
    v = sys.velocities if velocities is None else velocities
    x = sys.positions
    for ax in range(3):
        L = sys.box[ax]
        if sys.periodic[ax]:
            np.mod(x[:, ax], L, out=x[:, ax])
            # np.mod can return L for tiny negative inputs
            x[x[:, ax] >= L, ax] = 0.0
            continue
        hit = (x[:, ax] < 0) | (x[:, ax] > L)
        if not np.any(hit):
            continue
        low = x[:, ax] < 0
        x[low, ax] = -x[low, ax]
        high = x[:, ax] > L
        x[high, ax] = 2 * L - x[high, ax]
        if masses is not None:
            sys.wall_impulse[ax] -= 2.0 * float(np.sum(masses[hit] * v[hit, ax]))
        v[hit, ax] = -v[hit, ax]
        if np.any(x[:, ax] < 0) or np.any(x[:, ax] > L):
            raise BlowUpError("particle crossed the box in a single step")


def velocity_verlet_step(sys: ParticleSystem, dtau: float, table: LjTable) -> ParticleSystem:
    """One Velocity-Verlet step; ``sys.accelerations`` must be current."""
    if not dtau > 0:
        raise ParameterError("time step must be positive")
    a = sys.accelerations
    sys.positions += dtau * sys.velocities + 0.5 * dtau * dtau * a
    sys.velocities += 0.5 * dtau * a
    apply_boundaries(sys, masses=sys.masses(table))
    compute_accelerations(sys, table)
    sys.velocities += 0.5 * dtau * sys.accelerations
    if not np.all(np.isfinite(sys.velocities)):
        raise BlowUpError("non-finite velocities")
    return sys


# ---------------------------------------------------------------------------
# temperature control


def _group_keys(sys: ParticleSystem) -> np.ndarray:
    return (sys.group + 1) * 2 + sys.species


def drift_velocities(sys: ParticleSystem) -> np.ndarray:
    """Per-particle mean velocity of its (group, species) class."""
    keys = _group_keys(sys)
    drift = np.zeros_like(sys.velocities)
    for k in np.unique(keys):
        sel = keys == k
        drift[sel] = sys.velocities[sel].mean(axis=0)
    return drift


def kinetic_temperature(sys: ParticleSystem, table: LjTable, peculiar: bool = True) -> float:
    """Kinetic temperature [K], optionally relative to per-class drift velocities."""
    if sys.n == 0:
        return float("nan")
    v = sys.velocities - drift_velocities(sys) if peculiar else sys.velocities
    m = sys.masses(table)
    return float(np.sum(m[:, None] * v * v) / (3 * sys.n))


def rescale_temperature(sys: ParticleSystem, T: float, table: LjTable) -> None:
    """Isokinetic rescale of peculiar velocities to temperature ``T``."""
    drift = drift_velocities(sys)
    pec = sys.velocities - drift
    m = sys.masses(table)
    t_now = float(np.sum(m[:, None] * pec * pec) / (3 * sys.n))
    if t_now > 0:
        sys.velocities = drift + pec * math.sqrt(T / t_now)


def thermalize(
    sys: ParticleSystem, T: float, n_steps: int, dtau: float, table: LjTable
) -> ParticleSystem:
    """Verlet steps with an isokinetic rescale toward ``T`` after each step."""
    if n_steps < 0:
        raise ParameterError("n_steps must be non-negative")
    if n_steps == 0:
        return sys
    compute_accelerations(sys, table)
    for _ in range(n_steps):
        velocity_verlet_step(sys, dtau, table)
        rescale_temperature(sys, T, table)
    return sys


# ---------------------------------------------------------------------------
# two-phase initialisation


@dataclass(frozen=True)
class BoxGeometry:
    """Two cuboids stacked along axis 0; liquid first unless ``mirror``.

    ``normal_periodic`` selects a periodic normal axis (a liquid slab with
    two interfaces) instead of elastic walls at both ends.
    """

    length_minus: float
    length_plus: float
    cross: tuple[float, float]
    mirror: bool = False
    normal_periodic: bool = True

    @property
    def box(self) -> np.ndarray:
        return np.array([self.length_minus + self.length_plus, *self.cross])

    @property
    def periodic(self) -> np.ndarray:
        return np.array([self.normal_periodic, True, True])

    @property
    def interface(self) -> float:
        """Initial coordinate of the tracked interface along axis 0."""
        return self.length_plus if self.mirror else self.length_minus

    def mirrored(self) -> "BoxGeometry":
        return replace(self, mirror=not self.mirror)


def number_densities(u, table: LjTable) -> np.ndarray:
    """Per-species number densities [1/A^3] for a state with densities in kg/m^3."""
    rho = np.asarray(u[:2], dtype=float)
    return units.to_reduced(rho, QuantityKind.DENSITY) / np.asarray(table.mass)


def cubic_geometry(
    u_minus, u_plus, n_particles: int, table: LjTable, normal_periodic: bool = True
) -> BoxGeometry:
    """Cubic box split in two equal cuboids holding about ``n_particles``."""
    total = number_densities(u_minus, table).sum() + number_densities(u_plus, table).sum()
    if total <= 0:
        raise InfeasibleDensityError("both states are empty")
    L = (2 * n_particles / total) ** (1 / 3)
    return BoxGeometry(L / 2, L / 2, (L, L), normal_periodic=normal_periodic)


def _lattice(n_sites: int, lengths: np.ndarray) -> np.ndarray:
    a = (np.prod(lengths) / n_sites) ** (1 / 3)
    nd = np.maximum(1, np.round(lengths / a)).astype(int)
    while np.prod(nd) < n_sites:
        nd[np.argmax(lengths / nd)] += 1
    grids = [(np.arange(k) + 0.5) * (L / k) for k, L in zip(nd, lengths)]
    g = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 3)
    return g, lengths / nd


def _fill_cuboid(counts, lengths, table: LjTable, T: float, rng) -> ParticleSystem:
    n0, n1 = counts
    n = n0 + n1
    species = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    if n == 0:
        return ParticleSystem(np.zeros((0, 3)), np.zeros((0, 3)), species, lengths)
    sites, spacing = _lattice(n, lengths)
    present = [s for s, c in enumerate(counts) if c > 0]
    sig_present = max(table.sigma[a, a] for a in present)
    if spacing.min() < 0.8 * sig_present:
        raise InfeasibleDensityError(
            f"lattice spacing {spacing.min():.3f} A below packing limit for sigma {sig_present:.3f} A"
        )
    pick = rng.permutation(len(sites))[:n]
    pos = sites[pick]
    rng.shuffle(species)
    pos = pos + rng.uniform(-0.05, 0.05, size=pos.shape) * table.sigma_min
    pos = np.clip(pos, 0.0, lengths)
    m = np.asarray(table.mass)[species]
    vel = rng.normal(size=(n, 3)) * np.sqrt(T / m)[:, None]
    for s in (0, 1):
        sel = species == s
        if sel.sum() > 1:
            vel[sel] -= vel[sel].mean(axis=0)
        elif sel.sum() == 1:
            vel[sel] = 0.0
    return ParticleSystem(pos, vel, species, lengths, periodic=np.array([False, True, True]))


def species_counts(u, volume: float, table: LjTable) -> tuple[int, int]:
    nd = number_densities(u, table) * volume
    return int(math.floor(nd[0] + 1e-9)), int(math.floor(nd[1] + 1e-9))


def _relocate_overlaps(sys: ParticleSystem, movable: np.ndarray, region, table: LjTable, rng):
    """Move ``movable`` particles closer than ``0.9 sigma_ab`` to anyone into free spots of ``region``."""
    lo, hi = region
    sig = np.asarray(table.sigma)

    def clashes(k):
        d = sys.positions - sys.positions[k]
        for ax in range(3):
            if sys.periodic[ax]:
                d[:, ax] -= sys.box[ax] * np.rint(d[:, ax] / sys.box[ax])
        r2 = np.einsum("ij,ij->i", d, d)
        r2[k] = np.inf
        lim = 0.9 * sig[sys.species[k], sys.species]
        return np.any(r2 < lim * lim)

    moved = 0
    for k in np.flatnonzero(movable):
        tries = 0
        while clashes(k):
            if tries > 10000:
                raise InfeasibleDensityError("could not place vapour particle without overlap")
            sys.positions[k, 0] = rng.uniform(lo, hi)
            sys.positions[k, 1:] = rng.uniform(0, sys.box[1:])
            tries += 1
            moved += tries > 0
    return moved


def initialize_two_phase_box(
    u_minus,
    u_plus,
    geometry: BoxGeometry,
    T: float,
    seed: int,
    table: LjTable,
    n_thermalize: int = 1000,
    dtau: float = 5e-3,
) -> ParticleSystem:
    """Liquid and vapour cuboids from rotated states ``(rho0, rho1, m0, m1)`` in SI.

    Each cuboid is filled on a jittered simple-cubic lattice and thermalised
    on its own (``n_thermalize`` steps of size ``dtau``): as a periodic bulk
    sample for a periodic column, between walls otherwise. The cuboids are
    then stacked, vapour particles clashing with the liquid across a seam
    are re-placed, and the per-species drift velocities are added.
    """
    rng = np.random.default_rng(seed)
    lengths_c = [geometry.length_minus, geometry.length_plus]
    parts = []
    offset = 0.0
    for grp, (u, Lc) in enumerate(zip((u_minus, u_plus), lengths_c)):
        u = np.asarray(u, dtype=float)
        if np.any(u[:2] < 0):
            raise InfeasibleDensityError("negative density")
        lengths = np.array([Lc, *geometry.cross])
        counts = species_counts(u, float(np.prod(lengths)), table)
        part = _fill_cuboid(counts, lengths, table, T, rng)
        part.group = np.full(part.n, grp)
        if part.n > 1 and n_thermalize > 0:
            # bulk sample for a periodic column; with walls the wall contact
            # layer must be relaxed before stacking
            if geometry.normal_periodic and Lc >= 2 * table.max_cutoff:
                part.periodic = np.array([True, True, True])
            thermalize(part, T, n_thermalize, dtau, table)
            part.periodic = geometry.periodic
        part.positions[:, 0] += offset
        with np.errstate(invalid="ignore", divide="ignore"):
            drift = np.where(u[:2] > 0, u[2:4] / np.where(u[:2] > 0, u[:2], 1.0), 0.0)
        drift_red = units.to_reduced(drift, QuantityKind.VELOCITY)
        part.velocities[:, 0] += drift_red[part.species]
        parts.append(part)
        offset += Lc
    box = geometry.box
    sys = ParticleSystem(
        np.concatenate([p.positions for p in parts]),
        np.concatenate([p.velocities for p in parts]),
        np.concatenate([p.species for p in parts]),
        box,
        periodic=geometry.periodic,
        group=np.concatenate([p.group for p in parts]),
    )
    np.clip(sys.positions[:, 0], 0.0, np.nextafter(box[0], 0.0), out=sys.positions[:, 0])
    seam = geometry.length_minus
    near = (sys.group == 1) & (sys.positions[:, 0] < seam + table.max_cutoff)
    near |= (sys.group == 1) & (sys.positions[:, 0] > box[0] - table.max_cutoff)
    _relocate_overlaps(sys, near, (seam, box[0]), table, rng)
    if geometry.mirror:
        sys.positions[:, 0] = box[0] - sys.positions[:, 0]
        sys.velocities[:, 0] *= -1
        apply_boundaries(sys)
    compute_accelerations(sys, table)
    return sys


# ---------------------------------------------------------------------------
# snapshot dump


def write_snapshot(path, sys: ParticleSystem, step: int | None = None) -> None:
    """Columnar text dump (id, species, x, y, z, vx, vy, vz) in reduced units."""
    header = (
        f"step={step if step is not None else ''} box={' '.join(map(repr, sys.box.tolist()))}\n"
        "id species x[A] y[A] z[A] vx[sqrt(K/u)] vy[sqrt(K/u)] vz[sqrt(K/u)]"
    )
    data = np.column_stack(
        [np.arange(sys.n), sys.species, sys.positions, sys.velocities]
    )
    np.savetxt(path, data, header=header, fmt=["%d", "%d"] + ["%.17g"] * 6)


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (species, positions, velocities) from a snapshot dump."""
    data = np.loadtxt(path, ndmin=2)
    return data[:, 1].astype(int), data[:, 2:5], data[:, 5:8]
