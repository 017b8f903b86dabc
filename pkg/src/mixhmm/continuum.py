"""One-dimensional moving-mesh finite volumes for isothermal two-component flow.

Cell averages are rotated 4-states ``(rho0, rho1, m0, m1)`` [SI]. The liquid
occupies the cells left of a tracked interface node, the vapour the cells to
its right. Bulk facets use a Rusanov flux; the interface facet uses the
interface solver's states in the frame moving with the interface speed, so
each cell next to it receives its own one-sided flux. The chemical-potential
gradient and the Maxwell-Stefan friction are cell-wise sources.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .eos import PHASE_BY_CODE, EosError, VdwMixture, default_eos
from .frame import FullState, interface_solve

LIQUID, VAPOR = 0, 1
BOUNDARY_KINDS = ("outflow", "reflective")


class SimulationError(RuntimeError):
    exit_code = 60


class SetupError(SimulationError):
    pass


class PhaseEscapeError(SimulationError):
    def __init__(self, cell: int, x: float, state, expected: str, got: str):
        vals = np.asarray(state, dtype=float).tolist()
        super().__init__(f"cell {cell} at x = {x:.6g} m left the {expected} region (now {got}); state = {vals}")
        self.cell = cell


class CflError(SimulationError):
    pass


class InterfaceExitError(SimulationError):
    """The interface reached the domain boundary (ends the simulation)."""


class DegenerateStencilError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 0.003
    dt: float = 1e-7
    domain: tuple[float, float] = (-5.0, 5.0)
    dx: float = 2e-3
    dx_min_factor: float = 0.5
    dx_max_factor: float = 1.5
    diffusion: float = 1.0  # Maxwell-Stefan coefficient D01 [m^2/s]
    boundary: tuple[str, str] = ("outflow", "outflow")
    solver: str = "surrogate"
    interface_x: float = 0.0
    friction: bool = True
    chem_potential: bool = True
    snapshot_every: int = 1000  # steps; 0 writes only the first and last

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise SetupError("domain must have positive length")
        if not (self.dt > 0 and self.dx > 0 and self.t_end >= 0 and self.diffusion > 0):
            raise SetupError("dt, dx and the diffusion coefficient must be positive, t_end >= 0")
        if not 0 < self.dx_min_factor < 1 < self.dx_max_factor:
            raise SetupError("need dx_min < dx < dx_max")
        if 2 * self.dx_min_factor > self.dx_max_factor:
            raise SetupError("dx_max must be at least twice dx_min so splits stay admissible")
        for b in self.boundary:
            if b not in BOUNDARY_KINDS:
                raise SetupError(f"unknown boundary kind {b!r}")
        if self.solver not in ("surrogate", "md"):
            raise SetupError(f"unknown interface solver {self.solver!r}")
        if not lo < self.interface_x < hi:
            raise SetupError("initial interface must lie inside the domain")
        if self.snapshot_every < 0:
            raise SetupError("snapshot interval must be non-negative")

    @property
    def dx_min(self) -> float:
        return self.dx_min_factor * self.dx

    @property
    def dx_max(self) -> float:
        return self.dx_max_factor * self.dx

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# ---------------------------------------------------------------------------
# mesh


@dataclass
class Mesh1D:
    nodes: np.ndarray
    interface: int  # node index; cells [0, interface) are liquid
    dx: float
    dx_min: float
    dx_max: float

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if np.any(np.diff(self.nodes) <= 0):
            raise SetupError("mesh nodes must be strictly increasing")
        if not 0 < self.interface < len(self.nodes) - 1:
            raise SetupError("interface node must be an interior node")

    @classmethod
    def uniform(cls, config: SimConfig) -> "Mesh1D":
        lo, hi = config.domain
        n_left = int(round((config.interface_x - lo) / config.dx))
        n_right = int(round((hi - config.interface_x) / config.dx))
        if not (
            math.isclose(lo + n_left * config.dx, config.interface_x, abs_tol=1e-9 * config.dx)
            and math.isclose(config.interface_x + n_right * config.dx, hi, abs_tol=1e-9 * config.dx)
        ):
            raise SetupError("initial interface must fall on a mesh node")
        left = np.linspace(lo, config.interface_x, n_left + 1)
        right = np.linspace(config.interface_x, hi, n_right + 1)
        nodes = np.concatenate([left, right[1:]])
        return cls(nodes, n_left, config.dx, config.dx_min, config.dx_max)

    @property
    def n_cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def phases(self) -> np.ndarray:
        tags = np.full(self.n_cells, VAPOR)
        tags[: self.interface] = LIQUID
        return tags

    @property
    def interface_x(self) -> float:
        return float(self.nodes[self.interface])

    def copy(self) -> "Mesh1D":
        return replace(self, nodes=self.nodes.copy())


def project_initial_data(U0: Callable[[np.ndarray], np.ndarray], mesh: Mesh1D, n_quad: int = 0) -> np.ndarray:
    """Cell averages of ``U0(x) -> (n, 4)``.

    Piecewise-constant data that only jumps at the interface node is exact
    with the default single evaluation at the cell center. ``n_quad > 0``
    uses Gauss-Legendre points instead.
    """
    if n_quad <= 0:
        U = np.asarray(U0(mesh.centers), dtype=float)
    else:
        pts, wts = np.polynomial.legendre.leggauss(n_quad)
        a, b = mesh.nodes[:-1], mesh.nodes[1:]
        U = 0.0
        for p, w in zip(pts, wts):
            U = U + 0.5 * w * np.asarray(U0(0.5 * (a + b) + 0.5 * (b - a) * p), dtype=float)
    return np.array(U, dtype=float).reshape(mesh.n_cells, 4)


def riemann_data(u_liquid, u_vapor, x0: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-constant initial data with the liquid left of ``x0``."""
    ul = np.asarray(u_liquid, dtype=float)
    uv = np.asarray(u_vapor, dtype=float)

    def U0(x):
        x = np.asarray(x, dtype=float)
        return np.where((x < x0)[:, None], ul[None, :], uv[None, :])

    return U0


def from_velocities(rho0, rho1, v0, v1) -> np.ndarray:
    return np.array([rho0, rho1, rho0 * v0, rho1 * v1], dtype=float)


#: Riemann data (liquid, vapour) of the two 1D examples
EXAMPLE_1 = (from_velocities(1200.0, 100.0, 0.0, 0.0), from_velocities(10.0, 20.0, 0.0, 0.0))
EXAMPLE_2 = (from_velocities(440.0, 280.0, 0.0, 0.0), from_velocities(20.0, 2.0, -50.0, -50.0))


# ---------------------------------------------------------------------------
# fluxes and sources


def velocities(U: np.ndarray) -> np.ndarray:
    """``(v0, v1)`` columns, zero where a density vanishes."""
    U = np.atleast_2d(U)
    rho = U[:, :2]
    out = np.zeros_like(rho)
    np.divide(U[:, 2:4], rho, out=out, where=rho > 0)
    return out


def physical_flux(U: np.ndarray) -> np.ndarray:
    U = np.atleast_2d(U)
    v = velocities(U)
    return np.column_stack([U[:, 2], U[:, 3], U[:, 2] * v[:, 0], U[:, 3] * v[:, 1]])


def wave_speed(eos: VdwMixture, U: np.ndarray) -> np.ndarray:
    U = np.atleast_2d(U)
    v = velocities(U)
    return eos.wave_speeds(U[:, 0], U[:, 1], v[:, 0], v[:, 1])


def bulk_flux(uL, uR, eos: VdwMixture, lam=None) -> np.ndarray:
    """Rusanov flux between same-phase states, rows are facets."""
    uL = np.atleast_2d(np.asarray(uL, dtype=float))
    uR = np.atleast_2d(np.asarray(uR, dtype=float))
    if lam is None:
        lam = np.maximum(wave_speed(eos, uL), wave_speed(eos, uR))
    return 0.5 * (physical_flux(uL) + physical_flux(uR)) - 0.5 * lam[:, None] * (uR - uL)


def interface_flux(u_star_minus, u_star_plus, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Moving-frame fluxes ``f(U*) - s U*`` for the liquid and the vapour side."""
    um = np.asarray(u_star_minus, dtype=float)
    up = np.asarray(u_star_plus, dtype=float)
    return physical_flux(um)[0] - s * um, physical_flux(up)[0] - s * up


def friction_factor(rho0, rho1, M0: float, M1: float, diffusion: float, R: float = 8.314):
    """``f01 = R / (M0 M1 c D01)`` with the total molar concentration ``c``."""
    c = np.asarray(rho0) / M0 + np.asarray(rho1) / M1
    return R / (M0 * M1 * c * diffusion)


def friction_source(U: np.ndarray, eos: VdwMixture, diffusion: float) -> np.ndarray:
    U = np.atleast_2d(U)
    p = eos.params
    v = velocities(U)
    f01 = friction_factor(U[:, 0], U[:, 1], p.M0, p.M1, diffusion, p.R)
    drag = -p.T * f01 * U[:, 0] * U[:, 1] * (v[:, 0] - v[:, 1])
    S = np.zeros_like(U)
    S[:, 2] = drag
    S[:, 3] = -drag
    return S


def phase_gradient(values: np.ndarray, centers: np.ndarray, interface: int) -> np.ndarray:
    """Per-cell derivative: central in the bulk, one-sided next to the interface and the ends.

    ``values`` may carry trailing dimensions (one column per field).
    """
    g = np.zeros_like(values)
    for lo, hi in ((0, interface), (interface, len(centers))):
        n = hi - lo
        if n < 2:
            continue
        v = values[lo:hi]
        c = centers[lo:hi]
        gb = np.empty_like(v)
        gb[1:-1] = (v[2:] - v[:-2]) / _bcast(c[2:] - c[:-2], v)
        gb[0] = (v[1] - v[0]) / (c[1] - c[0])
        gb[-1] = (v[-1] - v[-2]) / (c[-1] - c[-2])
        g[lo:hi] = gb
    return g


def _bcast(d, like):
    return d.reshape(d.shape + (1,) * (like.ndim - 1))


def chem_potential_source(U: np.ndarray, mesh: Mesh1D, eos: VdwMixture) -> np.ndarray:
    mu0, mu1 = eos.chemical_potential(U[:, 0], U[:, 1])
    grad = phase_gradient(np.column_stack([mu0, mu1]), mesh.centers, mesh.interface)
    S = np.zeros_like(U)
    S[:, 2] = -U[:, 0] * grad[:, 0]
    S[:, 3] = -U[:, 1] * grad[:, 1]
    return S


def source_terms(U: np.ndarray, mesh: Mesh1D, eos: VdwMixture, config: SimConfig) -> np.ndarray:
    S = np.zeros_like(U)
    if config.friction:
        S += friction_source(U, eos, config.diffusion)
    if config.chem_potential:
        S += chem_potential_source(U, mesh, eos)
    return S


def lls_gradient(mu_center, center, neighbors) -> np.ndarray:
    """Least-squares gradient from ``(point, value)`` neighbours of a cell.

    Minimises ``|A g - b|`` with rows ``c_j - c_k`` and right-hand side
    ``mu_j - mu_k`` (the solution of the normal equations ``A^T A g = A^T b``).
    ``mu_center`` may be a scalar or a vector of fields, in which case one
    gradient per field is returned (shape ``(n_fields, d)``).
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.size
    if len(neighbors) < d:
        raise DegenerateStencilError(f"need at least {d} neighbours, got {len(neighbors)}")
    pts = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in neighbors])
    vals = np.array([np.asarray(v, dtype=float) for _, v in neighbors])
    A = center[None, :] - pts
    b = np.asarray(mu_center, dtype=float)[None, ...] - vals
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size < d or sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateStencilError("stencil is collinear or coplanar")
    # same minimiser as the normal equations, without squaring the condition number
    g = np.linalg.lstsq(A, b, rcond=None)[0]
    return g.T if g.ndim > 1 else g


# ---------------------------------------------------------------------------
# time stepping


def _ghosts(U: np.ndarray, boundary: tuple[str, str]) -> tuple[np.ndarray, np.ndarray]:
    left = U[0].copy()
    right = U[-1].copy()
    if boundary[0] == "reflective":
        left[2:] *= -1.0
    if boundary[1] == "reflective":
        right[2:] *= -1.0
    return left, right


def facet_fluxes(U: np.ndarray, mesh: Mesh1D, eos: VdwMixture, config: SimConfig, star) -> tuple:
    """Fluxes through every node; the interface node carries one flux per side."""
    gl, gr = _ghosts(U, config.boundary)
    ext = np.vstack([gl, U, gr])
    lam = wave_speed(eos, ext)
    F = bulk_flux(ext[:-1], ext[1:], eos, np.maximum(lam[:-1], lam[1:]))
    u_star_minus, u_star_plus, s = star
    f_minus, f_plus = interface_flux(u_star_minus, u_star_plus, s)
    return F, f_minus, f_plus, float(lam.max())


def move_and_remesh(mesh: Mesh1D, s: float, dt: float, U: np.ndarray | None = None):
    """Shift the interface node by ``s dt`` and restore admissible cell widths.

    When ``U`` is given it is treated as already updated to the moved mesh and
    is merged (width-weighted averages) or copied on split together with the
    cells. Returns ``(mesh, U)``.
    """
    mesh = mesh.copy()
    nodes = mesh.nodes
    k = mesh.interface
    if s == 0.0:
        return mesh, (None if U is None else np.array(U, dtype=float))
    x_new = nodes[k] + s * dt
    if not nodes[0] < x_new < nodes[-1]:
        raise InterfaceExitError(f"interface reached the domain boundary at x = {x_new:.6g}")
    if not nodes[k - 1] < x_new < nodes[k + 1]:
        raise CflError("interface moved past a neighbouring node within one step")
    nodes[k] = x_new
    if U is not None:
        U = np.array(U, dtype=float)
    mesh, U = remesh(mesh, U)
    return mesh, U


def remesh(mesh: Mesh1D, U: np.ndarray | None):
    """Merge cells narrower than ``dx_min`` into a same-phase neighbour; split wide cells."""
    nodes = list(mesh.nodes)
    k = mesh.interface
    cells = None if U is None else [row for row in U]
    changed = True
    while changed:
        changed = False
        widths = np.diff(nodes)
        for i, w in enumerate(widths):
            liquid = i < k
            if w < mesh.dx_min * (1 - 1e-12):
                same = [j for j in (i - 1, i + 1) if 0 <= j < len(widths) and (j < k) == liquid]
                if not same:
                    raise SimulationError(f"cannot merge cell {i}: no same-phase neighbour")
                j = min(same, key=lambda c: widths[c])
                a, b = min(i, j), max(i, j)
                if cells is not None:
                    wa, wb = widths[a], widths[b]
                    cells[a] = (wa * cells[a] + wb * cells[b]) / (wa + wb)
                    del cells[b]
                del nodes[b]  # node between a and b
                if b <= k:
                    k -= 1
                changed = True
                break
            if w > mesh.dx_max * (1 + 1e-12):
                mid = 0.5 * (nodes[i] + nodes[i + 1])
                nodes.insert(i + 1, mid)
                if cells is not None:
                    cells.insert(i + 1, cells[i].copy())
                if i < k:
                    k += 1
                changed = True
                break
    mesh = replace(mesh, nodes=np.array(nodes), interface=k)
    return mesh, (None if cells is None else np.array(cells))


def check_phases(U: np.ndarray, mesh: Mesh1D, eos: VdwMixture) -> None:
    """Raise :class:`PhaseEscapeError` for the first cell outside its phase region."""
    try:
        codes = eos.phase_codes(U[:, 0], U[:, 1])
    except EosError:
        for i, row in enumerate(U):
            try:
                eos.phase_codes(row[0], row[1])
            except EosError as err:
                raise PhaseEscapeError(
                    i, mesh.centers[i], row, PHASE_BY_CODE[mesh.phases[i]].value, str(err)
                ) from err
        raise
    wrong = np.flatnonzero(codes != mesh.phases)
    if wrong.size:
        i = int(wrong[0])
        raise PhaseEscapeError(
            i, mesh.centers[i], U[i], PHASE_BY_CODE[mesh.phases[i]].value, PHASE_BY_CODE[codes[i]].value
        )


InterfaceSolver = Callable[[FullState, FullState, np.ndarray], tuple]


def frame_solver(micro) -> InterfaceSolver:
    """Wrap a rotated micro solver with the velocity-shift frame change."""

    def solve(U_minus: FullState, U_plus: FullState, n):
        res = interface_solve(U_minus, U_plus, n, micro)
        return res.U_minus, res.U_plus, res.s

    return solve


def hmm_step(mesh: Mesh1D, U: np.ndarray, solver: InterfaceSolver, eos: VdwMixture, config: SimConfig):
    """One explicit Euler step on the moving mesh.

    Returns ``(mesh, U, s)``.
    """
    k = mesh.interface
    U_minus = FullState(U[k - 1, :2], U[k - 1, 2:4].reshape(2, 1))
    U_plus = FullState(U[k, :2], U[k, 2:4].reshape(2, 1))
    S_minus, S_plus, s = solver(U_minus, U_plus, np.array([1.0]))
    u_star_minus = np.concatenate([S_minus.rho, S_minus.m[:, 0]])
    u_star_plus = np.concatenate([S_plus.rho, S_plus.m[:, 0]])
    F, f_minus, f_plus, lam = facet_fluxes(U, mesh, eos, config, (u_star_minus, u_star_plus, s))
    dt = config.dt
    if dt * max(lam, abs(s)) > mesh.dx_min * (1 + 1e-12):
        raise CflError(f"CFL violated: dt * {max(lam, abs(s)):.6g} m/s exceeds dx_min")
    w_old = mesh.widths
    # node velocities: only the interface node moves
    w_new = w_old.copy()
    w_new[k - 1] += s * dt
    w_new[k] -= s * dt
    # flux through each node in its own frame; split at the interface node
    F_right = F[1:].copy()  # right facet of each cell
    F_left = F[:-1].copy()  # left facet of each cell
    F_right[k - 1] = f_minus
    F_left[k] = f_plus
    S = source_terms(U, mesh, eos, config)
    conserved = w_old[:, None] * U - dt * (F_right - F_left) + dt * w_old[:, None] * S
    new_mesh, U_new = move_and_remesh(mesh, s, dt, conserved / w_new[:, None])
    check_phases(U_new, new_mesh, eos)
    return new_mesh, U_new, s


def totals(mesh: Mesh1D, U: np.ndarray) -> np.ndarray:
    """Domain integrals of ``(rho0, rho1, m0, m1)``."""
    return mesh.widths @ U


# ---------------------------------------------------------------------------
# driver


def write_snapshot(path, mesh: Mesh1D, U: np.ndarray, t: float, step: int) -> None:
    v = velocities(U)
    header = (
        f"t = {t!r} s; step = {step}; interface_x = {mesh.interface_x!r} m\n"
        "x_center[m] rho0[kg/m3] rho1[kg/m3] v0[m/s] v1[m/s] phase(0=liquid,1=vapor)"
    )
    data = np.column_stack([mesh.centers, U[:, 0], U[:, 1], v[:, 0], v[:, 1], mesh.phases])
    np.savetxt(path, data, header=header, fmt="%.17g")


def read_step(path) -> int:
    """Step number in the file name of a snapshot written by :func:`run_simulation`."""
    return int(os.path.basename(str(path))[len("snapshot_") : -len(".txt")])


def read_snapshot(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    meta = dict(part.strip().split(" = ") for part in first.lstrip("# ").split(";"))
    data = np.loadtxt(path)
    return {
        "t": float(meta["t"].split()[0]),
        "step": int(meta["step"]),
        "interface_x": float(meta["interface_x"].split()[0]),
        "x": data[:, 0],
        "rho": data[:, 1:3],
        "v": data[:, 3:5],
        "phase": data[:, 5].astype(int),
    }


@dataclass
class SimResult:
    mesh: Mesh1D
    U: np.ndarray
    times: np.ndarray
    interface: np.ndarray
    speeds: np.ndarray
    snapshots: list = field(default_factory=list)
    status: str = "completed"
    error: str = ""
    wall_time: float = 0.0


def run_simulation(
    config: SimConfig,
    solver: InterfaceSolver,
    initial: tuple = EXAMPLE_1,
    eos: VdwMixture | None = None,
    out_dir=None,
    n_steps: int | None = None,
    raise_errors: bool = False,
) -> SimResult:
    """Time loop with fixed ``dt``; writes snapshots and a trajectory when ``out_dir`` is set.

    Step errors stop the loop; the last good state is written as a snapshot
    and the result carries ``status='failed'`` (or ``'interface-exit'``).
    """
    eos = eos or default_eos()
    t0 = time.perf_counter()
    mesh = Mesh1D.uniform(config)
    U = project_initial_data(riemann_data(*initial, x0=config.interface_x), mesh)
    check_phases(U, mesh, eos)
    n_steps = config.n_steps if n_steps is None else n_steps
    times = [0.0]
    gamma = [mesh.interface_x]
    speeds = []
    snaps = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def snap(step):
        if out_dir:
            path = os.path.join(out_dir, f"snapshot_{step:08d}.txt")
            write_snapshot(path, mesh, U, step * config.dt, step)
            snaps.append(path)

    snap(0)
    status, error = "completed", ""
    step = 0
    for step in range(1, n_steps + 1):
        try:
            mesh, U, s = hmm_step(mesh, U, solver, eos, config)
        except InterfaceExitError as err:
            status, error = "interface-exit", str(err)
            step -= 1
            break
        except (SimulationError, EosError, ArithmeticError) as err:
            if raise_errors:
                raise
            status, error = "failed", f"step {step}: {type(err).__name__}: {err}"
            step -= 1
            break
        times.append(step * config.dt)
        gamma.append(mesh.interface_x)
        speeds.append(s)
        if config.snapshot_every and step % config.snapshot_every == 0 and step != n_steps:
            snap(step)
    last = read_step(snaps[-1]) if snaps else -1
    if step != last:
        snap(step)
    res = SimResult(
        mesh, U, np.array(times), np.array(gamma), np.array(speeds), snaps, status, error,
        time.perf_counter() - t0,
    )  # fmt: skip
    if out_dir:
        write_trajectory(os.path.join(out_dir, "interface_trajectory.csv"), res)
        write_run_manifest(os.path.join(out_dir, "run_manifest.json"), config, res)
    return res


def write_trajectory(path, res: SimResult) -> None:
    s = np.append(res.speeds, np.nan)
    with open(path, "w") as fh:
        fh.write("t[s],interface_x[m],s[m/s]\n")
        for t, g, v in zip(res.times, res.interface, s):
            fh.write(f"{float(t)!r},{float(g)!r},{float(v)!r}\n")


def write_run_manifest(path, config: SimConfig, res: SimResult) -> None:
    doc = {
        "config": asdict(config),
        "status": res.status,
        "error": res.error,
        "steps": int(len(res.times) - 1),
        "final_interface_x": float(res.interface[-1]),
        "snapshots": [os.path.basename(p) for p in res.snapshots],
        "wall_time_s": res.wall_time,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
