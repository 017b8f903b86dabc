"""Training data for the surrogate interface solver.

Inputs live in the 7-dimensional domain spanned by the liquid and vapour
partial densities (a convex 4-dimensional polytope), the vapour barycentric
velocity and the two relative velocities. The liquid barycentric velocity is
zero by construction of the shifted frame.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from .eos import EosError
from .frame import conservative_form
from .md.engine import MdError

INPUT_FIELDS = ("rho0_liq", "rho1_liq", "vrel_liq", "rho0_vap", "rho1_vap", "v_vap", "vrel_vap")
INPUT_UNITS = ("kg/m3", "kg/m3", "m/s", "kg/m3", "kg/m3", "m/s", "m/s")
OUTPUT_FIELDS = (
    "rho0_liq_star", "rho1_liq_star", "m0_liq_star", "m1_liq_star",
    "rho0_vap_star", "rho1_vap_star", "m0_vap_star", "m1_vap_star", "s",
)  # fmt: skip
OUTPUT_UNITS = ("kg/m3", "kg/m3", "kg/(m2 s)", "kg/(m2 s)") * 2 + ("m/s",)
N_IN = len(INPUT_FIELDS)
N_OUT = len(OUTPUT_FIELDS)
CANDIDATE_POOL = 64
DATASET_VERSION = "hmm-dataset v1"

#: density corners ``(rho0_vap, rho1_vap, rho0_liq, rho1_liq)`` [kg/m^3]
_VAP_CORNERS = ((1.0, 0.0), (0.0, 1.0), (162.996622, 0.0), (0.0, 30.960615))
_LIQ_CORNERS = ((1024.214739, 0.0), (0.0, 343.403446), (1616.252845, 0.0), (0.0, 509.380478))
DENSITY_CORNERS = np.array([v + q for v in _VAP_CORNERS for q in _LIQ_CORNERS])


class DatasetError(ValueError):
    exit_code = 40


class BoundsError(DatasetError):
    """Sampling bounds are empty or inconsistent."""


class DatasetFormatError(DatasetError):
    def __init__(self, line: int, column: str | None, msg: str):
        where = f"line {line}" + (f", column {column!r}" if column else "")
        super().__init__(f"{where}: {msg}")
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# input domain


class DensityHull:
    """Convex hull of density corner points, with a halfspace membership test."""

    def __init__(self, corners=DENSITY_CORNERS):
        self.corners = np.asarray(corners, dtype=float)
        hull = ConvexHull(self.corners)
        self.equations = hull.equations  # normal . x + offset <= 0 inside
        self.lower = self.corners.min(axis=0)
        self.upper = self.corners.max(axis=0)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        scale = np.maximum(np.abs(self.upper), 1.0).max()
        lhs = p @ self.equations[:, :-1].T + self.equations[:, -1]
        return np.all(lhs <= tol * scale, axis=1)

    def contains_lp(self, point) -> bool:
        """Independent check: is ``point`` a convex combination of the corners?"""
        k = len(self.corners)
        A_eq = np.vstack([self.corners.T, np.ones(k)])
        b_eq = np.append(np.asarray(point, dtype=float), 1.0)
        res = linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs")
        return bool(res.status == 0)


@dataclass(frozen=True)
class InputBounds:
    v_vap: tuple[float, float] = (-750.0, 750.0)
    v_rel: tuple[float, float] = (-500.0, 500.0)

    def __post_init__(self):
        for name in ("v_vap", "v_rel"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise BoundsError(f"{name} bounds {lo, hi} are empty")

    def box(self, hull: DensityHull) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the domain in input-field order."""
        # hull coordinates are ordered (rho0_vap, rho1_vap, rho0_liq, rho1_liq)
        lo = np.array([hull.lower[2], hull.lower[3], self.v_rel[0], hull.lower[0], hull.lower[1],
                       self.v_vap[0], self.v_rel[0]])  # fmt: skip
        hi = np.array([hull.upper[2], hull.upper[3], self.v_rel[1], hull.upper[0], hull.upper[1],
                       self.v_vap[1], self.v_rel[1]])  # fmt: skip
        return lo, hi


def _densities(samples: np.ndarray) -> np.ndarray:
    return samples[:, [3, 4, 0, 1]]


def in_domain(samples, bounds: InputBounds = InputBounds(), hull: DensityHull | None = None) -> np.ndarray:
    hull = hull or DensityHull()
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    ok = hull.contains(_densities(s))
    for col, (lo, hi) in ((2, bounds.v_rel), (5, bounds.v_vap), (6, bounds.v_rel)):
        ok &= (s[:, col] >= lo) & (s[:, col] <= hi)
    return ok & np.all(np.isfinite(s), axis=1)


def _uniform(n: int, rng, bounds: InputBounds, hull: DensityHull) -> np.ndarray:
    lo, hi = bounds.box(hull)
    out = np.empty((0, N_IN))
    while len(out) < n:
        cand = rng.uniform(lo, hi, size=(max(4 * (n - len(out)), 16), N_IN))
        out = np.vstack([out, cand[in_domain(cand, bounds, hull)]])
    return out[:n]


def sample_inputs(
    n: int, bounds: InputBounds = InputBounds(), seed: int = 0, pool: int = CANDIDATE_POOL
) -> np.ndarray:
    """Greedy best-candidate sampling of ``n`` points, shape ``(n, 7)``.

    Distances are Euclidean in the box-normalized unit cube.
    """
    if n < 1:
        raise BoundsError("sample count must be at least 1")
    hull = DensityHull()
    rng = np.random.default_rng(seed)
    lo, hi = bounds.box(hull)
    width = hi - lo
    chosen = np.empty((n, N_IN))
    chosen[0] = _uniform(1, rng, bounds, hull)[0]
    for k in range(1, n):
        cand = _uniform(pool, rng, bounds, hull)
        cn = (cand - lo) / width
        accepted = (chosen[:k] - lo) / width
        dist = np.min(np.linalg.norm(cn[:, None, :] - accepted[None, :, :], axis=2), axis=1)
        chosen[k] = cand[np.argmax(dist)]
    return chosen


def sample_uniform(n: int, bounds: InputBounds = InputBounds(), seed: int = 0) -> np.ndarray:
    """I.i.d. uniform samples of the domain (baseline for the sampler)."""
    return _uniform(n, np.random.default_rng(seed), bounds, DensityHull())


def min_pairwise_distance(samples, bounds: InputBounds = InputBounds()) -> float:
    lo, hi = bounds.box(DensityHull())
    x = (np.asarray(samples) - lo) / (hi - lo)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    d[np.diag_indices(len(x))] = np.inf
    return float(d.min())


def sample_to_states(sample) -> tuple[np.ndarray, np.ndarray]:
    """Rotated liquid and vapour 4-states ``(rho0, rho1, m0, m1)`` of a sample."""
    r0l, r1l, wl, r0v, r1v, vv, wv = np.asarray(sample, dtype=float)
    return conservative_form([r0l, r1l, 0.0, wl]), conservative_form([r0v, r1v, vv, wv])


# ---------------------------------------------------------------------------
# records


@dataclass
class DataRecord:
    inputs: np.ndarray  # (7,)
    outputs: np.ndarray  # (9,) nan if failed
    spread_min: np.ndarray  # (9,)
    spread_max: np.ndarray  # (9,)
    seeds: tuple[int, ...] = ()
    failed: bool = False
    cause: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(N_IN)
        for name in ("outputs", "spread_min", "spread_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(N_OUT))
        self.seeds = tuple(int(s) for s in self.seeds)

    def equals(self, other: "DataRecord") -> bool:
        arrs = ("inputs", "outputs", "spread_min", "spread_max")
        same = all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrs)
        return same and (self.seeds, self.failed, self.cause) == (other.seeds, other.failed, other.cause)


MicroRun = Callable[[np.ndarray, np.ndarray, int], np.ndarray]

#: error types that mark a record as failed instead of aborting the dataset
RECORD_ERRORS = (MdError, EosError, ArithmeticError)


def md_micro_run(params=None, table=None, eos=None) -> MicroRun:
    """Adapter calling the atomistic solver, returning the 9 outputs."""
    from .md.riemann import DATASET_PARAMS, solve_md_riemann

    params = params or DATASET_PARAMS

    def run(u_minus, u_plus, seed):
        return solve_md_riemann(u_minus, u_plus, params, seed=seed, table=table, eos=eos).as_vector()

    return run


def generate_record(sample, seeds: Sequence[int], micro: MicroRun | None = None) -> DataRecord:
    """Average of three micro-solver runs with distinct seeds."""
    if len(seeds) != 3:
        raise DatasetError("exactly three seeds are required")
    micro = micro or md_micro_run()
    u_minus, u_plus = sample_to_states(sample)
    outs = []
    nan = np.full(N_OUT, np.nan)
    for seed in seeds:
        try:
            y = np.asarray(micro(u_minus, u_plus, int(seed)), dtype=float).reshape(N_OUT)
        except RECORD_ERRORS as err:
            cause = f"seed {seed}: {type(err).__name__}: {err}"
            return DataRecord(sample, nan, nan, nan, tuple(seeds), True, cause)
        if not np.all(np.isfinite(y)):
            return DataRecord(sample, nan, nan, nan, tuple(seeds), True, f"seed {seed}: non-finite output")
        outs.append(y)
    outs = np.array(outs)
    return DataRecord(sample, outs.mean(axis=0), outs.min(axis=0), outs.max(axis=0), tuple(seeds))


def record_seeds(seed: int, n: int) -> list[tuple[int, int, int]]:
    """Three per-sample seeds forked from one stage seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [tuple(int(v) for v in c.generate_state(3, np.uint32)) for c in children]


def config_hash(obj) -> str:
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _work(args):
    sample, seeds, params = args
    return generate_record(sample, seeds, md_micro_run(params))


def generate_dataset(
    n: int,
    seed: int = 0,
    params=None,
    path=None,
    jobs: int = 1,
    bounds: InputBounds = InputBounds(),
    micro: MicroRun | None = None,
    progress: Callable[[int, DataRecord], None] | None = None,
) -> list[DataRecord]:
    """Sample inputs and build records; appends each record to ``path`` in order."""
    from .md.riemann import DATASET_PARAMS

    params = params or DATASET_PARAMS
    samples = sample_inputs(n, bounds, seed)
    seeds = record_seeds(seed, n)
    chash = config_hash({"md": asdict(params), "seed": seed, "n": n, "bounds": asdict(bounds)})
    fh = None
    if path is not None:
        fh = open(path, "w", newline="")
        fh.write(_header(chash))
    records = []
    try:
        if micro is not None or jobs <= 1:
            it = (generate_record(s, sd, micro or md_micro_run(params)) for s, sd in zip(samples, seeds))
            records = _drain(it, fh, progress)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                it = pool.map(_work, [(s, sd, params) for s, sd in zip(samples, seeds)])
                records = _drain(it, fh, progress)
    finally:
        if fh is not None:
            fh.close()
    return records


def _drain(it, fh, progress):
    out = []
    for k, rec in enumerate(it):
        out.append(rec)
        if fh is not None:
            fh.write(_format_row(rec))
            fh.flush()
        if progress is not None:
            progress(k, rec)
    return out


# ---------------------------------------------------------------------------
# persistence


def columns() -> list[str]:
    cols = [f"{n}[{u}]" for n, u in zip(INPUT_FIELDS, INPUT_UNITS)]
    cols += [f"{n}[{u}]" for n, u in zip(OUTPUT_FIELDS, OUTPUT_UNITS)]
    cols += [f"min_{n}[{u}]" for n, u in zip(OUTPUT_FIELDS, OUTPUT_UNITS)]
    cols += [f"max_{n}[{u}]" for n, u in zip(OUTPUT_FIELDS, OUTPUT_UNITS)]
    return cols + ["seeds", "failed", "cause"]


def _header(chash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {DATASET_VERSION}; units=SI; config={chash}\n")
    csv.writer(buf, lineterminator="\n").writerow(columns())
    return buf.getvalue()


def _format_row(rec: DataRecord) -> str:
    nums = np.concatenate([rec.inputs, rec.outputs, rec.spread_min, rec.spread_max])
    row = [repr(float(v)) for v in nums]
    row += [" ".join(str(s) for s in rec.seeds), "1" if rec.failed else "0", rec.cause]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()


def write_dataset(path, records: Sequence[DataRecord], chash: str = "none") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header(chash))
        for rec in records:
            fh.write(_format_row(rec))


def read_dataset(path, validate: bool = True) -> tuple[list[DataRecord], str]:
    """Records and config hash of a dataset file.

    With ``validate`` every input is re-checked against the sampling domain.
    """
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# {DATASET_VERSION};"):
        raise DatasetFormatError(1, None, "missing or unsupported dataset header")
    meta = dict(
        part.strip().split("=", 1) for part in lines[0][2:].split(";")[1:] if "=" in part
    )
    if meta.get("units") != "SI":
        raise DatasetFormatError(1, None, "dataset units must be SI")
    cols = columns()
    if len(lines) < 2 or next(csv.reader([lines[1]])) != cols:
        raise DatasetFormatError(2, None, "column header does not match")
    n_num = N_IN + 3 * N_OUT
    records = []
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row:
            continue
        if len(row) != len(cols):
            raise DatasetFormatError(lineno, None, f"expected {len(cols)} fields, got {len(row)}")
        vals = np.empty(n_num)
        for k in range(n_num):
            try:
                vals[k] = float(row[k])
            except ValueError:
                raise DatasetFormatError(lineno, cols[k], f"not a number: {row[k]!r}") from None
        try:
            seeds = tuple(int(s) for s in row[n_num].split())
        except ValueError:
            raise DatasetFormatError(lineno, "seeds", f"bad seed list {row[n_num]!r}") from None
        if row[n_num + 1] not in ("0", "1"):
            raise DatasetFormatError(lineno, "failed", f"flag must be 0 or 1, got {row[n_num + 1]!r}")
        a, b, c = N_IN, N_IN + N_OUT, N_IN + 2 * N_OUT
        rec = DataRecord(vals[:a], vals[a:b], vals[b:c], vals[c:], seeds, row[n_num + 1] == "1", row[n_num + 2])
        records.append(rec)
    if validate and records:
        ok = in_domain(np.array([r.inputs for r in records]))
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0]) + 3
            raise DatasetFormatError(bad, None, "input sample outside the sampling domain")
    return records, meta.get("config", "")


def usable(records: Sequence[DataRecord]) -> tuple[np.ndarray, np.ndarray]:
    """``(X, Y)`` arrays of the successful records."""
    good = [r for r in records if not r.failed]
    if not good:
        return np.empty((0, N_IN)), np.empty((0, N_OUT))
    return np.array([r.inputs for r in good]), np.array([r.outputs for r in good])
