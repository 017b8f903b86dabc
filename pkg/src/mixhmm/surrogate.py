"""Feed-forward surrogate of the atomistic interface solver.

The network maps the 7 shifted-frame inputs to 7 raw quantities
``(rho0-, rho1-, rho0+, rho1+, v0-, v1-, s)``. The vapour-side momenta follow
from per-component mass conservation across the moving interface,

    rho_a- (v_a- - s) = rho_a+ (v_a+ - s),

which in momentum form reads ``m_a+ = m_a- + s (rho_a+ - rho_a-)`` and holds
for every forward pass regardless of the weights.
"""

from __future__ import annotations

import csv
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .dataset import N_IN, N_OUT

N_RAW = 7
HIDDEN_LAYERS = 5
HIDDEN_WIDTH = 60
MODEL_VERSION = "mixhmm-surrogate v1"
#: softness of the density positivity map, relative to each field's raw scale
DENSITY_SOFTNESS = 0.05
#: vapour-side densities below this make the velocity closure singular [kg/m^3]
DENSITY_FLOOR = 1e-10
SCALE_FLOOR = 1e-6
#: initial weight scale of the output layer (initial prediction near the data mean)
OUTPUT_INIT_GAIN = 0.1
LN2 = float(np.log(2.0))
ACTIVATION = "shifted-softplus"


class SurrogateError(ValueError):
    exit_code = 50


class ConstraintSingularityError(SurrogateError):
    pass


class DivergenceError(SurrogateError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite in epoch {epoch}")
        self.epoch = epoch


class ModelFormatError(SurrogateError):
    pass


def softplus(z):
    return np.logaddexp(0.0, z)


def shifted_softplus(z):
    """Smooth rectifier with ``act(0) = 0``."""
    return np.logaddexp(0.0, z) - LN2


def soft_positive(z, k):
    """Smooth positive map ``(z + sqrt(z^2 + 4k^2)) / 2``; tail ``k^2/|z|`` for ``z -> -inf``."""
    root = np.sqrt(z * z + 4.0 * k * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = 2.0 * k * k / (root - z)
    return np.where(z >= 0, 0.5 * (z + root), neg)


def soft_positive_grad(z, k):
    return 0.5 * (1.0 + z / np.sqrt(z * z + 4.0 * k * k))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Normalization:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.mean.shape != self.scale.shape or np.any(self.scale <= 0):
            raise SurrogateError("normalization scales must be positive and match the means")

    @classmethod
    def fit(cls, data) -> "Normalization":
        data = np.asarray(data, dtype=float)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), SCALE_FLOOR))

    @classmethod
    def identity(cls, n: int) -> "Normalization":
        return cls(np.zeros(n), np.ones(n))


@dataclass
class NetworkParams:
    weights: list  # [(n_out, n_in)] per layer
    biases: list
    input_norm: Normalization
    raw_norm: Normalization
    output_norm: Normalization
    activation: str = ACTIVATION

    def __post_init__(self):
        if self.activation != ACTIVATION:
            raise SurrogateError(f"unsupported activation {self.activation!r}")
        n_prev = N_IN
        if len(self.weights) != len(self.biases):
            raise SurrogateError("weights and biases differ in length")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != n_prev or b.shape != (W.shape[0],):
                raise SurrogateError("inconsistent layer shapes")
            n_prev = W.shape[0]
        if n_prev != N_RAW:
            raise SurrogateError(f"last layer must have {N_RAW} outputs")
        if self.input_norm.mean.shape != (N_IN,) or self.raw_norm.mean.shape != (N_RAW,):
            raise SurrogateError("normalization sizes do not match the network")
        if self.output_norm.mean.shape != (N_OUT,):
            raise SurrogateError("output normalization must have 9 entries")

    @property
    def sizes(self) -> list[int]:
        return [N_IN] + [W.shape[0] for W in self.weights]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.input_norm,
            self.raw_norm,
            self.output_norm,
            self.activation,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, vec) -> None:
        k = 0
        for W, b in zip(self.weights, self.biases):
            for a in (W, b):
                a[...] = np.reshape(vec[k : k + a.size], a.shape)
                k += a.size


def init_params(
    seed: int = 0,
    input_norm: Normalization | None = None,
    raw_norm: Normalization | None = None,
    output_norm: Normalization | None = None,
    hidden: tuple[int, ...] = (HIDDEN_WIDTH,) * HIDDEN_LAYERS,
) -> NetworkParams:
    """Random weights (He-scaled normal, damped output layer), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [N_IN, *hidden, N_RAW]
    Ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    Ws[-1] *= OUTPUT_INIT_GAIN
    return NetworkParams(
        Ws,
        bs,
        input_norm or Normalization.identity(N_IN),
        raw_norm or Normalization.identity(N_RAW),
        output_norm or Normalization.identity(N_OUT),
    )


def zero_params(**norms) -> NetworkParams:
    p = init_params(**norms)
    for W, b in zip(p.weights, p.biases):
        W[...] = 0.0
        b[...] = 0.0
    return p


# ---------------------------------------------------------------------------
# forward pass


def _hidden_forward(params: NetworkParams, X: np.ndarray):
    """Normalized network output and the cached pre-activations."""
    a = (X - params.input_norm.mean) / params.input_norm.scale
    cache = [a]
    n = len(params.weights)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        if k < n - 1:
            cache.append(z)
            a = shifted_softplus(z)
        else:
            a = z
    return a, cache


def _softness(params: NetworkParams) -> np.ndarray:
    return DENSITY_SOFTNESS * params.raw_norm.scale[:4]


def _constraint(raw: np.ndarray, k):
    """Raw 7 quantities (denormalized) to the 9 outputs, plus intermediates."""
    rho = soft_positive(raw[:, :4], k)
    if np.any(rho[:, 2:4] < DENSITY_FLOOR):
        raise ConstraintSingularityError("vapour-side density fell below the closure floor")
    v0m, v1m, s = raw[:, 4], raw[:, 5], raw[:, 6]
    r0m, r1m, r0p, r1p = rho.T
    m0m = r0m * v0m
    m1m = r1m * v1m
    m0p = m0m + s * (r0p - r0m)
    m1p = m1m + s * (r1p - r1m)
    y = np.stack([r0m, r1m, m0m, m1m, r0p, r1p, m0p, m1p, s], axis=1)
    return y, rho


def raw_outputs(params: NetworkParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out, _ = _hidden_forward(params, X)
    return params.raw_norm.mean + params.raw_norm.scale * out


def forward_constrained(params: NetworkParams, X) -> np.ndarray:
    """9 outputs ``(u*-, u*+, s)`` for one 7-vector or a batch ``(n, 7)``."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    y, _ = _constraint(raw_outputs(params, X), _softness(params))
    return y[0] if single else y


def vapour_velocities(y) -> np.ndarray:
    """Vapour species velocities from the 9 outputs via the mass closure."""
    y = np.atleast_2d(y)
    s = y[:, 8]
    r0m, r1m, m0m, m1m, r0p, r1p = y[:, 0], y[:, 1], y[:, 2], y[:, 3], y[:, 4], y[:, 5]
    v0p = s + (m0m - r0m * s) / r0p
    v1p = s + (m1m - r1m * s) / r1p
    return np.stack([v0p, v1p], axis=1)


def mass_flux_residual(y) -> np.ndarray:
    """Per-component ``rho-(v- - s) - rho+(v+ - s)``, relative to the flux magnitude."""
    y = np.atleast_2d(y)
    s = y[:, 8]
    vp = vapour_velocities(y)
    out = []
    for a in (0, 1):
        rm, mm, rp = y[:, a], y[:, 2 + a], y[:, 4 + a]
        vm = mm / rm
        left = rm * (vm - s)
        right = rp * (vp[:, a] - s)
        mag = np.maximum.reduce([np.abs(left), np.abs(rm * s), np.abs(mm), np.abs(rp * s)])
        out.append(np.abs(left - right) / np.maximum(mag, 1e-300))
    return np.stack(out, axis=1)


# ---------------------------------------------------------------------------
# loss and gradient


def loss(params: NetworkParams, X, Y) -> float:
    y, _ = _constraint(raw_outputs(params, X), _softness(params))
    d = (y - Y) / params.output_norm.scale
    return float(np.mean(d * d))


def loss_and_grad(params: NetworkParams, X, Y):
    """Mean squared normalized error and its gradient as ``(dW list, db list)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out, cache = _hidden_forward(params, X)
    raw = params.raw_norm.mean + params.raw_norm.scale * out
    y, rho = _constraint(raw, _softness(params))
    sc = params.output_norm.scale
    d = (y - Y) / sc
    n_el = d.size
    L = float(np.mean(d * d))
    gy = 2.0 * d / sc / n_el

    v0m, v1m, s = raw[:, 4], raw[:, 5], raw[:, 6]
    r0m, r1m, r0p, r1p = rho.T
    g_rho = np.stack(
        [
            gy[:, 0] + (gy[:, 2] + gy[:, 6]) * v0m - gy[:, 6] * s,
            gy[:, 1] + (gy[:, 3] + gy[:, 7]) * v1m - gy[:, 7] * s,
            gy[:, 4] + gy[:, 6] * s,
            gy[:, 5] + gy[:, 7] * s,
        ],
        axis=1,
    )
    g_raw = np.empty_like(raw)
    g_raw[:, :4] = g_rho * soft_positive_grad(raw[:, :4], _softness(params))
    g_raw[:, 4] = (gy[:, 2] + gy[:, 6]) * r0m
    g_raw[:, 5] = (gy[:, 3] + gy[:, 7]) * r1m
    g_raw[:, 6] = gy[:, 8] + gy[:, 6] * (r0p - r0m) + gy[:, 7] * (r1p - r1m)

    delta = g_raw * params.raw_norm.scale
    n = len(params.weights)
    dWs = [None] * n
    dbs = [None] * n
    for k in range(n - 1, -1, -1):
        a_in = cache[0] if k == 0 else shifted_softplus(cache[k])
        dWs[k] = delta.T @ a_in
        dbs[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * sigmoid(cache[k])
    return L, dWs, dbs


def flat_grad(params: NetworkParams, X, Y) -> tuple[float, np.ndarray]:
    L, dWs, dbs = loss_and_grad(params, X, Y)
    return L, np.concatenate([a.ravel() for pair in zip(dWs, dbs) for a in pair])


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.03
    momentum: float = 0.95
    lr_decay: float = 1.0  # multiplicative per epoch
    val_fraction: float = 0.1  # 1200 of 12000
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise SurrogateError("epochs must be >= 0 and batch size >= 1")
        if not (self.learning_rate > 0 and 0 <= self.momentum < 1 and 0 < self.lr_decay <= 1):
            raise SurrogateError("invalid optimizer hyperparameters")
        if not 0 <= self.val_fraction < 1:
            raise SurrogateError("validation fraction must lie in [0, 1)")

    def split(self, n: int) -> tuple[int, int]:
        n_val = int(round(self.val_fraction * n))
        if n - n_val < 1:
            raise SurrogateError("no training records left after the split")
        return n - n_val, n_val


def raw_targets(Y) -> np.ndarray:
    """The 7 raw quantities implied by 9-output records (for normalization)."""
    Y = np.atleast_2d(Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        v0 = np.where(Y[:, 0] > 0, Y[:, 2] / Y[:, 0], 0.0)
        v1 = np.where(Y[:, 1] > 0, Y[:, 3] / Y[:, 1], 0.0)
    return np.column_stack([Y[:, 0], Y[:, 1], Y[:, 4], Y[:, 5], v0, v1, Y[:, 8]])


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)  # (epoch, train_mse, val_mse)
    best_epoch: int = 0

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for row in self.history:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


MIN_RECORDS = 10


def train(X, Y, config: TrainConfig = TrainConfig(), init: NetworkParams | None = None) -> TrainResult:
    """Mini-batch momentum gradient descent; keeps the best validation parameters.

    Without a validation split the best training loss decides.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) < MIN_RECORDS:
        raise SurrogateError(f"need at least {MIN_RECORDS} usable records, got {len(X)}")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(X))
    n_tr, n_val = config.split(len(X))
    tr, va = perm[:n_tr], perm[n_tr:]
    Xtr, Ytr = X[tr], Y[tr]
    if init is None:
        params = init_params(
            seed=config.seed,
            input_norm=Normalization.fit(Xtr),
            raw_norm=Normalization.fit(raw_targets(Ytr)),
            output_norm=Normalization.fit(Ytr),
        )
    else:
        params = init.copy()
    theta = params.flat()
    vel = np.zeros_like(theta)
    lr = config.learning_rate
    best = (np.inf, params.copy(), 0)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, config.batch_size):
            idx = order[start : start + config.batch_size]
            params.set_flat(theta)
            try:
                L, g = flat_grad(params, Xtr[idx], Ytr[idx])
            except ConstraintSingularityError:
                raise DivergenceError(epoch) from None
            if not np.isfinite(L) or not np.all(np.isfinite(g)):
                raise DivergenceError(epoch)
            vel = config.momentum * vel - lr * g
            theta = theta + vel
        params.set_flat(theta)
        try:
            tr_loss = loss(params, Xtr, Ytr)
            val_loss = loss(params, X[va], Y[va]) if n_val else tr_loss
        except ConstraintSingularityError:
            raise DivergenceError(epoch) from None
        if not (np.isfinite(tr_loss) and np.isfinite(val_loss)):
            raise DivergenceError(epoch)
        history.append((epoch, tr_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, params.copy(), epoch)
        lr *= config.lr_decay
    if config.epochs == 0:
        params.set_flat(theta)
        best = (np.nan, params.copy(), 0)
    return TrainResult(best[1], history, best[2])


# ---------------------------------------------------------------------------
# persistence


def save_params(params: NetworkParams, path) -> None:
    meta = {
        "version": MODEL_VERSION,
        "activation": params.activation,
        "sizes": params.sizes,
        "density_softness": DENSITY_SOFTNESS,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    for name in ("input_norm", "raw_norm", "output_norm"):
        norm = getattr(params, name)
        arrays[f"{name}_mean"] = norm.mean
        arrays[f"{name}_scale"] = norm.scale
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> NetworkParams:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != MODEL_VERSION:
                raise ModelFormatError(
                    f"model version {meta.get('version')!r} is incompatible with {MODEL_VERSION!r}"
                )
            if meta.get("density_softness") != DENSITY_SOFTNESS:
                raise ModelFormatError("model was built with a different density map")
            n = len(meta["sizes"]) - 1
            Ws = [data[f"W{k}"].copy() for k in range(n)]
            bs = [data[f"b{k}"].copy() for k in range(n)]
            norms = {
                name: Normalization(data[f"{name}_mean"].copy(), data[f"{name}_scale"].copy())
                for name in ("input_norm", "raw_norm", "output_norm")
            }
    except ModelFormatError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as err:
        raise ModelFormatError(f"cannot read model file {path}: {err}") from err
    return NetworkParams(Ws, bs, activation=meta["activation"], **norms)


# ---------------------------------------------------------------------------
# micro-solver adapter


class SurrogateMicro:
    """Rotated-frame micro solver backed by a trained network."""

    def __init__(self, params: NetworkParams):
        self.params = params

    @staticmethod
    def inputs(u_minus, u_plus) -> np.ndarray:
        from .frame import velocity_form

        wl = velocity_form(u_minus)
        wv = velocity_form(u_plus)
        return np.array([wl[0], wl[1], wl[3], wv[0], wv[1], wv[2], wv[3]])

    def __call__(self, u_minus, u_plus):
        y = forward_constrained(self.params, self.inputs(u_minus, u_plus))
        return y[:4], y[4:8], float(y[8])


def params_summary(params: NetworkParams) -> dict:
    return {"sizes": params.sizes, "activation": params.activation, "n_params": int(params.flat().size)}

