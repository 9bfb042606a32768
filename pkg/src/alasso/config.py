"""Experiment configuration and the builders it drives.

A configuration is a flat key=value file naming an operator, an analysis
dictionary, a synthetic signal source (or a vector file), the noise
level (either sigma directly or a target input PSNR, never both), a
lambda grid, and solver/risk knobs.  PSNR follows the convention

    psnr(a, ref) = 10 log10(peak^2 * len / ||a - ref||^2),
    peak = max(ref),

which generated problem files state in their metadata.  When no
explicit grid is given, sweeps use ``grid_count`` log-spaced values on
[1e-3, 1] times a data-driven lambda scale ||D+ phi* y||_inf.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from . import linops
from .fileio import read_kv, read_vector
from .solvers import SolverParams

OPERATORS = ("identity", "subsample", "subsample_rows", "partial_dct")
DICTIONARIES = ("identity", "finite_diff_1d", "finite_diff_2d", "haar")
SIGNALS = ("blocks", "spikes", "boxes2d", "file")
RISKS = ("pred", "proj", "est")

GRID_REL_MIN = 1e-3


@dataclass
class ExperimentConfig:
    operator: str = "identity"
    n: int | None = None
    height: int | None = None
    width: int | None = None
    factor: int = 2
    offset: int = 0
    q: int | None = None
    operator_seed: int = 0
    dictionary: str = "identity"
    levels: int = 3
    signal: str = "blocks"
    pieces: int = 8
    boxes: int = 3
    amplitude: float = 1.0
    signal_seed: int | None = None
    signal_path: str | None = None
    sigma: float | None = None
    target_psnr: float | None = None
    grid_min: float | None = None
    grid_max: float | None = None
    grid_count: int = 40
    grid_scale: str = "log"
    probes: int = 1
    seed: int = 0
    risks: tuple = ("proj",)
    max_iters: int = 20000
    tol: float = 1e-10
    accelerate: bool = False
    warm_start: bool = True

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}; "
                             f"choose from {OPERATORS}")
        if self.dictionary not in DICTIONARIES:
            raise ValueError(f"unknown dictionary {self.dictionary!r}; "
                             f"choose from {DICTIONARIES}")
        if self.signal not in SIGNALS:
            raise ValueError(f"unknown signal {self.signal!r}; "
                             f"choose from {SIGNALS}")
        if (self.sigma is None) == (self.target_psnr is None):
            raise ValueError(
                "exactly one of sigma and target_psnr must be given")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        bad = [r for r in self.risks if r not in RISKS]
        if bad:
            raise ValueError(f"unknown risk domains {bad}; "
                             f"choose from {RISKS}")
        if not self.risks:
            raise ValueError("at least one risk domain is required")
        if self.grid_scale not in ("log", "linear"):
            raise ValueError("grid_scale must be 'log' or 'linear'")
        if self.grid_count < 1:
            raise ValueError("grid_count must be at least 1")
        if (self.grid_min is None) != (self.grid_max is None):
            raise ValueError("grid_min and grid_max come as a pair")
        if self.grid_min is not None:
            if self.grid_min <= 0:
                raise ValueError("the lambda grid must be strictly positive")
            if self.grid_count > 1 and not self.grid_min < self.grid_max:
                raise ValueError("the lambda grid must be increasing")
            if self.grid_count == 1 and self.grid_min > self.grid_max:
                raise ValueError("grid_min exceeds grid_max")
        if self.probes < 0:
            raise ValueError("probes must be nonnegative")
        if self.factor < 1:
            raise ValueError("factor must be at least 1")
        if self.signal == "file" and not self.signal_path:
            raise ValueError("signal = file needs signal_path")


# Per-key value parsers; presence here is what makes a key legal.
def _as_bool(s):
    if s in ("true", "false"):
        return s == "true"
    raise ValueError(f"expected true/false, got {s!r}")


def _as_risks(s):
    if s == "all":
        return RISKS
    return tuple(part.strip() for part in s.split(",") if part.strip())


_PARSERS = {
    "operator": str, "n": int, "height": int, "width": int, "factor": int,
    "offset": int, "q": int, "operator_seed": int,
    "dictionary": str, "levels": int,
    "signal": str, "pieces": int, "boxes": int, "amplitude": float,
    "signal_seed": int, "signal_path": str,
    "sigma": float, "target_psnr": float,
    "grid_min": float, "grid_max": float, "grid_count": int,
    "grid_scale": str,
    "probes": int, "seed": int, "risks": _as_risks,
    "max_iters": int, "tol": float, "accelerate": _as_bool,
    "warm_start": _as_bool,
}


def config_from_mapping(mapping):
    """Build a config from string key=value pairs, rejecting unknown keys."""
    kwargs = {}
    for key, raw in mapping.items():
        parser = _PARSERS.get(key)
        if parser is None:
            raise ValueError(f"unknown configuration key {key!r}")
        try:
            kwargs[key] = parser(raw)
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from exc
    return ExperimentConfig(**kwargs)


def load_config(path):
    return config_from_mapping(read_kv(path))


def solver_params(config):
    return SolverParams(max_iters=config.max_iters, tol=config.tol,
                        accelerate=config.accelerate)


# -- geometry ----------------------------------------------------------------

def signal_shape(config):
    """Shape of the ground-truth signal: (h, w) for images, (n,) else."""
    if config.height is not None or config.width is not None:
        if config.height is None or config.width is None:
            raise ValueError("height and width come as a pair")
        if config.n is not None and config.n != config.height * config.width:
            raise ValueError("n disagrees with height * width")
        return (config.height, config.width)
    if config.n is None:
        raise ValueError("the configuration fixes no signal size: give "
                         "n or height/width")
    return (config.n,)


def _signal_size(config):
    return int(np.prod(signal_shape(config)))


def build_operator(config):
    n = _signal_size(config)
    kind = config.operator
    if kind == "identity":
        return linops.identity(n)
    if kind == "subsample":
        return linops.subsample(n, config.factor, config.offset)
    if kind == "subsample_rows":
        h, w = signal_shape(config)
        return linops.subsample_rows(h, w, config.factor, config.offset)
    if kind == "partial_dct":
        if config.q is None:
            raise ValueError("partial_dct needs q")
        return linops.partial_dct(n, config.q, config.operator_seed)
    raise ValueError(f"unknown operator {kind!r}")


def build_dictionary(config):
    n = _signal_size(config)
    kind = config.dictionary
    if kind == "identity":
        return linops.identity_dict(n)
    if kind == "finite_diff_1d":
        return linops.finite_diff_1d(n)
    if kind == "finite_diff_2d":
        h, w = signal_shape(config)
        return linops.finite_diff_2d(h, w)
    if kind == "haar":
        return linops.haar_shift_invariant(n, config.levels)
    raise ValueError(f"unknown dictionary {kind!r}")


# -- synthetic signals --------------------------------------------------------

def _blocks(n, pieces, amplitude, rng):
    # piecewise-constant nonnegative signal with `pieces` segments
    pieces = max(1, min(int(pieces), n))
    if pieces > 1:
        cuts = np.sort(rng.choice(np.arange(1, n), size=pieces - 1,
                                  replace=False))
    else:
        cuts = np.zeros(0, dtype=int)
    bounds = np.concatenate([[0], cuts, [n]])
    x = np.empty(n)
    for a, b in zip(bounds[:-1], bounds[1:]):
        x[a:b] = amplitude * rng.uniform(0.1, 1.0)
    return x


def _spikes(n, pieces, amplitude, rng):
    x = np.zeros(n)
    idx = rng.choice(n, size=min(int(pieces), n), replace=False)
    x[idx] = amplitude * rng.uniform(0.5, 1.0, size=idx.size)
    return x


def _boxes2d(h, w, boxes, amplitude, rng):
    # flat background plus overwriting rectangles: piecewise constant in
    # both directions, the cartoon class total variation favors
    img = np.full((h, w), 0.1 * amplitude)
    for _ in range(int(boxes)):
        top = int(rng.integers(0, max(1, h - 2)))
        left = int(rng.integers(0, max(1, w - 2)))
        bh = int(rng.integers(2, max(3, h // 2 + 1)))
        bw = int(rng.integers(2, max(3, w // 2 + 1)))
        img[top:top + bh, left:left + bw] = amplitude * rng.uniform(0.2, 1.0)
    return img


def build_signal(config):
    """Ground-truth signal in the configured shape, deterministic in seed."""
    shape = signal_shape(config)
    if config.signal == "file":
        x = read_vector(config.signal_path)
        if x.size != int(np.prod(shape)):
            raise ValueError(
                f"signal file holds {x.size} samples, config wants {shape}")
        return x.reshape(shape)
    seed = config.signal_seed if config.signal_seed is not None \
        else config.seed
    rng = np.random.default_rng(seed)
    if config.signal == "blocks":
        return _blocks(int(np.prod(shape)), config.pieces, config.amplitude,
                       rng).reshape(shape)
    if config.signal == "spikes":
        return _spikes(int(np.prod(shape)), config.pieces, config.amplitude,
                       rng).reshape(shape)
    if config.signal == "boxes2d":
        if len(shape) != 2:
            raise ValueError("boxes2d needs height and width")
        return _boxes2d(shape[0], shape[1], config.boxes, config.amplitude,
                        rng)
    raise ValueError(f"unknown signal {config.signal!r}")


# -- PSNR and the lambda grid --------------------------------------------------

def psnr(a, ref, peak=None):
    """Peak signal-to-noise ratio of a against a reference.

    Convention: 10 log10(peak^2 * len / ||a - ref||^2) with
    peak = max(ref) unless given.  Infinite when a equals ref.
    """
    a = np.asarray(a, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if a.size != ref.size or a.size == 0:
        raise ValueError("psnr needs two equal nonzero-length arrays")
    peak = float(np.max(ref)) if peak is None else float(peak)
    if peak <= 0:
        raise ValueError("psnr needs a positive reference peak")
    err = float(np.sum((a - ref) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak * a.size / err)


def lambda_max_heuristic(phi, dictionary, y, iters=2000):
    """Scale heuristic ||D+ phi* y||_inf for the top of the lambda grid.

    The least-squares coefficients are computed matrix-free; D need not
    have full rank, the minimum-norm solution is enough for a scale.
    """
    v = phi.adjoint(np.asarray(y, dtype=float).ravel())
    base = dictionary.base
    op = LinearOperator((base.rows, base.cols), matvec=base.apply,
                        rmatvec=base.adjoint)
    alpha = lsqr(op, v, atol=1e-10, btol=1e-10, iter_lim=iters)[0]
    amax = float(np.max(np.abs(alpha))) if alpha.size else 0.0
    if amax <= 0.0:
        raise ValueError("lambda scale heuristic degenerated to zero; "
                         "give grid_min and grid_max explicitly")
    return amax


def lambda_grid(config, lam_max=None):
    """The lambda grid as an increasing positive array.

    Explicit grid_min/grid_max take precedence; otherwise the grid spans
    [GRID_REL_MIN, 1] times lam_max, which the caller computes from data.
    """
    if config.grid_min is not None:
        lo, hi = config.grid_min, config.grid_max
    else:
        if lam_max is None:
            raise ValueError("relative grid needs the lambda scale")
        lo, hi = GRID_REL_MIN * lam_max, lam_max
    count = config.grid_count
    if count == 1:
        return np.array([lo], dtype=float)
    if config.grid_scale == "log":
        grid = np.geomspace(lo, hi, count)
    else:
        grid = np.linspace(lo, hi, count)
    if not (grid[0] > 0 and np.all(np.diff(grid) > 0)):
        raise ValueError("degenerate lambda grid")
    return grid


def with_overrides(config, **kwargs):
    """A copy of the config with the given fields replaced."""
    live = {k: v for k, v in kwargs.items() if v is not None}
    return dataclasses.replace(config, **live) if live else config
