"""Gaussian-process boundary functions wrapped around the genome perimeter, and dataset I/O.

Kernels are evaluated on the chordal distance between perimeter points, i.e.
the Euclidean distance after mapping the perimeter onto a circle of the same
length. That keeps samples continuous across the seam and keeps the covariance
positive definite for any lengthscale; the arc distance itself does not (the
squared exponential of the wrapped arc distance is indefinite once the
lengthscale is a sizeable fraction of the perimeter).
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import ContractError, FormatError, NumericalError
from .fd import NumericGenomeSolver
from .field import DEFAULT_N_PER_EDGE, BoundaryTrace

FORMAT_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    family: str = "squared_exponential"
    variance: float = 1.0
    lengthscale: float = 1.0
    power: float = 2.0
    jitter: float = 1e-10

    def __post_init__(self):
        if self.family not in ("squared_exponential", "power_exponential"):
            raise ContractError(f"unknown kernel family {self.family!r}")
        if self.variance <= 0 or self.lengthscale <= 0 or self.jitter <= 0:
            raise ContractError("variance, lengthscale and jitter must be positive")
        if not 1.0 <= self.power <= 2.0:
            raise ContractError("power must lie in [1, 2]")


def periodic_distance(s, t, perimeter: float):
    d = np.abs(np.asarray(s, dtype=float) - np.asarray(t, dtype=float)) % perimeter
    return np.minimum(d, perimeter - d)


def chordal_distance(s, t, perimeter: float):
    d = periodic_distance(s, t, perimeter)
    return (perimeter / np.pi) * np.sin(np.pi * d / perimeter)


def kernel_eval(spec: KernelSpec, s, t, l: float = 1.0):
    r = chordal_distance(s, t, 4.0 * l)
    if spec.family == "squared_exponential":
        return spec.variance * np.exp(-0.5 * (r / spec.lengthscale) ** 2)
    return spec.variance * np.exp(-((r / spec.lengthscale) ** spec.power))


def covariance(spec: KernelSpec, n_per_edge: int = DEFAULT_N_PER_EDGE, l: float = 1.0) -> np.ndarray:
    s = np.arange(4 * n_per_edge) * (l / n_per_edge)
    return kernel_eval(spec, s[:, None], s[None, :], l)


def sample_trace(spec: KernelSpec, n_per_edge: int = DEFAULT_N_PER_EDGE, seed=0, l: float = 1.0) -> BoundaryTrace:
    """Draw one zero-mean GP sample at the trace arclengths.

    The jitter is relative to the variance, so a vanishing prior gives a vanishing sample.
    Cholesky failures escalate the jitter tenfold up to three times.
    """
    cov = covariance(spec, n_per_edge, l)
    eye = np.eye(cov.shape[0])
    jitter = spec.jitter * spec.variance
    for _ in range(4):
        try:
            chol = np.linalg.cholesky(cov + jitter * eye)
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    else:
        raise NumericalError(f"covariance not positive definite even with jitter {jitter / 10.0:g}")
    z = np.random.default_rng(seed).standard_normal(cov.shape[0])
    return BoundaryTrace(chol @ z, l)


@dataclass(frozen=True)
class HyperRanges:
    """Sobol-sampled kernel hyperparameter box (lengthscale in perimeter arclength units)."""

    lengthscale: tuple[float, float] = (0.3, 3.0)
    variance: tuple[float, float] = (0.25, 4.0)
    family: str = "squared_exponential"
    power: tuple[float, float] = (1.0, 2.0)
    jitter: float = 1e-10

    def __post_init__(self):
        for name in ("lengthscale", "variance"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ContractError(f"{name} range must satisfy 0 < low <= high, got ({lo}, {hi})")
        lo, hi = self.power
        if not 1.0 <= lo <= hi <= 2.0:
            raise ContractError(f"power range must lie in [1, 2], got ({lo}, {hi})")


def sobol_points(n: int, dim: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two counts are fine here
        return sampler.random(n)


def kernel_specs(n: int, ranges: HyperRanges, seed: int) -> list[KernelSpec]:
    dim = 3 if ranges.family == "power_exponential" else 2
    pts = sobol_points(n, dim, seed)
    specs = []
    for p in pts:
        ell = ranges.lengthscale[0] + p[0] * (ranges.lengthscale[1] - ranges.lengthscale[0])
        var = ranges.variance[0] + p[1] * (ranges.variance[1] - ranges.variance[0])
        power = 2.0
        if dim == 3:
            # [low, high) so the power-exponential never degenerates to the smooth case
            power = ranges.power[0] + p[2] * (ranges.power[1] - ranges.power[0])
        specs.append(KernelSpec(ranges.family, var, ell, power, ranges.jitter))
    return specs


@dataclass
class TrainingSample:
    trace: BoundaryTrace
    data_points: np.ndarray  # (n, 3): x, y, u in genome-local coordinates
    sample_id: int


@dataclass
class Dataset:
    samples: list[TrainingSample]
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def traces(self) -> np.ndarray:
        return np.stack([s.trace.values for s in self.samples])

    def data_arrays(self) -> np.ndarray:
        return np.stack([s.data_points for s in self.samples])


def _sample_seeds(seed: int, k: int):
    ss = np.random.SeedSequence([seed, k])
    trace_seed, point_seed = ss.spawn(2)
    return trace_seed, point_seed


def generate_samples(
    n_samples: int,
    ranges: HyperRanges | None = None,
    n_data_points: int = 100,
    n_per_edge: int = DEFAULT_N_PER_EDGE,
    seed: int = 0,
    edge_length: float = 1.0,
) -> tuple[list[TrainingSample], list[KernelSpec]]:
    ranges = ranges or HyperRanges()
    n_interior = (n_per_edge - 1) ** 2
    if n_data_points > n_interior:
        raise ContractError(f"n_data_points={n_data_points} exceeds the {n_interior} interior vertices")
    specs = kernel_specs(n_samples, ranges, seed)
    solver = NumericGenomeSolver()
    h = edge_length / n_per_edge
    samples = []
    for k, spec in enumerate(specs):
        trace_seed, point_seed = _sample_seeds(seed, k)
        trace = sample_trace(spec, n_per_edge, trace_seed, edge_length)
        field_vals = solver(trace).values
        pick = np.random.default_rng(point_seed).choice(n_interior, size=n_data_points, replace=False)
        jj, ii = np.divmod(pick, n_per_edge - 1)
        ii, jj = ii + 1, jj + 1
        pts = np.stack([ii * h, jj * h, field_vals[jj, ii]], axis=1)
        samples.append(TrainingSample(trace, pts, k))
    return samples, specs


def generate_dataset(
    out_dir,
    n_samples: int,
    ranges: HyperRanges | None = None,
    n_data_points: int = 100,
    n_per_edge: int = DEFAULT_N_PER_EDGE,
    seed: int = 0,
    edge_length: float = 1.0,
) -> Dataset:
    """Generate ``n_samples`` GP boundary traces with solved interior data and write them to ``out_dir``.

    Layout: ``manifest.json`` plus ``samples.bin``, consecutive little-endian float64
    records of ``4 * n_per_edge`` trace values followed by ``n_data_points`` (x, y, u) triples.
    """
    ranges = ranges or HyperRanges()
    samples, _ = generate_samples(n_samples, ranges, n_data_points, n_per_edge, seed, edge_length)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_samples": n_samples,
        "n_bc": 4 * n_per_edge,
        "n_per_edge": n_per_edge,
        "n_data_points": n_data_points,
        "resolution": n_per_edge + 1,
        "genome_edge_length": edge_length,
        "seed": seed,
        "ranges": asdict(ranges),
        "record_layout": "trace[n_bc] then data[n_data_points][x, y, u], float64 little-endian",
    }
    dataset = Dataset(samples, manifest)
    if out_dir is not None:
        write_dataset(dataset, out_dir)
    return dataset


def write_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = b"".join(
        np.concatenate([s.trace.values, s.data_points.ravel()]).astype("<f8").tobytes() for s in dataset.samples
    )
    (out / "samples.bin").write_bytes(blob)
    manifest = dict(dataset.manifest)
    manifest["samples_sha256"] = hashlib.sha256(blob).hexdigest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    dataset.manifest = manifest


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        raw = (path / "samples.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read dataset at {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"dataset format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    n_bc, n_data, n = manifest["n_bc"], manifest["n_data_points"], manifest["n_samples"]
    rec = n_bc + 3 * n_data
    if len(raw) != 8 * rec * n:
        raise FormatError(f"samples.bin holds {len(raw)} bytes, expected {8 * rec * n}")
    arr = np.frombuffer(raw, dtype="<f8").reshape(n, rec)
    l = manifest.get("genome_edge_length", 1.0)
    samples = [
        TrainingSample(BoundaryTrace(arr[k, :n_bc].copy(), l), arr[k, n_bc:].reshape(n_data, 3).copy(), k)
        for k in range(n)
    ]
    return Dataset(samples, manifest)
