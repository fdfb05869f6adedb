"""Sample paths for the price processes used throughout the package.

Every generator is a pure function of ``(spec, grid, seed)``.  Batches are
returned as a :class:`Path` whose ``values`` has shape ``(n_paths, N + 1)``;
a single path has shape ``(N + 1,)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
from scipy import integrate

from . import _accel
from ._io import format_number

# -- grid and path ---------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"steps N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t: float) -> int:
        """First grid index whose time is >= t (clipped to the grid)."""
        if t <= 0:
            return 0
        return min(int(math.ceil(t / self.dt - 1e-9)), self.N)

    def steps_for(self, h: float) -> int:
        """Smallest number of steps spanning at least ``h``."""
        if h <= 0:
            return 0
        return int(math.ceil(h / self.dt - 1e-9))


@dataclass(frozen=True)
class Path:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim not in (1, 2) or v.shape[-1] != self.grid.N + 1:
            raise ValueError(f"values must end in an axis of length {self.grid.N + 1}, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def is_batch(self) -> bool:
        return self.values.ndim == 2

    @property
    def n_paths(self) -> int:
        return self.values.shape[0] if self.is_batch else 1

    def batch(self) -> np.ndarray:
        """Values as a 2-D array, one row per path."""
        return self.values if self.is_batch else self.values[None, :]

    def __getitem__(self, i) -> "Path":
        return Path(self.grid, self.batch()[i])

    def to_csv(self, file, header: Optional[list[str]] = None) -> None:
        write_paths_csv(file, self.grid, [self.values] if not self.is_batch else list(self.values), header)


@dataclass(frozen=True)
class QVPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def write_paths_csv(file, grid: TimeGrid, columns: list[np.ndarray], header: Optional[list[str]] = None) -> None:
    """CSV with a leading ``t`` column and 12 significant digits in fixed-point notation."""
    if header is None:
        header = ["value"] if len(columns) == 1 else [f"value_{k}" for k in range(len(columns))]
    if len(header) != len(columns):
        raise ValueError("header and columns differ in length")
    t = grid.times
    lines = [",".join(["t", *header])]
    for i in range(grid.N + 1):
        lines.append(",".join([format_number(t[i])] + [format_number(c[i]) for c in columns]))
    text = "\n".join(lines) + "\n"
    if hasattr(file, "write"):
        file.write(text)
    else:
        with open(file, "w", newline="") as fh:
            fh.write(text)


def _rng(seed) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is mandatory")
    return np.random.default_rng(seed)


def _normals(rng: np.random.Generator, n_paths: int, n: int) -> np.ndarray:
    return rng.standard_normal((n_paths, n))


def _wrap(grid: TimeGrid, values: np.ndarray, n_paths: Optional[int]) -> Path:
    return Path(grid, values if n_paths is not None else values[0])


# -- Brownian motion -------------------------------------------------------


def brownian_values(grid: TimeGrid, rng: np.random.Generator, n_paths: int) -> np.ndarray:
    out = np.zeros((n_paths, grid.N + 1))
    np.cumsum(_normals(rng, n_paths, grid.N) * math.sqrt(grid.dt), axis=1, out=out[:, 1:])
    return out


def sample_brownian(grid: TimeGrid, seed: int, n_paths: Optional[int] = None) -> Path:
    return _wrap(grid, brownian_values(grid, _rng(seed), n_paths or 1), n_paths)


# -- fractional Brownian motion -------------------------------------------


def fbm_covariance(H: float, s, t):
    """Cov(B^H_s, B^H_t) with Var(B^H_t) = t^{2H}."""
    s = np.abs(np.asarray(s, dtype=float))
    t = np.abs(np.asarray(t, dtype=float))
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))


def _check_hurst(H: float) -> None:
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst exponent must lie in (0, 1), got {H}")


def _fgn_autocov(H: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    return 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


class CirculantEmbeddingError(RuntimeError):
    pass


def _davies_harte_eigs(H: float, n: int) -> np.ndarray:
    gamma = _fgn_autocov(H, n)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigs = np.fft.fft(row).real
    if eigs.min() < -1e-10 * abs(eigs).max():
        raise CirculantEmbeddingError(f"circulant embedding not PSD (min eigenvalue {eigs.min():.3e})")
    return np.clip(eigs, 0.0, None)


def _fbm_davies_harte(H: float, grid: TimeGrid, rng, n_paths: int) -> np.ndarray:
    n = grid.N
    eigs = _davies_harte_eigs(H, n)
    m = eigs.size
    z = rng.standard_normal((n_paths, m)) + 1j * rng.standard_normal((n_paths, m))
    fgn = np.fft.fft(np.sqrt(eigs / m) * z, axis=1).real[:, :n]
    out = np.zeros((n_paths, n + 1))
    np.cumsum(fgn * grid.dt**H, axis=1, out=out[:, 1:])
    return out


def _fbm_cholesky(H: float, grid: TimeGrid, rng, n_paths: int) -> np.ndarray:
    t = grid.times[1:]
    cov = fbm_covariance(H, t[:, None], t[None, :])
    chol = np.linalg.cholesky(cov)
    out = np.zeros((n_paths, grid.N + 1))
    out[:, 1:] = _normals(rng, n_paths, grid.N) @ chol.T
    return out


def fbm_values(H: float, grid: TimeGrid, rng, n_paths: int, method: str = "davies-harte") -> np.ndarray:
    _check_hurst(H)
    if method == "exact-cholesky":
        return _fbm_cholesky(H, grid, rng, n_paths)
    if method != "davies-harte":
        raise ValueError(f"unknown fBm method {method!r}")
    try:
        return _fbm_davies_harte(H, grid, rng, n_paths)
    except CirculantEmbeddingError as exc:
        warnings.warn(f"Davies-Harte failed ({exc}); falling back to exact Cholesky", RuntimeWarning)
        return _fbm_cholesky(H, grid, rng, n_paths)


def sample_fbm(
    H: float, grid: TimeGrid, seed: int, method: str = "davies-harte", n_paths: Optional[int] = None
) -> Path:
    """Fractional Brownian motion normalized so that ``Var(B^H_t) = t^{2H}``.

    ``method`` is ``"davies-harte"`` (circulant embedding of fractional
    Gaussian noise, O(N log N)) or ``"exact-cholesky"``.  A circulant that
    is not positive semi-definite falls back to Cholesky with a
    ``RuntimeWarning``.
    """
    return _wrap(grid, fbm_values(H, grid, _rng(seed), n_paths or 1, method), n_paths)


# -- Gaussian moving averages ---------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """A moving-average kernel ``phi`` vanishing on the negative axis.

    ``v``/``psi`` are set when ``phi(t) = v + int_0^t psi`` (the semimartingale form).
    """

    phi: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    v: Optional[float] = None
    psi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    H: Optional[float] = None

    @property
    def semimartingale_form(self) -> bool:
        return self.v is not None and self.psi is not None

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(t > 0, self.phi(np.where(t > 0, t, 1.0)), 0.0)
        return out

    @classmethod
    def fbm(cls, H: float) -> "KernelSpec":
        _check_hurst(H)
        return cls(lambda t: t ** (H - 0.5), name=f"power(H={H})", H=H)

    @classmethod
    def brownian(cls) -> "KernelSpec":
        return cls(lambda t: np.ones_like(t), name="indicator", v=1.0, psi=lambda t: np.zeros_like(t))

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls(lambda t: np.zeros_like(t), name="zero", v=0.0, psi=lambda t: np.zeros_like(t))


def c_h_squared(H: float) -> float:
    """Variance constant of the power-kernel moving average at t = 1 (squared integrand)."""
    _check_hurst(H)
    if H == 0.5:
        return 1.0
    g = lambda u: ((1 + u) ** (H - 0.5) - u ** (H - 0.5)) ** 2
    tail, _ = integrate.quad(g, 1.0, np.inf, limit=200)
    head, _ = integrate.quad(g, 0.0, 1.0, limit=200)
    return 1.0 / (2 * H) + head + tail


def moving_average_matrix(kernel: KernelSpec, grid: TimeGrid, L: float) -> np.ndarray:
    """Weights ``A[i, k]`` with ``Y_{t_i} = sum_k A[i, k] dW_k`` on the driver grid ``[-L, T]``.

    Midpoint rule on cells of width dt; the past is truncated at ``-L``.
    """
    dt = grid.dt
    n_past = int(math.ceil(L / dt - 1e-9))
    mids = (np.arange(-n_past, grid.N) + 0.5) * dt
    t = grid.times
    a = kernel(t[:, None] - mids[None, :]) - kernel(-mids)[None, :]
    a[mids[None, :] > t[:, None]] = 0.0
    return a


def kernel_l2_check(kernel: KernelSpec, grid: TimeGrid, L: float) -> float:
    """Squared L2 norm of ``phi(T - .) - phi(-.)`` on ``[-L, T]``.

    Raises if the value is not finite or still grows by more than 25% when the
    cells are refined fourfold (a midpoint sum stays finite even for kernels
    that are not square-integrable).
    """
    val = float(np.sum(moving_average_matrix(kernel, grid, L)[-1] ** 2) * grid.dt)
    fine = TimeGrid(grid.T, 4 * grid.N)
    val4 = float(np.sum(moving_average_matrix(kernel, fine, L)[-1] ** 2) * fine.dt)
    if not (math.isfinite(val) and math.isfinite(val4)) or val4 > 1.25 * val + 1e-300:
        raise ValueError(f"kernel {kernel.name} is not square-integrable on [-{L}, {grid.T}]")
    return val


def truncation_self_check(kernel: KernelSpec, grid: TimeGrid, L: float) -> float:
    """Change in Var(Y_T) when the truncation length doubles."""
    return kernel_l2_check(kernel, grid, 2 * L) - kernel_l2_check(kernel, grid, L)


def sample_moving_average(
    kernel: KernelSpec,
    grid: TimeGrid,
    seed: int,
    L: Optional[float] = None,
    n_paths: Optional[int] = None,
) -> Path:
    L = 10.0 * grid.T if L is None else L
    if L <= 0:
        raise ValueError("left truncation must be positive")
    kernel_l2_check(kernel, grid, L)
    a = moving_average_matrix(kernel, grid, L)
    rng = _rng(seed)
    dw = _normals(rng, n_paths or 1, a.shape[1]) * math.sqrt(grid.dt)
    return _wrap(grid, dw @ a.T, n_paths)


# -- Ito and Tanaka examples ----------------------------------------------


def ito_quadratic_values(b: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Left-point Euler sum of ``int B dB`` plus ``t``."""
    x = np.zeros_like(b)
    np.cumsum(b[:, :-1] * np.diff(b, axis=1), axis=1, out=x[:, 1:])
    return x + grid.times[None, :]


def sample_ito_quadratic(grid: TimeGrid, seed: int, n_paths: Optional[int] = None) -> tuple[Path, Path]:
    b = brownian_values(grid, _rng(seed), n_paths or 1)
    return _wrap(grid, ito_quadratic_values(b, grid), n_paths), _wrap(grid, b, n_paths)


def sample_tanaka(
    grid: TimeGrid, seed: int, cap: Optional[float] = None, n_paths: Optional[int] = None
) -> tuple[Path, Path, Path]:
    """``(|B|, L, M)`` with ``M`` the sign integral (sign(0) = -1) and ``L = |B| - M``.

    With ``cap`` the first path is ``M_t + L_{t ^ tau}``, ``tau`` the first time ``L`` exceeds the cap.
    """
    if cap is not None and cap <= 0:
        raise ValueError("cap must be positive")
    b = brownian_values(grid, _rng(seed), n_paths or 1)
    mart, loc, capped = _accel.tanaka(b, math.inf if cap is None else cap)
    first = np.abs(b) if cap is None else capped
    return _wrap(grid, first, n_paths), _wrap(grid, loc, n_paths), _wrap(grid, mart, n_paths)


# -- bounded perturbations and integrands ---------------------------------


@dataclass(frozen=True)
class VSpec:
    """A bounded adapted perturbation ``V``; output is clipped to ``[-bound, bound]``.

    kinds: ``zero``, ``constant`` (``value``), ``sine`` (``amplitude * sin(2 pi freq t)``),
    ``clipped_path`` (``scale * driver``), ``sine_path`` (``amplitude * sin(scale * driver)``).
    """

    kind: str = "zero"
    bound: float = 0.0
    value: float = 0.0
    amplitude: float = 1.0
    freq: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sine", "clipped_path", "sine_path"):
            raise ValueError(f"unknown V kind {self.kind!r}")
        if not (self.bound >= 0 and math.isfinite(self.bound)):
            raise ValueError("V needs a finite nonnegative bound")
        if self.kind == "zero" and self.bound == 0:
            return
        if self.kind != "zero" and self.bound == 0:
            raise ValueError("a nonzero V needs a positive bound")

    def values(self, grid: TimeGrid, driver: np.ndarray) -> np.ndarray:
        t = grid.times[None, :]
        if self.kind == "zero":
            v = np.zeros_like(driver)
        elif self.kind == "constant":
            v = np.full_like(driver, self.value)
        elif self.kind == "sine":
            v = np.broadcast_to(self.amplitude * np.sin(2 * np.pi * self.freq * t), driver.shape).copy()
        elif self.kind == "clipped_path":
            v = self.scale * driver
        else:
            v = self.amplitude * np.sin(self.scale * driver)
        return np.clip(v, -self.bound, self.bound)


@dataclass(frozen=True)
class MuSpec:
    """A bounded integrand ``mu``: ``constant`` or ``sine_path`` (``value + amplitude*sin(driver)``)."""

    kind: str = "constant"
    value: float = 1.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "sine_path"):
            raise ValueError(f"unknown mu kind {self.kind!r}")

    @property
    def lower_bound(self) -> float:
        return abs(self.value) - abs(self.amplitude)

    def values(self, driver: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(driver, self.value)
        return self.value + self.amplitude * np.sin(driver)


def power_integrand_values(alpha: float, grid: TimeGrid, b: np.ndarray, V: VSpec, mu: MuSpec) -> np.ndarray:
    # left point; s^alpha at s = 0 uses the cell-average for alpha < 0 so the first step stays finite
    t = grid.times
    w = np.empty(grid.N)
    w[1:] = t[1:-1] ** alpha
    w[0] = grid.dt**alpha / (alpha + 1.0) if alpha < 0 else (1.0 if alpha == 0 else 0.0)
    integrand = w[None, :] * mu.values(b[:, :-1])
    x = np.zeros_like(b)
    np.cumsum(integrand * np.diff(b, axis=1), axis=1, out=x[:, 1:])
    return x + V.values(grid, b)


def sample_power_integrand(
    alpha: float,
    V: VSpec,
    grid: TimeGrid,
    seed: int,
    mu: Optional[MuSpec] = None,
    n_paths: Optional[int] = None,
) -> Path:
    """Euler sum of ``int s^alpha mu_s dB_s`` plus a bounded ``V``."""
    if alpha <= -0.5:
        raise ValueError(f"alpha must exceed -1/2 for a square-integrable integrand, got {alpha}")
    b = brownian_values(grid, _rng(seed), n_paths or 1)
    return _wrap(grid, power_integrand_values(alpha, grid, b, V, mu or MuSpec()), n_paths)


# -- realized quadratic variation and condition (*) ------------------------


def realized_quadratic_variation(path: Path) -> QVPath:
    v = path.values
    qv = np.zeros_like(v)
    np.cumsum(np.diff(v, axis=-1) ** 2, axis=-1, out=qv[..., 1:])
    return QVPath(path.grid, qv)


@dataclass(frozen=True)
class ConditionStarResult:
    holds: np.ndarray
    min_increment: np.ndarray
    threshold: float

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.holds))


def check_condition_star(qv: QVPath, delta: Callable[[float], float], h: float, slack: float = 0.1):
    """Check that every QV window of length ``h`` grows by at least ``(1 - slack) * delta(h)``.

    Returns per-path verdicts and the smallest observed window increment.
    """
    grid = qv.grid
    if h < grid.dt * (1 - 1e-9):
        raise ValueError(f"window h={h} is shorter than the grid step {grid.dt}")
    k = grid.steps_for(h)
    if k > grid.N:
        raise ValueError("window longer than the horizon")
    v = np.atleast_2d(qv.values)
    inc = (v[:, k:] - v[:, :-k]).min(axis=1)
    thr = (1.0 - slack) * float(delta(h))
    holds = inc >= thr
    if np.ndim(qv.values) == 1:
        return ConditionStarResult(holds[0], inc[0], thr)
    return ConditionStarResult(holds, inc, thr)


# -- process specifications ------------------------------------------------

KINDS = (
    "brownian",
    "fbm",
    "geometric_fbm",
    "moving_average",
    "ito_quadratic",
    "tanaka_abs",
    "tanaka_capped",
    "power_integrand",
    "drift_power",
    "qv_drift",
    "constant",
)


@dataclass(frozen=True)
class ProcessSpec:
    """Tagged description of a process.

    ``V`` adds a bounded perturbation to any variant; ``transform`` (an
    ``xform.MonotoneMap``) is applied last.
    """

    kind: str
    H: Optional[float] = None
    alpha: Optional[float] = None
    cap: Optional[float] = None
    kernel: Optional[KernelSpec] = None
    V: VSpec = field(default_factory=VSpec)
    mu: MuSpec = field(default_factory=MuSpec)
    base: Optional["ProcessSpec"] = None
    value: float = 0.0
    method: str = "davies-harte"
    L: Optional[float] = None
    transform: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind in ("fbm", "geometric_fbm"):
            if self.H is None:
                raise ValueError(f"{self.kind} needs H")
            _check_hurst(self.H)
        if self.kind == "moving_average" and self.kernel is None:
            raise ValueError("moving_average needs a kernel")
        if self.kind == "tanaka_capped" and not (self.cap and self.cap > 0):
            raise ValueError("tanaka_capped needs a positive cap")
        if self.kind in ("power_integrand", "drift_power", "qv_drift") and self.alpha is None:
            raise ValueError(f"{self.kind} needs alpha")
        if self.kind == "power_integrand" and self.alpha <= -0.5:
            raise ValueError("power_integrand needs alpha > -1/2")
        if self.kind == "qv_drift" and self.base is None:
            raise ValueError("qv_drift needs a base spec")

    @property
    def no_arbitrage_regime(self) -> Optional[bool]:
        """For drift_power / qv_drift: whether alpha >= 1/2."""
        if self.kind in ("drift_power", "qv_drift"):
            return self.alpha >= 0.5
        return None


def simulate(spec: ProcessSpec, grid: TimeGrid, n_paths: int, seed: int) -> dict[str, np.ndarray]:
    """Named arrays of shape ``(n_paths, N + 1)``; ``"X"`` is the price, others are drivers."""
    rng = _rng(seed)
    k = spec.kind
    out: dict[str, np.ndarray] = {}
    if k == "brownian":
        x = brownian_values(grid, rng, n_paths)
        driver = x
    elif k in ("fbm", "geometric_fbm"):
        x = fbm_values(spec.H, grid, rng, n_paths, spec.method)
        driver = x
        if k == "geometric_fbm":
            out["BH"] = x
            x = np.exp(x)
    elif k == "moving_average":
        L = 10.0 * grid.T if spec.L is None else spec.L
        kernel_l2_check(spec.kernel, grid, L)
        a = moving_average_matrix(spec.kernel, grid, L)
        x = (_normals(rng, n_paths, a.shape[1]) * math.sqrt(grid.dt)) @ a.T
        driver = x
    elif k == "ito_quadratic":
        driver = brownian_values(grid, rng, n_paths)
        x = ito_quadratic_values(driver, grid)
    elif k in ("tanaka_abs", "tanaka_capped"):
        driver = brownian_values(grid, rng, n_paths)
        mart, loc, capped = _accel.tanaka(driver, spec.cap if k == "tanaka_capped" else math.inf)
        x = np.abs(driver) if k == "tanaka_abs" else capped
        out["L"], out["M"] = loc, mart
    elif k == "power_integrand":
        driver = brownian_values(grid, rng, n_paths)
        x = power_integrand_values(spec.alpha, grid, driver, VSpec(), spec.mu)
    elif k == "drift_power":
        driver = brownian_values(grid, rng, n_paths)
        x = driver + _power0(grid.times, spec.alpha)[None, :]
    elif k == "qv_drift":
        sub = simulate(spec.base, grid, n_paths, int(rng.integers(2**63 - 1)))
        driver = sub["X"]
        qv = realized_quadratic_variation(Path(grid, driver)).values
        x = driver + _power0(qv, spec.alpha)
        out["S"] = driver
    else:  # constant
        x = np.full((n_paths, grid.N + 1), float(spec.value))
        driver = x
    if spec.V.kind != "zero":
        x = x + spec.V.values(grid, driver)
    if spec.transform is not None:
        x = spec.transform(x)
    out["X"] = x
    if k not in ("constant",) and driver is not x:
        out.setdefault("B", driver)
    return out


def _power0(x: np.ndarray, alpha: float) -> np.ndarray:
    """``x**alpha`` with ``0**alpha := 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.abs(x) ** alpha, 0.0)


def chunk_seeds(seed: int, n_paths: int, chunk: int) -> Iterator[tuple[int, np.random.SeedSequence]]:
    """Split ``n_paths`` into chunks with independent child seeds (counter-based spawning)."""
    n_chunks = max(1, -(-n_paths // chunk))
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for c, child in enumerate(children):
        size = min(chunk, n_paths - c * chunk)
        yield size, child


DEFAULT_CHUNK = 10_000


def simulate_chunks(spec: ProcessSpec, grid: TimeGrid, n_paths: int, seed: int, chunk: int = DEFAULT_CHUNK):
    """Yield ``simulate`` outputs chunk by chunk; the concatenation is deterministic in ``seed``."""
    for size, child in chunk_seeds(seed, n_paths, chunk):
        yield simulate(spec, grid, size, child)
