"""Information-plus-noise model: Sigma = B + W.

B is deterministic of rank K and is stored only through the eigenstructure of
B B* (eigenvalues ``lambdas`` and orthonormal eigenvectors ``U``). W has i.i.d.
circular complex Gaussian entries of variance sigma2 / N.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

ORTHO_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SignalModel:
    M: int
    N: int
    sigma2: float
    lambdas: np.ndarray  # descending, length K
    U: np.ndarray  # M x K, orthonormal columns

    @property
    def K(self) -> int:
        return int(self.lambdas.size)

    @property
    def c(self) -> float:
        return self.M / self.N

    def groups(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct eigenvalues of B B* (descending, noise value 0 last) and multiplicities.

        Ties are merged exactly; ``mult`` sums to M.
        """
        vals, counts = np.unique(self.lambdas, return_counts=True)
        vals, counts = vals[::-1], counts[::-1]
        vals = np.append(vals, 0.0)
        counts = np.append(counts, self.M - self.K)
        return vals.astype(float), counts.astype(float)

    def signal_groups(self) -> tuple[np.ndarray, np.ndarray]:
        vals, mult = self.groups()
        return vals[:-1], mult[:-1]

    def group_index(self) -> np.ndarray:
        """Group id (row of :meth:`groups`) of each of the M eigen-directions."""
        vals, _ = self.groups()
        idx = np.full(self.M, vals.size - 1, dtype=int)
        for k, lam in enumerate(self.lambdas):
            idx[k] = int(np.flatnonzero(vals == lam)[0])
        return idx

    def lambda_full(self) -> np.ndarray:
        """All M eigenvalues of B B*, descending (zeros for noise directions)."""
        out = np.zeros(self.M)
        out[: self.K] = self.lambdas
        return out

    def dense_B(self) -> np.ndarray:
        """Materialize B = U diag(sqrt(lambda)) V* with V the first K canonical vectors of C^N."""
        B = np.zeros((self.M, self.N), dtype=complex)
        B[:, : self.K] = self.U * np.sqrt(self.lambdas)[None, :]
        return B


@dataclass(frozen=True, eq=False)
class SubspaceQuery:
    d1: np.ndarray
    d2: np.ndarray
    xi: complex = 1.0 + 0.0j
    norms: tuple[float, float] = field(init=False)

    def __post_init__(self) -> None:
        d1 = _frozen(np.asarray(self.d1, dtype=complex).ravel())
        d2 = _frozen(np.asarray(self.d2, dtype=complex).ravel())
        if d1.shape != d2.shape:
            raise ConfigError(f"probe vectors differ in length: {d1.size} vs {d2.size}")
        n1, n2 = float(np.linalg.norm(d1)), float(np.linalg.norm(d2))
        if not (np.isfinite(n1) and np.isfinite(n2)):
            raise ConfigError("probe vectors must have finite norm")
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)
        object.__setattr__(self, "xi", complex(self.xi))
        object.__setattr__(self, "norms", (n1, n2))

    @property
    def is_quadratic(self) -> bool:
        return bool(np.array_equal(self.d1, self.d2))


@dataclass(frozen=True, eq=False)
class Realization:
    sigma_matrix: np.ndarray
    seed: int


def canonical_vector(M: int, index: int) -> np.ndarray:
    """Canonical basis vector e_index of C^M (1-based, as in e_1 ... e_M)."""
    if not 1 <= index <= M:
        raise ConfigError(f"canonical index {index} outside 1..{M}")
    e = np.zeros(M, dtype=complex)
    e[index - 1] = 1.0
    return e


def build_model(M: int, N: int, sigma2: float, lambdas, U: Any = "canonical") -> SignalModel:
    if int(M) != M or int(N) != N or M < 1 or N < 1:
        raise ConfigError("M and N must be positive integers")
    M, N = int(M), int(N)
    if M >= N:
        raise ConfigError(f"need M < N, got M={M}, N={N}")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    lam = np.asarray(lambdas, dtype=float).ravel()
    if lam.size and not np.all(np.isfinite(lam)):
        raise ConfigError("signal eigenvalues must be finite")
    if np.any(lam <= 0):
        raise ConfigError("signal eigenvalues must be strictly positive")
    K = lam.size
    if K >= M:
        raise ConfigError(f"need K < M, got K={K}, M={M}")
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    if isinstance(U, str):
        if U != "canonical":
            raise ConfigError(f"unknown eigenvector spec {U!r}")
        Umat = np.eye(M, K, dtype=complex)
    else:
        Umat = np.asarray(U, dtype=complex)
        if Umat.ndim == 1 and K == 1:
            Umat = Umat[:, None]
        if Umat.shape != (M, K):
            raise ConfigError(f"eigenvector matrix must be {M}x{K}, got {Umat.shape}")
        Umat = Umat[:, order]
        gram = Umat.conj().T @ Umat
        if K and np.max(np.abs(gram - np.eye(K))) > ORTHO_TOL:
            raise ConfigError("eigenvector columns are not orthonormal")
    return SignalModel(M=M, N=N, sigma2=float(sigma2), lambdas=_frozen(lam), U=_frozen(Umat))


def sample_realization(model: SignalModel, seed: int) -> Realization:
    """Draw Sigma = B + W; real and imaginary parts of W_ij have variance sigma2 / (2N)."""
    rng = np.random.default_rng(seed)
    scale = np.sqrt(model.sigma2 / (2.0 * model.N))
    g = rng.standard_normal((2, model.M, model.N))
    S = scale * (g[0] + 1j * g[1])
    if model.K:
        S[:, : model.K] += model.U * np.sqrt(model.lambdas)[None, :]
    return Realization(sigma_matrix=S, seed=int(seed))


def trial_seed(master_seed: int, trial: int) -> int:
    """Independent 64-bit seed for trial ``trial`` of a run keyed by ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def eta_true(model: SignalModel, q: SubspaceQuery) -> complex:
    """d1* (I - U U*) d2."""
    if q.d1.size != model.M:
        raise ConfigError(f"probe length {q.d1.size} does not match M={model.M}")
    proj1 = model.U.conj().T @ q.d1
    proj2 = model.U.conj().T @ q.d2
    return complex(np.vdot(q.d1, q.d2) - np.vdot(proj1, proj2))


# -- scenario files ---------------------------------------------------------

def _parse_vector(spec: Any, M: int, name: str) -> np.ndarray:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{name}: expected an object with a 'type' field")
    kind = spec["type"]
    if kind == "canonical":
        return canonical_vector(M, int(spec["index"]))
    if kind == "explicit":
        re = np.asarray(spec.get("re", []), dtype=float)
        im = np.asarray(spec.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != (M,) or im.shape != (M,):
            raise ConfigError(f"{name}: explicit vector must have length M={M}")
        return re + 1j * im
    raise ConfigError(f"{name}: unknown vector type {kind!r}")


def _parse_matrix(spec: Any, M: int) -> Any:
    if isinstance(spec, str):
        return spec
    if isinstance(spec, dict):
        re = np.asarray(spec["re"], dtype=float)
        im = np.asarray(spec.get("im", np.zeros_like(re)), dtype=float)
        return re + 1j * im
    return np.asarray(spec, dtype=float)


@dataclass(frozen=True, eq=False)
class Scenario:
    model: SignalModel
    query: SubspaceQuery
    seed: int = 0


def parse_scenario(data: dict) -> Scenario:
    try:
        M, N = data["M"], data["N"]
        sigma2 = data.get("sigma2", 1.0)
        lambdas = data.get("signal_eigenvalues", [])
        U = _parse_matrix(data.get("eigenvectors", "canonical"), M)
        model = build_model(M, N, sigma2, lambdas, U)
        d1 = _parse_vector(data.get("d1", {"type": "canonical", "index": M}), M, "d1")
        d2 = _parse_vector(data.get("d2", data.get("d1", {"type": "canonical", "index": M})), M, "d2")
        xi = data.get("xi", 1.0)
        if isinstance(xi, dict):
            xi = complex(xi.get("re", 0.0), xi.get("im", 0.0))
        seed = int(data.get("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"scenario is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed scenario: {exc}") from None
    return Scenario(model=model, query=SubspaceQuery(d1, d2, xi), seed=seed)


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {path} is not valid JSON: {exc}") from None
    return parse_scenario(data)
