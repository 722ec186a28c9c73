# src/metrics/effective_rank.py
"""
Effective rank of the Jacobian d(action) / d(hidden feature).

    ER(J) = (sum_i s_i)^2 / sum_i s_i^2

Singular values come from a one-sided (Hestenes) Jacobi SVD.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.agm.policy import ddim_chain
from src.agm.train import AgmModel, ddim_noise, episode_features
from src.diffcore.tensor import Tape
from src.metrics.evaluate import eval_noise
from src.samplers.schedules import NoiseSchedule
from src.synthdyn.world import Episode
from src.utils.errors import InvalidArgumentError
from src.utils.logger import get_logger
from src.vpm.train import extract_representation

logger = get_logger(__name__)

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True, eq=False)
class JacobianSpectrum:
    singular_values: np.ndarray
    d_a: int
    d_v: int

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=np.float64)
        if s.ndim != 1 or s.size > min(self.d_a, self.d_v):
            raise InvalidArgumentError(f"spectrum of length {s.size} for a {self.d_a}x{self.d_v} Jacobian")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise InvalidArgumentError("singular values must be non-negative and sorted descending")
        object.__setattr__(self, "singular_values", s)


@dataclass
class ErReport:
    avg_er: float
    avg_err: float
    d_a: int
    d_v: int
    per_episode: List[float] = field(default_factory=list)
    spectra: List[JacobianSpectrum] = field(default_factory=list)

    def to_json(self) -> Dict[str, Any]:
        return {
            "avg_er": self.avg_er,
            "avg_err": self.avg_err,
            "d_a": self.d_a,
            "d_v": self.d_v,
            "per_episode": list(self.per_episode),
        }


# ------------------------ SVD ------------------------

def _check_finite(matrix: np.ndarray) -> np.ndarray:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("matrix has non-finite entries")
    return a


def _hestenes(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthogonalize the columns of a tall matrix; returns (u, s, v) with a = u diag(s) v^T."""
    u = a.copy()
    n = u.shape[1]
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(u[:, p] @ u[:, p])
                beta = float(u[:, q] @ u[:, q])
                gamma = float(u[:, p] @ u[:, q])
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                up, uq = u[:, p].copy(), u[:, q]
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq
                vp, vq = v[:, p].copy(), v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    sv = np.linalg.norm(u, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, u, v = sv[order], u[:, order], v[:, order]
    nz = sv > 0
    u[:, nz] = u[:, nz] / sv[nz]
    return u, sv, v


def jacobi_svd(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD (u, s, vt) with s descending, via one-sided Jacobi rotations."""
    a = _check_finite(matrix)
    if a.shape[0] >= a.shape[1]:
        u, s, v = _hestenes(a)
        return u, s, v.T
    u, s, v = _hestenes(a.T)
    return v, s, u.T


def svd_values(matrix: np.ndarray) -> np.ndarray:
    return jacobi_svd(matrix)[1]


def effective_rank(spectrum: JacobianSpectrum | Sequence[float] | np.ndarray) -> float:
    s = spectrum.singular_values if isinstance(spectrum, JacobianSpectrum) else np.asarray(spectrum, dtype=np.float64)
    if s.size == 0 or not np.all(np.isfinite(s)) or np.any(s < 0):
        raise InvalidArgumentError("spectrum must be non-empty, finite and non-negative")
    total = float(np.sum(s))
    if total == 0.0:
        raise InvalidArgumentError("effective rank of an all-zero spectrum")
    return total * total / float(np.sum(s * s))


def cumulative_contribution(spectrum: JacobianSpectrum | np.ndarray) -> np.ndarray:
    """Running share of the total singular mass, sum_{j<=i} s_j / sum_j s_j."""
    s = spectrum.singular_values if isinstance(spectrum, JacobianSpectrum) else np.asarray(spectrum, dtype=np.float64)
    total = float(np.sum(s))
    if total == 0.0:
        raise InvalidArgumentError("cumulative contribution of an all-zero spectrum")
    return np.cumsum(s) / total


# ------------------------ Jacobian ------------------------

def action_jacobian(
    agm: AgmModel,
    hidden: np.ndarray,
    instruction: np.ndarray,
    eps: np.ndarray,
    *,
    mode: str = "reverse",
    eta: float = 1e-4,
) -> np.ndarray:
    """
    d a / d h for a = ddim_sample(h) / action_scale with the DDIM start noise `eps`
    frozen. Returns (d_a, d_v).
    """
    h = np.asarray(hidden, dtype=np.float64).reshape(-1)
    instr = np.asarray(instruction, dtype=np.float64).reshape(1, -1)
    eps = np.asarray(eps, dtype=np.float64).reshape(1, -1)
    net, sched, steps = agm.net, agm.schedule, agm.ddim_steps
    if eta <= 0:
        raise InvalidArgumentError(f"finite-difference step must be > 0, got {eta}")

    if mode == "reverse":
        tape = Tape()
        pv = tape.bind(net.params, trainable=False)
        hv = tape.input(h[None], requires_grad=True, name="hidden")
        out = ddim_chain(net, tape, pv, eps, hv, instr, sched, steps) / agm.action_scale
        d_a = out.shape[1]
        rows = []
        for r in range(d_a):
            seed = np.zeros((1, d_a))
            seed[0, r] = 1.0
            grads = tape.backward(out, seed)
            rows.append(grads[hv][0] if hv in grads else np.zeros_like(h))
        return np.stack(rows)

    if mode == "fd":
        d_v = h.size
        bumps = np.eye(d_v) * eta
        hs = np.concatenate([h[None] + bumps, h[None] - bumps])
        tape = Tape(record=False)
        pv = tape.bind(net.params)
        n = hs.shape[0]
        out = ddim_chain(net, tape, pv, np.repeat(eps, n, axis=0), hs, np.repeat(instr, n, axis=0), sched, steps)
        a = np.asarray(getattr(out, "value", out)) / agm.action_scale
        return ((a[:d_v] - a[d_v:]) / (2.0 * eta)).T

    raise InvalidArgumentError(f"jacobian mode must be 'reverse' or 'fd', got {mode!r}")


def jacobian(
    agm: AgmModel,
    vpm: Any,
    episode: Episode,
    vpm_schedule: NoiseSchedule,
    *,
    mode: str = "reverse",
    eta: float = 1e-4,
    index: int = 0,
    master_seed: int = 0,
) -> np.ndarray:
    """Jacobian for one eval episode; `index` selects its fixed VPM and DDIM noise."""
    noise = eval_noise(master_seed, index, np.shape(episode.expert_latent), vpm_schedule.sigma_max)
    hidden = np.asarray(extract_representation(vpm, episode.condition, noise, vpm_schedule), dtype=np.float64)
    eps = ddim_noise(master_seed, index, agm.action_size)
    return action_jacobian(agm, hidden, episode.condition.instruction, eps, mode=mode, eta=eta)


def er_report(
    agm: AgmModel,
    vpm: Any,
    episodes: Sequence[Episode],
    vpm_schedule: NoiseSchedule,
    *,
    mode: str = "reverse",
    eta: float = 1e-4,
    master_seed: int = 0,
) -> ErReport:
    """Per-episode ER of the action Jacobian, averaged; ERR divides by min(d_a, d_v)."""
    episodes = list(episodes)
    if not episodes:
        raise InvalidArgumentError("er_report needs at least one episode")
    feats = episode_features(vpm, episodes, vpm_schedule, master_seed=master_seed)
    ers: List[float] = []
    spectra: List[JacobianSpectrum] = []
    for i, ep in enumerate(episodes):
        J = action_jacobian(agm, feats[i], ep.condition.instruction, ddim_noise(master_seed, i, agm.action_size),
                            mode=mode, eta=eta)
        spec = JacobianSpectrum(svd_values(J), d_a=J.shape[0], d_v=J.shape[1])
        spectra.append(spec)
        ers.append(effective_rank(spec))
    d_a, d_v = spectra[0].d_a, spectra[0].d_v
    avg_er = float(np.mean(ers))
    report = ErReport(avg_er=avg_er, avg_err=avg_er / min(d_a, d_v), d_a=d_a, d_v=d_v, per_episode=ers, spectra=spectra)
    logger.info(f"ER over {len(ers)} episodes: avg {avg_er:.3f}, ratio {report.avg_err:.4f} (d_a={d_a}, d_v={d_v})")
    return report
