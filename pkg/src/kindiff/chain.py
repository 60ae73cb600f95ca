"""Finite-state Markov chains of smooth fields driving the random kernel.

The chain is the pilot process: a continuous-time Markov chain over a
finite set of centred, band-limited grid fields.  Because the state space
is finite, every ergodic quantity reduces to dense linear algebra: the
stationary law is a null-vector solve, resolvents are matrix solves (a
bordered group-inverse solve at zero), and the mixing rate is the
spectral gap.  Path sampling is the exact jump-chain algorithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import AdmissibilityError
from .grid import Grid, GridField, c3_norm

__all__ = [
    "PilotChain",
    "PilotPath",
    "build_chain",
    "sample_path",
    "resolvent",
    "apply_generator",
    "ou_filter_step",
    "is_reversible",
    "spectral_gap",
    "sample_stationary_filter",
    "derive_rng",
]

CHAIN_TOL = 1e-12


def derive_rng(base_seed: int, *stream: int) -> np.random.Generator:
    """Splittable per-stream generator: same (seed, ids) -> same stream."""
    return np.random.default_rng([int(base_seed), *map(int, stream)])


@dataclass(frozen=True)
class PilotChain:
    """Validated finite-state pilot process."""

    grid: Grid
    states: np.ndarray  # (n_states, *grid.shape)
    rates: np.ndarray  # (n_states, n_states) generator matrix
    stationary: np.ndarray  # (n_states,)
    radius: float
    alpha: float

    def __post_init__(self):
        for name in ("states", "rates", "stationary"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def state_field(self, i: int) -> GridField:
        return GridField(self.grid, self.states[i])


@dataclass(frozen=True)
class PilotPath:
    """Piecewise-constant cadlag trajectory of state indices."""

    t_end: float
    jump_times: np.ndarray  # (n_jumps,) strictly increasing in (0, t_end)
    state_indices: np.ndarray  # (n_jumps + 1,)

    def state_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.jump_times, t, side="right"))
        return int(self.state_indices[idx])

    def segments(self) -> Iterator[tuple[float, float, int]]:
        """Yield (t_start, t_end, state_index) covering [0, t_end]."""
        edges = np.concatenate(([0.0], self.jump_times, [self.t_end]))
        for i in range(len(edges) - 1):
            yield float(edges[i]), float(edges[i + 1]), int(self.state_indices[i])


def _stationary_law(rates: np.ndarray, tol: float) -> np.ndarray:
    n = rates.shape[0]
    if n == 1:
        return np.ones(1)
    a = rates.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    lam = np.linalg.solve(a, b)
    scale = max(1.0, float(np.max(np.abs(rates))))
    resid = float(np.max(np.abs(lam @ rates)))
    if resid > 100 * tol * scale:
        raise AdmissibilityError("rates", f"stationary solve residual {resid:.3e}")
    return lam


def build_chain(states, rates, alpha: float, tol: float = CHAIN_TOL) -> PilotChain:
    """Validate and build a pilot chain.

    ``states`` is a sequence of GridFields (or a stacked array plus a grid
    via GridFields only).  Checks, in order: rate-matrix shape/signs/row
    sums, irreducibility, positivity of the stationary law, pointwise
    centring of the states under that law, finiteness (stable ball), and
    the smallness condition radius <= alpha / 4.
    """
    fields = list(states)
    if not fields:
        raise AdmissibilityError("rates", "chain needs at least one state")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise AdmissibilityError("BallR", "all states must share one grid")
    stacked = np.stack([f.values for f in fields])
    q = np.array(rates, dtype=float)
    n = stacked.shape[0]
    if q.shape != (n, n):
        raise AdmissibilityError("rates", f"rate matrix shape {q.shape} != ({n}, {n})")
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < -tol):
        raise AdmissibilityError("rates", "off-diagonal rates must be non-negative")
    scale = max(1.0, float(np.max(np.abs(q))))
    row_sum = float(np.max(np.abs(q.sum(axis=1))))
    if row_sum > tol * scale:
        raise AdmissibilityError("rates", f"rows must sum to zero, max |sum| = {row_sum:.3e}")
    if n > 1:
        adj = csr_matrix((off > tol * scale).astype(int))
        n_comp, _ = connected_components(adj, directed=True, connection="strong")
        if n_comp != 1:
            raise AdmissibilityError("irreducible", f"chain has {n_comp} communicating classes")
        if np.any(np.abs(np.diag(q)) <= tol * scale):
            raise AdmissibilityError("rates", "absorbing state in a multi-state chain")

    lam = _stationary_law(q, tol)
    if np.any(lam <= 0):
        raise AdmissibilityError("irreducible", "stationary law has non-positive entries")

    if not np.all(np.isfinite(stacked)):
        raise AdmissibilityError("BallR", "state fields must be finite")
    centre = np.einsum("i,i...->...", lam, stacked)
    centre_err = float(np.max(np.abs(centre)))
    state_scale = max(1.0, float(np.max(np.abs(stacked))))
    if centre_err > tol * state_scale:
        raise AdmissibilityError("mcentred", f"stationary mean of the states is {centre_err:.3e}, not 0")

    radius = max(c3_norm(grid, s) for s in stacked) if n > 0 else 0.0
    if radius > alpha / 4.0 + tol:
        raise AdmissibilityError(
            "Rsmall", f"stable-ball radius {radius:.6g} exceeds alpha/4 = {alpha / 4.0:.6g}"
        )
    return PilotChain(grid=grid, states=stacked, rates=q, stationary=lam, radius=radius, alpha=alpha)


def sample_path(
    chain: PilotChain,
    t_end: float,
    rng: np.random.Generator | int,
    initial_state: int | None = None,
) -> PilotPath:
    """Exact jump-chain sampling on [0, t_end].

    Holding time in state i is exponential with rate -Q_ii; the next state
    is drawn proportionally to the off-diagonal rates.  The initial state
    is drawn from the stationary law unless given.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if isinstance(rng, (int, np.integer)):
        rng = derive_rng(int(rng))
    q = chain.rates
    n = chain.n_states
    state = int(rng.choice(n, p=chain.stationary)) if initial_state is None else int(initial_state)
    times: list[float] = []
    visits = [state]
    if n == 1:
        return PilotPath(t_end=float(t_end), jump_times=np.empty(0), state_indices=np.array(visits))
    t = 0.0
    exit_rates = -np.diag(q)
    jump_probs = [q[i] / exit_rates[i] for i in range(n)]
    for i in range(n):
        jump_probs[i][i] = 0.0
    while True:
        t += rng.exponential(1.0 / exit_rates[state])
        if t >= t_end:
            break
        state = int(rng.choice(n, p=jump_probs[state]))
        times.append(t)
        visits.append(state)
    return PilotPath(t_end=float(t_end), jump_times=np.array(times), state_indices=np.array(visits))


def resolvent(chain: PilotChain, alpha: float, theta: np.ndarray) -> np.ndarray:
    """Exact resolvent of the chain generator applied to per-state data.

    For alpha > 0 returns (alpha I - Q)^-1 theta.  For alpha = 0, theta
    must be centred under the stationary law; the result is the unique
    solution x of -Q x = theta with stationary mean zero (group-inverse
    solve, done as a bordered system).
    """
    th = np.asarray(theta, dtype=float)
    n = chain.n_states
    if th.shape[0] != n:
        raise ValueError(f"theta must have leading axis {n}")
    flat = th.reshape(n, -1)
    q = chain.rates
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha > 0:
        sol = np.linalg.solve(alpha * np.eye(n) - q, flat)
        return sol.reshape(th.shape)
    lam = chain.stationary
    mean = lam @ flat
    scale = max(1.0, float(np.max(np.abs(flat))))
    if float(np.max(np.abs(mean), initial=0.0)) > 1e-9 * scale:
        raise ValueError("alpha = 0 requires theta centred under the stationary law")
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = -q
    bordered[:n, n] = 1.0
    bordered[n, :n] = lam
    rhs = np.zeros((n + 1, flat.shape[1]))
    rhs[:n] = flat
    sol = np.linalg.solve(bordered, rhs)[:n]
    return sol.reshape(th.shape)


def apply_generator(chain: PilotChain, phi: np.ndarray) -> np.ndarray:
    """Action of the chain generator on per-state data: (Q phi)_i."""
    ph = np.asarray(phi, dtype=float)
    flat = ph.reshape(chain.n_states, -1)
    return (chain.rates @ flat).reshape(ph.shape)


def ou_filter_step(w: np.ndarray, m: np.ndarray, dt_micro: float) -> np.ndarray:
    """Exact update of the exponential moving average dw/dt = m - w.

    Holds for any array shapes that broadcast; dt is in microscopic time.
    """
    if dt_micro < 0:
        raise ValueError("dt_micro must be >= 0")
    decay = math.exp(-dt_micro) if np.isfinite(dt_micro) else 0.0
    return m + decay * (w - m)


def is_reversible(chain: PilotChain, tol: float = CHAIN_TOL) -> bool:
    """Detailed balance lam_i Q_ij = lam_j Q_ji at tolerance."""
    lam = chain.stationary
    flow = lam[:, None] * chain.rates
    scale = max(1.0, float(np.max(np.abs(flow))))
    return float(np.max(np.abs(flow - flow.T))) <= tol * scale


def spectral_gap(chain: PilotChain) -> float:
    """Smallest non-zero real part of the eigenvalues of -Q.

    Reported as the chain's exponential mixing rate; +inf for a single
    state (nothing to mix).
    """
    if chain.n_states == 1:
        return math.inf
    ev = np.linalg.eigvals(-chain.rates)
    re = np.sort(ev.real)
    nonzero = re[re > 1e-12 * max(1.0, float(np.max(np.abs(re))))]
    return float(nonzero[0]) if nonzero.size else 0.0


def mixing_l1_norm(chain: PilotChain) -> float:
    """Integral of the exponential mixing profile, 1 / gap."""
    gap = spectral_gap(chain)
    return 0.0 if math.isinf(gap) else 1.0 / gap


def sample_stationary_filter(
    chain: PilotChain,
    rng: np.random.Generator,
    horizon: float | None = None,
    gap: float | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw an approximately stationary (filter state, chain state) pair.

    Runs the chain from its stationary law over a burn-in window and
    accumulates the exponential moving average of the visited fields,
    returning the per-state combination coefficients, the filter field,
    and the state index at the end of the window.  The truncation error of
    the window is e^{-horizon}.
    """
    if chain.n_states == 1:
        return np.ones(1), chain.states[0].copy(), 0
    if gap is None:
        gap = spectral_gap(chain)
    if horizon is None:
        horizon = 20.0 / min(gap, 1.0) if math.isfinite(gap) else 20.0
    path = sample_path(chain, horizon, rng)
    coeffs = np.zeros(chain.n_states)
    for t0, t1, idx in path.segments():
        coeffs[idx] += math.exp(t1 - horizon) - math.exp(t0 - horizon)
    w = np.einsum("i,i...->...", coeffs, chain.states)
    end_state = int(path.state_indices[-1])
    return coeffs, w, end_state
