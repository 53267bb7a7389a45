"""Exponential unhappiness objective over red runs of each pedestrian stage.

Two routes compute the same cost:

* :func:`red_run_profile` / :func:`averaged_blocked` / :func:`unhappiness_cost`
  evaluate the auxiliary sequences h, f, q, phi, P~ and P-bar literally and
  are meant for audit output;
* :class:`RedRunTracker` accumulates the cost interval by interval over a
  batch of schedules and is what the solvers use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ped_dynamics import PedTrace
from .topology import N_CORNERS, STAGES

DEFAULT_EXP_CAP = 700.0


class UnhappinessOverflow(OverflowError):
    pass


def exp_table(steps: int, delta: float, in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP) -> np.ndarray:
    """``table[phi] = exp(phi * delta)`` (or ``exp(phi)``) for phi = 0..steps."""
    scale = delta if in_seconds else 1.0
    if steps * scale > cap:
        raise UnhappinessOverflow(
            f"red run of {steps} intervals gives exponent {steps * scale:g} > cap {cap:g}; "
            "shorten the horizon or measure runs in intervals"
        )
    return np.array([math.exp(p * scale) for p in range(steps + 1)])


@dataclass
class RedRunProfile:
    h: np.ndarray  # length N+1, index 0..N
    f: np.ndarray  # length N+1, index 0 unused
    q: np.ndarray  # length N+1
    phi: np.ndarray  # length N, phi[k-1] = phi(k)


def red_run_profile(theta) -> RedRunProfile:
    """Switch markers and red-run durations for one stage's green bits ``theta(1..N)``."""
    th = [int(x) for x in theta]
    n = len(th)
    h = np.zeros(n + 1, dtype=np.int64)
    for k in range(1, n):
        h[k] = k * (th[k - 1] ^ th[k])
    h[n] = n
    f = np.zeros(n + 1, dtype=np.int64)
    for k in range(1, n):
        f[k] = max(th[k] - th[k - 1], 0)
    f[n] = 0 if th[n - 1] == 1 else 1
    q = np.zeros(n + 1, dtype=np.int64)
    for k in range(1, n + 1):
        if h[k - 1] != 0:
            q[k] = max(h[k] - h[k - 1], 0)
        else:
            q[k] = max(h[k] - h[k - 1] - q[:k].sum(), 0)
    # q[k] is the length of the run closed at k; f[k] marks closed runs that were red
    phi = (q * f)[1:]
    return RedRunProfile(h=h, f=f, q=q, phi=phi)


def averaged_blocked(volumes, ratio, theta, phi) -> np.ndarray:
    """Averaged blocked pedestrians per corner at the end of each red run.

    ``volumes`` and ``ratio`` have shape (N, 4) and hold P_i(k), eta_i(k) for
    this stage; returns P-bar with shape (N, 4).
    """
    volumes = np.asarray(volumes, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    theta = np.asarray(theta)
    n = len(theta)
    tilde = np.zeros((n, N_CORNERS))
    pbar = np.zeros((n, N_CORNERS))
    running = np.zeros(N_CORNERS)
    taken = np.zeros(N_CORNERS)
    for k in range(n):
        running = running + volumes[k] * ratio[k] * (1 - theta[k])
        if phi[k] != 0:
            tilde[k] = running - taken
            taken = taken + tilde[k]
            pbar[k] = tilde[k] / phi[k]
    return pbar


@dataclass
class UnhappinessBreakdown:
    phi: np.ndarray  # (J, 2, N)
    pbar: np.ndarray  # (J, 2, N, 4)
    terms: np.ndarray  # (J, 2, N, 4)
    total: float

    def corner_row(self, j: int, k: int, i: int):
        """(phi, p_bar, term) for CSV export, summed over the two stages."""
        phi = int(self.phi[j, :, k].max())
        return phi, float(self.pbar[j, :, k, i].sum()), float(self.terms[j, :, k, i].sum())


def unhappiness_breakdown(trace: PedTrace, in_seconds: bool = True,
                          cap: float = DEFAULT_EXP_CAP) -> UnhappinessBreakdown:
    n_j, n = trace.schedule.shape
    table = exp_table(n, trace.delta, in_seconds, cap)
    phi = np.zeros((n_j, 2, n), dtype=np.int64)
    pbar = np.zeros((n_j, 2, n, N_CORNERS))
    for j in range(n_j):
        for o in STAGES:
            theta = (trace.schedule[j] == o).astype(np.int64)
            prof = red_run_profile(theta)
            phi[j, o] = prof.phi
            pbar[j, o] = averaged_blocked(trace.volumes[j, :n], trace.ratios[j, :, o], theta, prof.phi)
    terms = pbar * table[phi][..., None]
    return UnhappinessBreakdown(phi=phi, pbar=pbar, terms=terms, total=float(terms.sum()))


def unhappiness_cost(trace: PedTrace, in_seconds: bool = True, cap: float = DEFAULT_EXP_CAP) -> float:
    return unhappiness_breakdown(trace, in_seconds, cap).total


class RedRunTracker:
    """Incremental unhappiness over a batch of schedules.

    Call :meth:`push` once per interval, then :meth:`finish`. A red run's term
    is added when the run closes, in interval order and stage order, so the
    floating-point total depends only on the schedule, not on batch layout.
    """

    def __init__(self, batch_shape: tuple, table: np.ndarray):
        self.table = table
        self.acc = np.zeros(batch_shape + (2, N_CORNERS))
        self.run = np.zeros(batch_shape + (2,), dtype=np.int64)
        self.cost = np.zeros(batch_shape)

    def copy(self) -> "RedRunTracker":
        other = RedRunTracker.__new__(RedRunTracker)
        other.table = self.table
        other.acc = self.acc.copy()
        other.run = self.run.copy()
        other.cost = self.cost.copy()
        return other

    def _close(self, o: int, mask):
        run = self.run[..., o]
        closing = mask & (run > 0)
        safe = np.where(closing, run, 1)
        pbar = self.acc[..., o, :] / safe[..., None]
        e = self.table[np.where(closing, run, 0)]
        term = (pbar[..., 0] * e + pbar[..., 1] * e) + (pbar[..., 2] * e) + (pbar[..., 3] * e)
        self.cost = self.cost + np.where(closing, term, 0.0)
        self.acc[..., o, :] = np.where(closing[..., None], 0.0, self.acc[..., o, :])
        self.run[..., o] = np.where(closing, 0, run)

    def push(self, stage, volumes, ratios):
        """Record interval with ``stage`` (batch), corner ``volumes`` (batch+(4,)), ``ratios`` (batch+(2,4))."""
        stage = np.asarray(stage)
        for o in STAGES:
            self._close(o, stage == o)
        for o in STAGES:
            red = stage != o
            self.acc[..., o, :] = np.where(red[..., None],
                                           self.acc[..., o, :] + volumes * ratios[..., o, :],
                                           self.acc[..., o, :])
            self.run[..., o] = np.where(red, self.run[..., o] + 1, self.run[..., o])

    def finish(self) -> np.ndarray:
        every = np.ones(self.run.shape[:-1], dtype=bool)
        for o in STAGES:
            self._close(o, every)
        return self.cost

    def closed_cost(self) -> np.ndarray:
        """Cost of runs already closed; a lower bound on the final total."""
        return self.cost
