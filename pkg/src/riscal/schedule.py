"""Gear selection for the Q = O*L calibration measurements."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import PhaseTable, RisConfig, _readonly


class IdentifiabilityWarning(UserWarning):
    """Fewer measurement groups than the counting bound requires."""


@dataclass(frozen=True, eq=False)
class GearSchedule:
    """Gear vectors for all measurements.

    ``gears`` has shape (Q, M_ris) and holds 0-based gear indices; row
    ``(o-1)*L + i`` is measurement ``i+1`` of group ``o``. Within each group
    every element visits each gear exactly once.
    """

    gears: np.ndarray
    l_gears: int

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gears))
        if not np.issubdtype(g.dtype, np.integer):
            raise ValueError("gear indices must be integers")
        L = int(self.l_gears)
        if g.shape[0] % L:
            raise ValueError(f"{g.shape[0]} gear vectors is not a multiple of L={L}")
        if g.size and (g.min() < 0 or g.max() >= L):
            raise ValueError(f"gear indices must lie in [0, {L})")
        object.__setattr__(self, "gears", _readonly(g.astype(np.int64)))
        object.__setattr__(self, "l_gears", L)
        if not self.is_balanced():
            raise ValueError("each gear must appear exactly once per group for every element")

    @property
    def q_total(self) -> int:
        return self.gears.shape[0]

    @property
    def m_ris(self) -> int:
        return self.gears.shape[1]

    @property
    def o_groups(self) -> int:
        return self.q_total // self.l_gears

    def group(self, o: int) -> np.ndarray:
        """Gear block of group ``o`` (1-based), shape (L, M_ris)."""
        if not 1 <= o <= self.o_groups:
            raise IndexError(f"group {o} out of range 1..{self.o_groups}")
        L = self.l_gears
        return self.gears[(o - 1) * L:o * L]

    def permutations(self) -> np.ndarray:
        """Per (group, element) gear orderings, shape (O, M_ris, L).

        Entry ``[o, m]`` is the gear sequence element ``m`` steps through in
        group ``o``, i.e. the permutation applied to ``[0, 1, ..., L-1]``.
        """
        L = self.l_gears
        return self.gears.reshape(self.o_groups, L, self.m_ris).transpose(0, 2, 1)

    def is_balanced(self) -> bool:
        perms = np.sort(self.permutations(), axis=-1)
        return bool(np.all(perms == np.arange(self.l_gears)))

    def __eq__(self, other):
        if not isinstance(other, GearSchedule):
            return NotImplemented
        return self.l_gears == other.l_gears and np.array_equal(self.gears, other.gears)

    __hash__ = None


def build_schedule(cfg: RisConfig, rng_seed) -> GearSchedule:
    """Random schedule with an independent uniform permutation per (group, element)."""
    rng = np.random.default_rng(rng_seed)
    L = cfg.l_gears
    base = np.broadcast_to(np.arange(L), (cfg.o_groups, cfg.m_ris, L))
    perms = rng.permuted(base, axis=-1)
    gears = perms.transpose(0, 2, 1).reshape(cfg.q_total, cfg.m_ris)
    return GearSchedule(gears, L)


def phases_for(sched: GearSchedule, table: PhaseTable, q: int) -> np.ndarray:
    """Phases applied by the RIS in measurement ``q`` (1-based)."""
    if not 1 <= q <= sched.q_total:
        raise IndexError(f"measurement {q} out of range 1..{sched.q_total}")
    _check_table(sched, table)
    return table.phases[np.arange(sched.m_ris), sched.gears[q - 1]]


def all_phases(sched: GearSchedule, table: PhaseTable) -> np.ndarray:
    """Phases of every measurement, shape (Q, M_ris)."""
    _check_table(sched, table)
    return table.phases[np.arange(sched.m_ris)[np.newaxis, :], sched.gears]


def _check_table(sched: GearSchedule, table: PhaseTable):
    if table.phases.shape != (sched.m_ris, sched.l_gears):
        raise ValueError(
            f"table shape {table.phases.shape} does not match schedule "
            f"({sched.m_ris} elements, {sched.l_gears} gears)"
        )


def min_measurements(cfg: RisConfig) -> tuple[int, int]:
    """Smallest (Q, O) for which the real constraints can outnumber the unknowns."""
    L = cfg.l_gears
    # exact rational arithmetic so ceil() is not fooled by rounding
    q_min = -(-(2 * cfg.m_r * cfg.m_ris + (L - 1) * cfg.m_ris) // (2 * cfg.m_r))
    o_min = math.ceil(q_min / L)
    return q_min, o_min


def check_identifiable(cfg: RisConfig) -> bool:
    """Warn, without failing, when ``cfg.o_groups`` is below the counting bound."""
    q_min, o_min = min_measurements(cfg)
    if cfg.o_groups < o_min:
        warnings.warn(
            f"O={cfg.o_groups} groups gives Q={cfg.q_total} measurements, below "
            f"Q_min={q_min} (O_min={o_min}); phases may not be identifiable",
            IdentifiabilityWarning,
            stacklevel=2,
        )
        return False
    return True
