"""Recorded simulation time series and their fixed CSV column layout.

Columns: `t`, then the farm-level block FARM_COLUMNS, then one block of
GENERATOR_COLUMNS per generator, suffixed `_1` … `_n`.
"""

from dataclasses import dataclass

import numpy as np

FARM_COLUMNS = ("t", "p_d", "p_m_total", "xi_h", "spread")
GENERATOR_COLUMNS = (
    "z",
    "z_dot",
    "omega_r",
    "t_e",
    "t_m",
    "t_e_star",
    "v_dr",
    "v_qr",
    "v_e",
    "v_e_dot",
    "v_w",
    "c_p",
    "e_d_prime",
    "e_q_prime",
)


def trace_columns(n: int) -> list[str]:
    columns = list(FARM_COLUMNS)
    for i in range(1, n + 1):
        columns.extend(f"{name}_{i}" for name in GENERATOR_COLUMNS)
    return columns


@dataclass
class SimTrace:
    """Samples on a uniform time grid; one row per sample."""

    columns: list[str]
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))
        self._index = {name: j for j, name in enumerate(self.columns)}

    @property
    def n_generators(self) -> int:
        return (len(self.columns) - len(FARM_COLUMNS)) // len(GENERATOR_COLUMNS)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self._index[name]]
        except KeyError:
            raise KeyError(f"trace has no column '{name}'") from None

    def generator(self, name: str) -> np.ndarray:
        """Samples × generators matrix of one per-generator quantity."""
        return np.column_stack([self.column(f"{name}_{i}") for i in range(1, self.n_generators + 1)])

    def decimated(self, factor: int) -> "SimTrace":
        return SimTrace(self.columns, self.data[::factor])
