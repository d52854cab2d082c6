"""Synthetic multi-zone building: an RC-network ground-truth generator.

Each zone carries two thermal states (air and envelope mass, stored as
deviations from a reference temperature). Air nodes exchange heat with
their zone's mass node and with grid-neighbor zones; mass nodes leak to
ambient; a small infiltration path couples air nodes to ambient directly.
HVAC heat flows enter the air nodes. The ambient response saturates with
tanh and a rectified solar-style gain rides on warm ambient excursions, so
the disturbance path is genuinely nonlinear yet a pure function of the
recorded ambient signal: the whole plant is exactly representable as a
structured state-space model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eigen
from .autodiff import Tensor
from .data import TimeSeriesDataset
from .errors import ConfigError, InputError, NumericError, ShapeError

STEPS_PER_DAY = 96  # 15-minute sampling
AIR_SPECIFIC_HEAT = 1.005  # kJ/(kg K), dry air near 300 K


@dataclass
class BuildingParams:
    """Discrete-time RC-network parameters (15-minute step)."""

    a: np.ndarray               # state transition [n_x, n_x]
    b: np.ndarray               # heat-flow input matrix [n_x, n_zones], K per kW
    c: np.ndarray               # output selector [n_zones, n_x], picks air nodes
    adjacency: list[tuple[int, int]]
    ambient_coupling: np.ndarray  # per-state conduction to ambient
    solar_gain: np.ndarray        # per-state rectified-gain coefficient
    cp: float = AIR_SPECIFIC_HEAT
    ref_temp: float = 288.15      # K; states are deviations from this
    return_temp: float = 295.0    # K; nominal return-air temperature
    sat_scale: float = 12.0       # K; tanh saturation scale of conduction
    solar_onset: float = 288.15   # K; ambient level where solar gain kicks in
    spectral_radius: float = 0.0

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_zones(self) -> int:
        return self.b.shape[1]


@dataclass
class ExcitationConfig:
    """Deterministic excitation-signal synthesis for dataset generation."""

    days: int = 30
    mdot_range: tuple[float, float] = (0.0, 0.3)        # kg/s per zone
    supply_temp_range: tuple[float, float] = (288.0, 303.0)  # K
    ambient_mean: float = 288.15                        # K
    ambient_amplitude: float = 5.0                      # K daily swing
    switch_period_steps: int = 12                       # hold time of u channels
    noise_std: float = 0.0                              # K, on ambient
    seed: int = 0

    def __post_init__(self):
        if self.days < 1:
            raise ConfigError("need at least one day of data")
        if self.mdot_range[1] < self.mdot_range[0] or \
           self.supply_temp_range[1] < self.supply_temp_range[0]:
            raise ConfigError("excitation ranges must be nonempty")
        if self.switch_period_steps < 1:
            raise ConfigError("switch period must be positive")


def _grid_adjacency(n_zones: int) -> list[tuple[int, int]]:
    rows = max(1, int(np.sqrt(n_zones)))
    cols = -(-n_zones // rows)
    pairs = []
    for z in range(n_zones):
        r, c = divmod(z, cols)
        if c + 1 < cols and z + 1 < n_zones:
            pairs.append((z, z + 1))
        if r + 1 < rows and z + cols < n_zones:
            pairs.append((z, z + cols))
    return pairs


def build_rc_network(n_zones: int, seed: int = 0,
                     target_radius: float = 0.98) -> BuildingParams:
    """Randomized but seed-deterministic building with a dissipative spectrum.

    Couplings are drawn in per-step units, then the whole heat-transfer part
    is rescaled so the spectral radius (checked with the QR eigensolver)
    lands on the target inside [0.95, 0.995].
    """
    if n_zones < 1:
        raise ConfigError("need at least one zone")
    rng = np.random.default_rng(seed)
    n_x = 2 * n_zones
    adjacency = _grid_adjacency(n_zones)

    coupling = np.zeros((n_x, n_x))  # off-diagonal heat exchange, per step
    air = np.arange(n_zones)
    mass = n_zones + air

    wall = rng.uniform(0.10, 0.20, n_zones)          # air <-> own mass
    cap_ratio = rng.uniform(8.0, 15.0, n_zones)      # mass/air heat capacity
    amb_mass = rng.uniform(0.02, 0.05, n_zones)      # mass -> ambient
    amb_air = rng.uniform(0.004, 0.010, n_zones)     # infiltration
    coupling[air, mass] = wall
    coupling[mass, air] = wall / cap_ratio
    for i, j in adjacency:
        zz = rng.uniform(0.02, 0.05)
        coupling[i, j] += zz
        coupling[j, i] += zz

    ambient = np.zeros(n_x)
    ambient[air] = amb_air
    ambient[mass] = amb_mass

    a = coupling.copy()
    np.fill_diagonal(a, 1.0 - coupling.sum(axis=1) - ambient)

    b = np.zeros((n_x, n_zones))
    b[air, air] = 900.0 / rng.uniform(2500.0, 4000.0, n_zones)  # dt / C_air

    solar = np.zeros(n_x)
    solar[mass] = rng.uniform(0.01, 0.03, n_zones)

    # rescale all heat transfer so the Perron root hits the target
    rho0 = eigen.eigenvalues(a).spectral_radius
    alpha = (1.0 - target_radius) / (1.0 - rho0)
    a = np.eye(n_x) + alpha * (a - np.eye(n_x))
    b = alpha * b
    ambient = alpha * ambient
    solar = alpha * solar
    if np.any(a < 0):
        raise NumericError("transition matrix left the nonnegative cone after scaling")
    rho = eigen.eigenvalues(a).spectral_radius
    if not (0.95 <= rho <= 0.995):
        raise NumericError(f"spectral radius {rho:.6f} missed [0.95, 0.995]")

    c = np.zeros((n_zones, n_x))
    c[air, air] = 1.0
    return BuildingParams(a=a, b=b, c=c, adjacency=adjacency,
                          ambient_coupling=ambient, solar_gain=solar,
                          spectral_radius=rho)


def heat_flow(mdot: np.ndarray, supply_temp: np.ndarray, return_temp: np.ndarray,
              cp: float = AIR_SPECIFIC_HEAT) -> np.ndarray:
    """Convective heat flow in kW: mdot * cp * (supply - return)."""
    mdot = np.asarray(mdot, dtype=np.float64)
    if np.any(mdot < 0):
        raise InputError("mass flows must be nonnegative")
    return mdot * cp * (np.asarray(supply_temp) - np.asarray(return_temp))


def ambient_response(params: BuildingParams, d) -> np.ndarray:
    """Nonlinear per-state disturbance: saturated conduction plus rectified
    solar-style gain. Exactly zero at the reference temperature."""
    d = np.asarray(d, dtype=np.float64)
    dev = d - params.ref_temp
    conduction = params.ambient_coupling * (params.sat_scale
                                            * np.tanh(dev / params.sat_scale))
    solar = params.solar_gain * np.maximum(0.0, d - params.solar_onset)
    return conduction + solar


def step_emulator(params: BuildingParams, x: np.ndarray, q: np.ndarray,
                  d: float) -> np.ndarray:
    """One 15-minute update: x+ = A x + B q + f_d(d)."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if x.shape[0] != params.n_states or q.shape[0] != params.n_zones:
        raise ShapeError(f"state/heat-flow dims {x.shape[0]}/{q.shape[0]} do not match "
                         f"building ({params.n_states}/{params.n_zones})")
    return params.a @ x + params.b @ q + ambient_response(params, d)


def _held_signal(rng, steps: int, n: int, lo: float, hi: float, hold: int) -> np.ndarray:
    """Piecewise-constant uniform draws, held for `hold` steps per channel."""
    blocks = -(-steps // hold)
    draws = rng.uniform(lo, hi, size=(blocks, n))
    return np.repeat(draws, hold, axis=0)[:steps]


def generate_dataset(params: BuildingParams, excitation: ExcitationConfig,
                     return_states: bool = False):
    """Excite the building and record (y, u, d) rows; u packs [mdot; tsup].

    One unrecorded warm-up day settles the initial transient so every split
    is statistically alike. Fixed seeds give bitwise-identical output.
    """
    rng = np.random.default_rng(excitation.seed)
    steps = excitation.days * STEPS_PER_DAY
    total = steps + STEPS_PER_DAY  # warm-up day in front
    nz = params.n_zones

    t = np.arange(total)
    d_sig = (excitation.ambient_mean
             + excitation.ambient_amplitude * np.sin(2.0 * np.pi * t / STEPS_PER_DAY))
    if excitation.noise_std > 0:
        d_sig = d_sig + rng.normal(0.0, excitation.noise_std, total)
    mdot = _held_signal(rng, total, nz, *excitation.mdot_range,
                        excitation.switch_period_steps)
    tsup = _held_signal(rng, total, nz, *excitation.supply_temp_range,
                        excitation.switch_period_steps)

    # column-vector state so the arithmetic (and BLAS paths) match a rollout
    # of the hand-wired structured model bitwise
    x = np.zeros((params.n_states, 1))
    y_rows = np.empty((steps, nz))
    states = np.empty((steps, params.n_states)) if return_states else None
    keep = 0
    for k in range(total):
        if k >= STEPS_PER_DAY:
            if states is not None:
                states[keep] = x[:, 0]
            y_rows[keep] = (params.c @ x)[:, 0] + params.ref_temp
            keep += 1
        q = heat_flow(mdot[k], tsup[k], params.return_temp, params.cp)
        flow = params.b @ q
        amb = ambient_response(params, d_sig[k])
        x = params.a @ x + flow[:, None] + amb[:, None]

    u = np.hstack([mdot[STEPS_PER_DAY:], tsup[STEPS_PER_DAY:]])
    ds = TimeSeriesDataset(y_rows, u, d_sig[STEPS_PER_DAY:, None])
    if return_states:
        return ds, states
    return ds


class FunctionBlock:
    """Adapter exposing a plain numpy function through the block interface.

    Gradients do not flow through it (outputs are constants on the tape);
    it exists so a hand-wired plant can stand in for a learned model.
    """

    def __init__(self, fn, in_dim: int, out_dim: int, name: str = "fn"):
        self.fn = fn
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name

    def forward(self, z: Tensor) -> Tensor:
        if z.shape[0] != self.in_dim:
            raise ShapeError(f"{self.name}: expected dim {self.in_dim}, got {z.shape[0]}")
        return Tensor(self.fn(z.values))

    def reset(self) -> None:
        pass

    def params(self) -> list:
        return []

    def square_weights(self) -> list:
        return []


def as_structured_ssm(params: BuildingParams, horizon: int):
    """Wrap the plant as a structured model with hand-wired blocks.

    The observer cannot reconstruct hidden mass states from outputs alone,
    so rollouts of the wrapped model must anchor with an explicit x0 (the
    recorded state). Forward arithmetic matches generate_dataset exactly.
    """
    from .linmap import LinearMap
    from .ssm import StructuredSSM

    n_x, nz = params.n_states, params.n_zones

    def from_u(u_vals):
        out = np.empty((n_x, u_vals.shape[1]))
        for col in range(u_vals.shape[1]):
            q = heat_flow(u_vals[:nz, col], u_vals[nz:, col],
                          params.return_temp, params.cp)
            out[:, col] = params.b @ q
        return out

    def from_d(d_vals):
        out = np.empty((n_x, d_vals.shape[1]))
        for col in range(d_vals.shape[1]):
            out[:, col] = ambient_response(params, float(d_vals[0, col]))
        return out

    transition = FunctionBlock(lambda x: params.a @ x, n_x, n_x, "plant.fx")
    input_block = FunctionBlock(from_u, 2 * nz, n_x, "plant.fu")
    disturbance = FunctionBlock(from_d, 1, n_x, "plant.fd")
    output_map = LinearMap(params.c, np.full(nz, params.ref_temp),
                           name="plant.fy", trainable=False)

    def no_observer(_):
        raise NumericError("hand-wired plant has no observer; pass x0 explicitly")

    observer = FunctionBlock(no_observer, horizon * nz, n_x, "plant.fo")
    return StructuredSSM(transition, input_block, disturbance, output_map,
                         observer, horizon)


def write_params_csv(params: BuildingParams, path) -> None:
    """Flat (matrix, row, col, value) dump of A, B, C for auditing."""
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix", "row", "col", "value"])
        for name, mat in (("A", params.a), ("B", params.b), ("C", params.c)):
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    writer.writerow([name, i, j, f"{mat[i, j]:.17g}"])
