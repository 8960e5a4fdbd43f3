"""Synthetic scene generation with known ground-truth flux.

A vertically integrated Gaussian plume provides the XCO2 enhancement field:
in wind-aligned coordinates (x downwind, y crosswind, meters) the column
mass density is

    V(x, y) = Qdot / (sqrt(2 pi) sigma_y(x) U) * exp(-y^2 / (2 sigma_y(x)^2))

for x > 0 and zero upwind, with sigma_y(x) = a * x**b. Column mass converts
to a dry-air mole-fraction enhancement through the standard-atmosphere
column number density p_s / (g * M_air).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .core_grid import Channel, GeoPoint, GridField
from .dataset import Sample, Source
from .errors import GapFillRequired, InvalidCoverage, SourceOutOfBounds

SECONDS_PER_YEAR = 365.0 * 86400.0          # 365-day year, consistent with disaggregation
KG_PER_MT = 1.0e9
CO2_MOLAR_MASS_KG = 0.044                   # kg/mol
SURFACE_PRESSURE_PA = 101325.0
GRAVITY_M_S2 = 9.80665
DRY_AIR_MOLAR_MASS_KG = 0.028964            # kg/mol
# moles of dry air per m^2 of column, ~3.566e5
DRY_AIR_COLUMN_MOL_M2 = SURFACE_PRESSURE_PA / (GRAVITY_M_S2 * DRY_AIR_MOLAR_MASS_KG)

DEFAULT_DATE = dt.date(2020, 1, 1)


@dataclass(frozen=True)
class GridSpec:
    """Shape and resolution of a simulation grid."""

    ny: int
    nx: int
    cell_size_km: float
    origin_xy_km: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.ny < 2 or self.nx < 2:
            raise ValueError("grid must be at least 2x2")
        if not self.cell_size_km > 0:
            raise ValueError("cell_size_km must be positive")


@dataclass(frozen=True)
class PlumeScenario:
    """Generative parameters for one synthetic scene.

    q_mt_per_yr is the true emission rate and the regression target.
    sigma_a (m^(1-b)) and sigma_b parameterize crosswind dispersion,
    no2_ratio is the NO2 column per unit XCO2 enhancement at the stack
    (mol/m^2 per ppm) and no2_lifetime_s drives its downwind decay.
    """

    q_mt_per_yr: float
    wind_u_ms: float
    wind_v_ms: float
    sigma_a: float = 0.8
    sigma_b: float = 0.9
    background_xco2_ppm: float = 410.0
    noise_sd_ppm: float = 0.7
    no2_ratio: float = 1.0e-4
    no2_lifetime_s: float = 4.0 * 3600.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q_mt_per_yr <= 60.0:
            raise ValueError("q_mt_per_yr must lie in (0, 60]")
        if self.wind_speed_ms < 0.5:
            raise ValueError("wind speed must be >= 0.5 m/s for an advected plume")
        if not self.sigma_a > 0:
            raise ValueError("sigma_a must be positive")
        if not 0.0 < self.sigma_b <= 1.0:
            raise ValueError("sigma_b must lie in (0, 1]")
        if not self.background_xco2_ppm > 0:
            raise ValueError("background_xco2_ppm must be positive")
        if self.noise_sd_ppm < 0:
            raise ValueError("noise_sd_ppm must be nonnegative")
        if not self.no2_ratio > 0:
            raise ValueError("no2_ratio must be positive")
        if not self.no2_lifetime_s > 0:
            raise ValueError("no2_lifetime_s must be positive")

    @property
    def wind_speed_ms(self) -> float:
        return float(np.hypot(self.wind_u_ms, self.wind_v_ms))

    @property
    def q_kg_per_s(self) -> float:
        return self.q_mt_per_yr * KG_PER_MT / SECONDS_PER_YEAR


def _check_source_inside(grid: GridSpec, source: GeoPoint) -> None:
    h = grid.cell_size_km
    i = int(np.floor((source.y_km - grid.origin_xy_km[1]) / h + 0.5))
    j = int(np.floor((source.x_km - grid.origin_xy_km[0]) / h + 0.5))
    if i < 0 or j < 0 or i >= grid.ny or j >= grid.nx:
        raise SourceOutOfBounds(f"source at ({source.x_km}, {source.y_km}) km lies outside the grid")


def _plume_geometry(scenario: PlumeScenario, grid: GridSpec, source: GeoPoint):
    """Downwind/crosswind distances (m) of every cell center from the source.

    Cells within one cell size of the source get a downwind floor of half a
    cell, which keeps sigma_y away from its x=0 singularity without touching
    the far-field mass flux.
    """
    h_m = grid.cell_size_km * 1000.0
    x = (grid.origin_xy_km[0] + np.arange(grid.nx) * grid.cell_size_km) * 1000.0
    y = (grid.origin_xy_km[1] + np.arange(grid.ny) * grid.cell_size_km) * 1000.0
    dx = x[None, :] - source.x_km * 1000.0
    dy = y[:, None] - source.y_km * 1000.0

    u, v = scenario.wind_u_ms, scenario.wind_v_ms
    speed = scenario.wind_speed_ms
    downwind = (dx * u + dy * v) / speed
    crosswind = (dy * u - dx * v) / speed

    near = np.hypot(dx, dy) <= h_m
    downwind = np.where(near, np.maximum(downwind, h_m / 2.0), downwind)
    return downwind, crosswind


def gaussian_plume_column(
    scenario: PlumeScenario,
    grid: GridSpec,
    source: GeoPoint,
    timestamp: dt.date = DEFAULT_DATE,
) -> GridField:
    """XCO2 enhancement field (ppm) of a single steady point source."""
    _check_source_inside(grid, source)
    downwind, crosswind = _plume_geometry(scenario, grid, source)

    ppm = np.zeros(downwind.shape)
    active = downwind > 0
    sigma = scenario.sigma_a * downwind[active] ** scenario.sigma_b
    prefactor = scenario.q_kg_per_s / (np.sqrt(2.0 * np.pi) * scenario.wind_speed_ms)
    # log-space form keeps tiny-sigma far-crosswind cells at 0 instead of nan
    with np.errstate(over="ignore"):
        col_density = prefactor * np.exp(
            -0.5 * (crosswind[active] / sigma) ** 2 - np.log(sigma)
        )
    ppm[active] = col_density / CO2_MOLAR_MASS_KG / DRY_AIR_COLUMN_MOL_M2 * 1.0e6

    return GridField(
        values=ppm,
        valid_mask=np.ones_like(ppm, dtype=bool),
        cell_size_km=grid.cell_size_km,
        origin_xy_km=grid.origin_xy_km,
        timestamp=timestamp,
        channel_id=Channel.XCO2,
    )


def simulate_scene(
    scenario: PlumeScenario,
    grid: GridSpec,
    source: GeoPoint,
    plant_id: str | None = None,
    date: dt.date = DEFAULT_DATE,
) -> Sample:
    """Render one 64x64 scene into a 4-channel Sample.

    XCO2 = background + plume + N(0, noise_sd); the NO2 column follows the
    plume scaled by no2_ratio and decays as exp(-x / (U * lifetime)) along
    the downwind distance x; wind channels are uniform. NO2 noise uses the
    SNR-matched scale no2_ratio * noise_sd_ppm. All randomness comes from a
    generator seeded with scenario.seed, so equal inputs give bit-identical
    samples.
    """
    if (grid.ny, grid.nx) != (Sample.PATCH_SIZE, Sample.PATCH_SIZE):
        raise ValueError(f"simulate_scene requires a {Sample.PATCH_SIZE}x{Sample.PATCH_SIZE} grid")

    plume = gaussian_plume_column(scenario, grid, source, timestamp=date).values
    downwind, _ = _plume_geometry(scenario, grid, source)

    rng = np.random.default_rng(scenario.seed)
    xco2 = scenario.background_xco2_ppm + plume + rng.normal(0.0, scenario.noise_sd_ppm, plume.shape)

    decay = np.exp(-np.maximum(downwind, 0.0) / (scenario.wind_speed_ms * scenario.no2_lifetime_s))
    no2 = scenario.no2_ratio * plume * decay
    no2 = no2 + rng.normal(0.0, scenario.no2_ratio * scenario.noise_sd_ppm, plume.shape)

    features = np.stack([
        xco2,
        no2,
        np.full(plume.shape, scenario.wind_u_ms),
        np.full(plume.shape, scenario.wind_v_ms),
    ]).astype(np.float32)

    return Sample(
        features=features,
        target_mt_per_yr=scenario.q_mt_per_yr,
        plant_id=plant_id if plant_id is not None else f"sim-{scenario.seed}",
        date=date,
        source=Source.SIMULATED,
        cell_size_km=grid.cell_size_km,
    )


def make_sparse_soundings(
    field: GridField,
    coverage: float,
    swath_width_cells: int,
    seed: int,
) -> GridField:
    """Mask a complete field down to diagonal swath stripes.

    Random diagonal bands are accumulated until the valid-cell count reaches
    round(coverage * n_cells); the last band is trimmed cell by cell so the
    count lands on the target exactly. Values are untouched.
    """
    if not 0.0 < coverage <= 1.0:
        raise InvalidCoverage(f"coverage must lie in (0, 1], got {coverage}")
    if swath_width_cells < 1:
        raise ValueError("swath_width_cells must be >= 1")
    if not field.complete:
        raise GapFillRequired("make_sparse_soundings expects a complete field")
    if coverage == 1.0:
        return field

    ny, nx = field.shape
    target = max(1, int(round(coverage * ny * nx)))
    rng = np.random.default_rng(seed)
    mask = np.zeros((ny, nx), dtype=bool)
    ii, jj = np.indices((ny, nx))

    count = 0
    while count < target:
        if rng.integers(2) == 0:
            diag = ii + jj                       # "/" stripes
            lo, hi = 0, ny + nx - 2
        else:
            diag = ii - jj                       # "\" stripes
            lo, hi = -(nx - 1), ny - 1
        start = int(rng.integers(lo, hi + 1))
        for line in range(start, start + swath_width_cells):
            new_i, new_j = np.nonzero((diag == line) & ~mask)
            room = target - count
            if len(new_i) > room:
                new_i, new_j = new_i[:room], new_j[:room]
            mask[new_i, new_j] = True
            count += len(new_i)
            if count >= target:
                break

    out = GridField(
        values=field.values,
        valid_mask=mask,
        cell_size_km=field.cell_size_km,
        origin_xy_km=field.origin_xy_km,
        timestamp=field.timestamp,
        channel_id=field.channel_id,
    )
    return out
