"""Desk-scale laboratory for low-frequency resonances in grid-forming
voltage-source converters.

The package builds one joint ODE from a converter control scheme and a
Thevenin grid, solves its operating point, integrates scenarios, fits
ringdowns, and classifies what it finds.  Start with :mod:`gfmlab.presets`
for the bench parameter set and :func:`run_scenario` for a first trace.
"""

from .errors import (
    ConfigError,
    DegenerateVoltageError,
    GfmLabError,
    InsufficientDataError,
    NoDominantModeError,
    NoEquilibriumError,
    NonProperWarning,
    NotAnEquilibriumError,
    NumericFailureError,
    ParameterError,
    VariantMismatchError,
)
from .plant import (
    OMEGA_1,
    ComplexDq,
    ConverterParams,
    GridParams,
    OperatingPoint,
    PerUnitBase,
    SystemParams,
    abc_to_dq,
    circuit_derivatives,
    dq_to_abc,
    instantaneous_power,
    make_grid_from_scr,
    series_circuit_derivatives,
)
from .blocks import (
    ActiveSusceptanceAddon,
    AvcConfig,
    ClosedLoopVvc,
    ControlScheme,
    DroopLpf,
    GfmVccAddon,
    HybridAddon,
    InnerAddon,
    LeadLag,
    OpenLoopVvc,
    OuterVoltageConfig,
    PdcConfig,
    PiGains,
    PrfConfig,
    PureDroop,
    VaAddon,
    ViAddon,
    VrConfig,
    as_feedback,
    closed_loop_inner_step,
    inner_state_labels,
    open_loop_inner_step,
    open_loop_state_labels,
    outer_state_labels,
    outer_voltage_step,
    pll_step,
    psc_from_vsm,
    psc_state_labels,
    psc_step,
)
from .pdc import PdcController, PdcDesign, RationalTf, design_pdc
from .system import FreezeMode, GfmSystem, Refs, solve_operating_point
from .smallsignal import (
    LinearModel,
    Mode,
    aggregate_series_rl,
    damped_frequency_hz,
    droop_gain_limit,
    droop_pole_estimate,
    eigenmodes,
    linearize,
    partition_vr_poles,
    plant_linear_model,
    plant_poles,
    psc_second_order,
    series_plant_poles,
    vr_design_kp,
    vr_mode_poles,
    write_modes_csv,
)
from .sim import (
    Scenario,
    SetGrid,
    SimConfig,
    SimTrace,
    StepPref,
    StepQref,
    StepVref,
    apply_event,
    run_from_operating_point,
    run_scenario,
)
from .ringdown import (
    CouplingCheck,
    ResonanceReport,
    RingdownMode,
    Spectrum,
    TraceAnalysis,
    analyze_trace,
    classify_resonance,
    coupling_check,
    estimate_spectrum,
    fit_ringdown,
    pencil_modes,
    reconstruct_phase_current,
    write_report_csv,
    write_report_txt,
)
from . import presets

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
