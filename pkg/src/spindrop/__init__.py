"""spindrop: simulate and analyze slow-centrifuge-driven molecular rotation
in a dissipative environment."""

__version__ = "0.1.0"

from .analysis import (  # noqa: F401
    DecayFit,
    PeakFit,
    SinusoidFit,
    extract_byz,
    fit_decaying_sinusoid,
    fit_exponential_decay,
    fit_resonance_peak,
)
from .config import ExperimentConfig, load_config, preset_config  # noqa: F401
from .dynamics import (  # noqa: F401
    QuantumState,
    RelaxationParams,
    RotorSystem,
    ensemble_run,
    field_free_relax,
    make_relaxation,
    propagate,
    propagate_rotating_frame,
    thermal_ensemble,
)
from .field import (  # noqa: F401
    EnvelopeSpec,
    FieldWaveform,
    cfcfg_from_interferometer,
    coupling_depth,
    intensity_to_field_squared,
)
from .observables import (  # noqa: F401
    AlignmentTrace,
    AxisDistribution,
    cos2theta_2d_exact,
    cos2theta_2d_sampled,
)
from .rotor import (  # noqa: F401
    Basis,
    BasisState,
    RotorParams,
    angle_operator,
    asymmetric_levels,
    droplet_params,
    gas_params,
    prolate_energy,
    quadrature_oracle,
    resonance_frequency,
    thermal_weights,
)
