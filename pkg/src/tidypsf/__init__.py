"""Time-averaged dynamic PSF engineering: simulation, optimisation and non-convexity certificates."""

__version__ = "0.1.0"

from .optics import (  # noqa: E402
    Aperture,
    OpticalRecipe,
    PhaseMaskSequence,
    defocus_phase,
    parseval_energy,
    psf_from_pupil,
    pupil_function,
    render_psf_stack,
)
from .imaging import (  # noqa: E402
    LayeredScene,
    SwitchingConfig,
    capture_single,
    capture_time_averaged,
    capture_with_switching,
    depth_to_layers,
)
from .nonconvexity import (  # noqa: E402
    autocorrelation,
    certify_average_escapes,
    certify_single_mask,
    find_support_pair,
)

__all__ = [
    "Aperture", "OpticalRecipe", "PhaseMaskSequence", "defocus_phase", "parseval_energy",
    "psf_from_pupil", "pupil_function", "render_psf_stack", "LayeredScene", "SwitchingConfig",
    "capture_single", "capture_time_averaged", "capture_with_switching", "depth_to_layers",
    "autocorrelation", "certify_average_escapes", "certify_single_mask", "find_support_pair",
]
