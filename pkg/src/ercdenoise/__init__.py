"""Rician Monte Carlo denoising for coil-intensity-corrected endorectal MR images.

The pipeline: model the coil's SNR gain versus distance
(:mod:`ercdenoise.profile`), turn it into a per-pixel Rician noise scale,
and reconstruct each pixel as the acceptance-weighted mean of similar pixels
drawn from its neighbourhood (:mod:`ercdenoise.sampler`).
"""

from .errors import (
    ConfigError,
    DegenerateError,
    DomainError,
    ErcDenoiseError,
    InsufficientDataError,
    InvalidArgumentError,
    InvalidSpecError,
    ParseError,
)
from .metrics import cnr_db, edge_preservation, f_pseudosigma, paired_p_value, rank_sum, snr_db
from .phantom import (
    Lesion,
    PhantomSpec,
    apply_nonstationary_rician,
    generate_phantom,
    preset_regions,
)
from .profile import (
    CoilGeometry,
    CoilKind,
    ErcSnrProfile,
    ScaleMap,
    distance_map,
    fit_scale_map,
    scale_map_from_profile,
    snr_gain,
)
from .rician import (
    RicianParams,
    fit_rician_ml,
    fit_rician_ml_many,
    log_bessel_i0,
    rician_log_pdf,
    sample_rician,
)
from .sampler import (
    SamplerConfig,
    WeightedSampleSet,
    draw_samples,
    extract_patch,
    log_acceptance,
    posterior_mean,
    reconstruct,
)

__version__ = "0.1.0"
