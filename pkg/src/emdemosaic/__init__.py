"""EM demosaicing: color angles as an unknown diagonal kernel, brightness as a Gaussian field."""

from .beta import (BetaParams, RegressionTree, beta_link, build_link_graph, extract_attributes,
                   label_patches, predict_d, train_tree)
from .core import (CfaPattern, DomainError, MosaicFrame, PolarImage, RgbImage, h_factor,
                   mosaic_sample, polar_to_rgb, rgb_to_polar)
from .estep import (PosteriorSummary, assemble_moments, gaussian_posterior_exact, kalman_estep,
                    qn_estep)
from .metrics import MetricReport, cpsnr, scielab_approx
from .mstep import (SurrogateTerms, binary_search_max, coordinate_max_2d, local_surrogate_2d,
                    surrogate_constant, viterbi_chain)
from .pipeline import (EmConfig, EmState, balance_profile, bilinear_demosaic, closed_form_constant,
                       compose_estimate, em_constant, em_demosaic, em_piecewise_1d, laroche_init)
from .prior import (BrightnessPrior, LinkGraph, apply_precision, color_potential, mrf_energy,
                    spectral_multipliers)

__version__ = "0.1.0"
