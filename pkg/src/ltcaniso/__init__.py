"""Fitting and runtime for LTC approximations of the anisotropic GGX BRDF.

The package covers the full pipeline: spherical-polygon cosine integrals
(core), the GGX model with exact cosine-weighted sampling and MC oracles
(ggx), the LTC distribution family (ltc), sliced-Wasserstein fitting and
alignment (fit), the 4D look-up table with its binary format (lut), and a
CPU sphere renderer for validation (render, images).
"""

__version__ = "0.1.0"

from .core import (Frame, SphericalPolygon, angles_from_direction,
                   clip_to_upper_hemisphere, direction_from_angles,
                   polygon_cosine_integral, sample_clamped_cosine)
from .fit import (AlignConfig, FitConfig, FitError, FitResult, align,
                  fit_ltc, fit_ltc_full, sw_loss, sw_loss_gradient)
from .ggx import (BrdfSample, DegenerateConfigError, GgxConfig,
                  brdf_cos_eval, directional_albedo, fresnel_weight, g2,
                  mc_polygon_integral, ndf_eval, sample_brdf_cos,
                  sample_brdf_cos_batch, sample_vndf, smith_lambda)
from .images import Image, image_metrics, read_pfm, write_pfm, write_ppm
from .ltc import (LtcMatrix, XYFlip, ZRotation, apply_rotation_flip,
                  isotropic_ltc, ltc_eval, ltc_polygon_integral, ltc_sample)
from .lut import (BuildError, BuildResult, FetchResult, LtcTable4D,
                  RemapResult, TableFormatError, build_table, deserialize,
                  fetch, fetch_many, normalize_matrix, pack_3d,
                  postprocess_symmetries, remap_query, serialize,
                  validate_table)
from .render import (Camera, LightQuad, Material, Scene, plot_lobe,
                     plot_lobe_pair, render, scene_from_json, scene_to_json,
                     shade_ltc, shade_reference)
