"""Texture-template fingerprint matching.

Dense grids of oriented sample points ("virtual minutiae") with local
texture descriptors stand in for true minutiae, which poor-quality
latent prints often lack. Matching pairs descriptors across templates
and keeps the pairings that survive two rounds of spectral geometric
filtering; the surviving similarities sum to the match score.
"""

from .errors import (BadMagicError, ConfigError, DescriptorLengthError,
                     DescriptorMismatchError, DimensionError, FormatError,
                     TexmatchError, TruncatedError, ValidationError,
                     VersionError)
from .matcher import (CompatibilityMatrix, Correspondence, GraphMatchParams,
                      SimilarityMatrix, build_h2_modified, build_h2_original,
                      match_templates, match_templates_timed,
                      normalize_similarity, select_top_n, similarity_matrix,
                      spectral_match, truncated_sigmoid)
from .pgmio import read_pgm, write_pgm
from .ridgeflow import (GrayImage, OrientationField, RoiMask,
                        estimate_orientation_field, orientation_at,
                        segment_roi)
from .search import (CmcCurve, Gallery, SearchResult, cmc, fuse_scores,
                     search)
from .synth import (PlantedPair, SynthConfig, brute_force_match,
                    derive_latent, generate_reference, planted_pair,
                    random_template)
from .template import (ExtractionConfig, TextureTemplate, VirtualMinutia,
                       build_template, deserialize, place_virtual_minutiae,
                       read_template, serialize, write_template)
from .descriptor import (extract_patch, import_descriptors,
                         minutia_descriptor, patch_descriptor,
                         template_descriptors, write_descriptor_file)

__version__ = "0.1.0"
