"""Quadtree-context sketch modelling: SDF tiles, codebook tokens, leaf-wise refinement."""

from .errors import (ConfigurationError, DecodeError, ParseError, QuadSketchError, SchemaError,
                     TrainingError, VocabularyError)
from .evaluation import EvalReport, SyntheticSpec, build_synthetic_corpus, topk_accuracy
from .pipeline import (GenerationResult, PrototypeSampler, SamplingParams, classify_sketch,
                       generate_lowres, generate_sketch, refine_image)
from .predictor import (CountModel, TrainingExample, evaluate_cross_entropy, predict_distribution,
                        read_count_model, sample_masked_pretraining_example,
                        sample_training_example, train_count_model, write_count_model)
from .quadtree import (ContextSequence, LeafRef, QuadTree, Tile, build_quadtree, copy_structure,
                       extract_context, replace_leaf)
from .sdf import SdfGrid, clip_sdf, compute_sdf, read_sdf, resize_sdf, write_sdf
from .sketch_io import (Raster, RawDrawing, StrokePoint5, StrokeSketch, parse_raw_drawing,
                        rasterize, rdp_simplify, read_pgm, to_stroke5, write_pgm)
from .tokenizer import (Codebook, decode_tokens, encode_tile, fit_codebook, perplexity,
                        read_codebook, write_codebook)

__version__ = "0.1.0"
