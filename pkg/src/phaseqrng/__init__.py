"""Quantum random numbers from laser phase noise: source model, entropy
accounting, Toeplitz extraction, statistical checks and phase stabilization."""

from .bits import BitStream, read_bits, write_bits
from .entropy import EntropyReport, HistogramSpec, empirical_min_entropy, entropy_report, gaussian_min_entropy
from .extractor import ExtractionPolicy, ToeplitzExtractor, ToeplitzSpec, extract_stream, output_length
from .noisemodel import NoiseModelParams, fit_variance_model, optimal_power
from .physsim import AdcConfig, SimConfig, VoltageTrace, simulate_trace
from .pipeline import PipelineConfig, RunReport, preset, run_pipeline
from .randstats import aggregate, autocorrelation, nist_subset, run_tests
from .stabilizer import PidGains, PlantConfig, run_closed_loop, run_open_loop

__version__ = "0.1.0"
