"""Flow-table cache simulation with a hashed perceptron reuse predictor."""
from .cache import (CacheConfig, SimulationResult, build_next_use, lifecycle_export,
                    set_index, simulate, simulate_hp, simulate_lru, simulate_min)
from .features import SELECTED_FEATURES, FeatureContext, assemble, assemble_vector, fold16
from .flow import FlowKey, FlowTable, canonical_key
from .perceptron import FlowCorrelator, PredictorConfig, infer, reinforce
from .trace_io import (PacketRecord, generate_synthetic, parse_native, parse_pcap,
                       scan_and_bursty_spec, trace_stats, write_native)

__version__ = "0.1.0"
