"""Error-correction simulation under non-Markovian and crosstalk noise.

Process tensors for syndrome-extraction rounds, a strategic maximum-likelihood
decoder, and an MPS backend for codes too large for dense simulation.
"""

__version__ = "0.1.0"

from .channels import ChoiTensor, NoiseParams, choi_from_kraus, link_product
from .codes import StabilizerCode, five_qubit_code, load_code, steane_code
from .decoder import DecoderTable, MLDecoder, logical_failure_rate, ml_decode, score_branches
from .process import CapabilityError, branch_states, build_process_tensor, contract_tester

__all__ = [
    "__version__",
    "ChoiTensor",
    "NoiseParams",
    "choi_from_kraus",
    "link_product",
    "StabilizerCode",
    "five_qubit_code",
    "steane_code",
    "load_code",
    "DecoderTable",
    "MLDecoder",
    "logical_failure_rate",
    "ml_decode",
    "score_branches",
    "CapabilityError",
    "branch_states",
    "build_process_tensor",
    "contract_tester",
]
