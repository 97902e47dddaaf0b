"""Learned compression of massive-MIMO OFDM channel state information."""

import os as _os

# must happen before numpy loads its BLAS
_threads = _os.environ.get("CSICODEC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .bitstream import Bitstream, BitstreamError  # noqa: E402
from .channel import (  # noqa: E402
    ChannelGenConfig,
    Dataset,
    DatasetFormatError,
    desk_config,
    generate_channel,
    generate_channels,
    read_dataset,
    write_dataset,
)
from .checkpoint import CheckpointError, ModelCheckpoint  # noqa: E402
from .codec import (  # noqa: E402
    PadRecord,
    RdPoint,
    compress,
    crop,
    decompress,
    evaluate,
    pad_to_16,
    rd_sweep,
    write_rd_csv,
)
from .entropy import (  # noqa: E402
    ChecksumError,
    DecodeError,
    EntropyModel,
    FactorizedPrior,
    entropy_decode,
    entropy_encode,
    quantize,
    rate_estimate,
)
from .metrics import cosine_corr, nmse  # noqa: E402
from .network import ArchConfig, Autoencoder, feature_decode, feature_encode  # noqa: E402
from .training import LAMBDA_TABLE, TrainConfig, lambda_id_for, lambda_value, train  # noqa: E402

__version__ = "0.1.0"
