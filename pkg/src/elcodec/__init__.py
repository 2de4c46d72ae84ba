"""Video enhancement layer built from a compressed, online-trained restoration CNN."""

from .arith import ac_decode, ac_encode
from .baselayer import FrameGroup, encode_group, ingest, toy_decode, toy_encode
from .bdrate import RateDistortionCurve, bd_rate
from .modelcodec import ModelCodec, deserialize_el, empirical_entropy, serialize_el
from .network import ModelCheckpoint, NetworkConfig, QuantizedModel, TrainingConfig, enhance_frame, train_online
from .rateutility import NO_EL, select

__all__ = [
    "FrameGroup", "ModelCheckpoint", "ModelCodec", "NO_EL", "NetworkConfig", "QuantizedModel",
    "RateDistortionCurve", "TrainingConfig", "ac_decode", "ac_encode", "bd_rate", "deserialize_el",
    "empirical_entropy", "encode_group", "enhance_frame", "ingest", "select", "serialize_el",
    "toy_decode", "toy_encode", "train_online",
]
__version__ = "0.1.0"
