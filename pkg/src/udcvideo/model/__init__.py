from .network import DAM, BACKWARD, FORWARD, D2RNet, Decoder, Encoder, ResBlock, Restored, count_params
from .inference import restore_clip, build_model

__all__ = ["BACKWARD", "DAM", "D2RNet", "Decoder", "Encoder", "FORWARD", "ResBlock", "Restored",
           "build_model", "count_params", "restore_clip"]
