from .acoustic import AcousticModel, VariancePrediction, durations_from_log, length_regulate
from .emotion import HierarchicalEmotionEncoder, ReferenceEncoder, emotion_ce_loss, weighted_layer_sum
from .layers import ConditionalLayerNorm, ConformerBlock
from .npc import MaskedContext, NPCModule, VectorQuantizer, npc_loss
from .system import EmotionalTTS

__all__ = [
    "AcousticModel",
    "ConditionalLayerNorm",
    "ConformerBlock",
    "EmotionalTTS",
    "HierarchicalEmotionEncoder",
    "MaskedContext",
    "NPCModule",
    "ReferenceEncoder",
    "VariancePrediction",
    "VectorQuantizer",
    "durations_from_log",
    "emotion_ce_loss",
    "length_regulate",
    "npc_loss",
    "weighted_layer_sum",
]
