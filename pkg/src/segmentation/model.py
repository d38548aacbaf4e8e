import logging
from typing import TYPE_CHECKING, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.decoder.allmlp import AllMLPDecoder
from src.decoder.spatial import DecoderConfig, SpatialDecoder
from src.encoder.mit import EncoderConfig, FeaturePyramid, MixTransformer
from src.tensor_core import functional as F
from src.tensor_core.module import Module
from src.tensor_core.tensor import Tensor

if TYPE_CHECKING:
    from src.config import RunConfig

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    decoder_kind: Literal["spatial", "allmlp"] = Field("spatial", description="Segmentation head on top of the encoder")
    allmlp_embed_dim: int = Field(128, ge=1, description="Embedding width of the All-MLP head")


class WoundFormer(Module):
    """Encoder plus segmentation head.

    ``forward`` returns logits at 1/4 of the input extent; ``forward_full`` upsamples them
    bilinearly to the input extent, which is where losses and metrics are computed.
    """

    def __init__(
        self,
        encoder_cfg: Optional[EncoderConfig] = None,
        decoder_cfg: Optional[DecoderConfig] = None,
        model_cfg: Optional[ModelConfig] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.encoder_cfg = encoder_cfg or EncoderConfig.micro()
        self.decoder_cfg = decoder_cfg or DecoderConfig()
        self.model_cfg = model_cfg or ModelConfig()
        rng = rng if rng is not None else np.random.default_rng(0)

        self.encoder = MixTransformer(self.encoder_cfg, rng)
        channels = self.encoder_cfg.stage_channels
        if self.model_cfg.decoder_kind == "allmlp":
            self.decoder = AllMLPDecoder(
                channels,
                self.model_cfg.allmlp_embed_dim,
                self.decoder_cfg.num_classes,
                rng,
                bn_eps=self.decoder_cfg.bn_eps,
                bn_momentum=self.decoder_cfg.bn_momentum,
                init_std=self.encoder_cfg.init_std,
                classifier_init_std=self.decoder_cfg.classifier_init_std,
            )
        else:
            self.decoder = SpatialDecoder(channels, self.decoder_cfg, rng)
        logger.info(
            f"Built {self.model_cfg.decoder_kind} model with {self.num_parameters():,} parameters "
            f"({self.decoder_cfg.num_classes} classes)"
        )

    @property
    def num_classes(self) -> int:
        return self.decoder_cfg.num_classes

    def encode(self, image: Tensor) -> FeaturePyramid:
        return self.encoder(image)

    def forward(self, image: Tensor) -> Tensor:
        return self.decoder(self.encoder(image))

    def forward_full(self, image: Tensor) -> Tensor:
        logits = self.forward(image)
        return F.bilinear_upsample(logits, image.shape[2], image.shape[3])

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Argmax class map [N,H,W] of full-resolution logits; run outside any tape"""
        logits = self.forward_full(Tensor(images))
        return np.argmax(logits.data, axis=1)


def build_model(config: "RunConfig", decoder_kind: Optional[str] = None) -> WoundFormer:
    """Model described by a run config, initialised from the run's seed"""
    model_cfg = config.model
    if decoder_kind is not None:
        model_cfg = model_cfg.model_copy(update={"decoder_kind": decoder_kind})
    return WoundFormer(config.encoder, config.decoder, model_cfg, np.random.default_rng(config.train.seed))
