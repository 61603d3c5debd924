"""Full pretraining model: frontends + cross-encoder + task heads + decoders."""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DecoderConfig, ModelConfig
from .dataset import Batch, SampleView
from .decoder import GenerationParams, TransformerDecoder
from .encoder import CrossEncoder, JointSequence, cls_state
from .errors import ContractError, ValidationError
from .frontends import Frontends
from .layers import ParamStore
from .losses import (
    LossBundle,
    TaskHeads,
    aggregate,
    mafr_loss,
    mam_nce_loss,
    mlm_loss,
    mrc_loss,
    mvfr_loss,
    sm_loss,
    sm_scores,
)


class PretrainModel:
    def __init__(
        self,
        mcfg: ModelConfig,
        dcfg: DecoderConfig,
        seed: int = 0,
        dtype=np.float32,
        bos_id: int = 3,
    ):
        mcfg.validate()
        self.mcfg = mcfg
        self.dcfg = dcfg
        self.bos_id = bos_id
        self.store = ParamStore(np.random.default_rng(seed), dtype)
        self.frontends = Frontends(self.store, mcfg)
        self.encoder = CrossEncoder(self.store, mcfg)
        self.heads = TaskHeads(self.store, mcfg)
        self.text_decoder = TransformerDecoder(
            self.store, "tdec", mcfg, dcfg, n_symbols=mcfg.vocab_size,
            max_len=mcfg.max_text_len + 2, bos_index=bos_id,
        )
        self.code_decoder = TransformerDecoder(
            self.store, "idec", mcfg, dcfg, n_symbols=mcfg.codebook_size,
            max_len=mcfg.code_grid * mcfg.code_grid + 1, bos_index=None,
        )

    @property
    def dtype(self):
        return self.store.dtype

    def params(self) -> Dict[str, Tensor]:
        return self.store.as_dict()

    # -- forward -----------------------------------------------------------------

    def encode_view(
        self, view: SampleView, rng: Optional[np.random.Generator] = None
    ) -> Tuple[Tensor, JointSequence]:
        """Embed the present modalities, assemble, and run the cross-encoder."""
        text_emb = None
        if not view.drop_text and view.text_ids.size:
            text_emb = self.frontends.embed_text(view.text_ids)
        vision_emb = None
        if not view.drop_vision and view.region_features.shape[0]:
            vision_emb = self.frontends.embed_vision(
                view.region_features.astype(self.dtype), view.region_locations.astype(self.dtype)
            )
        audio_emb = None
        if not view.drop_audio and view.audio.shape[0]:
            audio_emb = self.frontends.embed_audio(view.audio.astype(self.dtype))
        seq = self.encoder.assemble(text_emb, vision_emb, audio_emb)
        encoded = self.encoder.encode(seq, rng)
        return encoded, seq

    def loss_bundle(
        self,
        batch: Batch,
        weights: Dict[str, float],
        rng: Optional[np.random.Generator] = None,
    ) -> LossBundle:
        """Per-sample objective losses for the batch's task, averaged and weighted."""
        parts: Dict[str, List[Tensor]] = {}
        skipped: Dict[str, int] = {}

        def add(name: str, value: Optional[Tensor]):
            if value is None:
                skipped[name] = skipped.get(name, 0) + 1
            else:
                parts.setdefault(name, []).append(value)

        for i in range(batch.size):
            view = batch.sample(i)
            encoded, seq = self.encode_view(view, rng)
            if batch.task == "mlm":
                plan = batch.token_plans[i]
                add("mlm", mlm_loss(encoded, seq.spans["text"][0], plan, batch.text_targets[i], self.heads))
            elif batch.task == "mvm":
                plan = batch.token_plans[i]
                start = seq.spans["vision"][0]
                add("mvfr", mvfr_loss(encoded, start, plan, batch.vision_targets[i], self.heads))
                add("mrc", mrc_loss(encoded, start, plan, batch.vision_target_labels[i], self.heads))
            elif batch.task == "mam":
                plan = batch.token_plans[i]
                start = seq.spans["audio"][0]
                add("mafr", mafr_loss(encoded, start, plan, batch.audio_targets[i], self.heads))
                add("mam_nce", mam_nce_loss(encoded, start, plan, batch.audio_original[i], self.heads))
            elif batch.task == "dtr":
                loss, _ = self.text_decoder.sequence_nll(
                    batch.dtr_targets[i], encoded, seq.attention_mask, rng
                )
                add("dtr", loss)
            elif batch.task == "dir":
                loss, _ = self.code_decoder.sequence_nll(
                    batch.dir_targets[i], encoded, seq.attention_mask, rng
                )
                add("dir", loss)
            elif batch.task == "sm":
                add("sm", sm_loss(cls_state(encoded), batch.sm_labels[i], self.heads))
            else:
                raise ContractError(f"unknown task {batch.task!r}")

        means = {name: ad.mean_scalars(vals) for name, vals in parts.items()}
        bundle = aggregate(means, weights)
        bundle.skipped = skipped
        return bundle

    # -- frozen-model consumers ----------------------------------------------------

    def pooled_features(self, view: SampleView) -> np.ndarray:
        """Mean encoder output over visible positions (linear-probe features)."""
        encoded, seq = self.encode_view(view)
        return encoded.data[seq.attention_mask].mean(axis=0)

    def match_scores(self, view: SampleView) -> np.ndarray:
        """Sigmoid scores of the five matching cases from the [CLS] state."""
        encoded, _ = self.encode_view(view)
        return sm_scores(cls_state(encoded), self.heads)

    def generate_text_ids(self, view: SampleView, gen: GenerationParams, eos_id: int) -> List[int]:
        encoded, seq = self.encode_view(view)
        return self.text_decoder.generate(encoded, seq.attention_mask, gen, stop_id=eos_id)

    def generate_codes(self, view: SampleView, gen: GenerationParams) -> np.ndarray:
        """Exactly code_grid^2 image codes, row-major."""
        encoded, seq = self.encode_view(view)
        n = self.mcfg.code_grid * self.mcfg.code_grid
        ids = self.code_decoder.generate(encoded, seq.attention_mask, gen, forced_len=n)
        return np.array(ids, dtype=np.int64).reshape(self.mcfg.code_grid, self.mcfg.code_grid)


def view_from_record(record, drop_text=False, drop_vision=False, drop_audio=False) -> SampleView:
    """Uncorrupted single-record view, for evaluation-time encoding."""
    return SampleView(
        text_ids=np.asarray(record.token_ids, dtype=np.int64),
        region_features=np.asarray(record.region_features),
        region_locations=np.asarray(record.region_locations),
        audio=np.asarray(record.audio),
        drop_text=drop_text,
        drop_vision=drop_vision,
        drop_audio=drop_audio,
    )
