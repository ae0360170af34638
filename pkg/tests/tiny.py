"""Small shared fixtures for fast model-level tests."""
from hybrid_ar.acoustic import AcousticConfig
from hybrid_ar.aggregation import AggregationConfig
from hybrid_ar.data import SyntheticCorpusSpec, generate_synthetic_corpus
from hybrid_ar.fusion import FusionConfig
from hybrid_ar.model import ModelConfig


def tiny_config(fusion_mode=None, n_accents=2, dropout=0.0):
    ac = AcousticConfig.tiny(dropout=dropout)
    ag = AggregationConfig(d_emb=8, d_attn=8, d_ff=16, heads=2, n_layers=1, d_accent=n_accents,
                           dropout=dropout)
    fusion = FusionConfig(fusion_mode, 8, 4) if fusion_mode else None
    return ModelConfig(ac, ag, fusion)


def tiny_corpus(n_accents=2, speakers=2, utts=4, seed=0, **kw):
    return generate_synthetic_corpus(SyntheticCorpusSpec(
        n_accents=n_accents, n_speakers_per_accent=speakers, n_utts_per_speaker=utts, seed=seed, **kw))
