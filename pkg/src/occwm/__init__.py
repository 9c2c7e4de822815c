"""occwm: a desk-scale occupancy-language-action generative world model.

Subpackages:
  occ      semantic occupancy grids, pillar sparsification, metrics, codecs
  nn       float32 tensors with reverse-mode autodiff, AdamW, LoRA
  tok      VQ scene tokenizer (encoder, codebook, decoder, training)
  vocab    unified text/scene/action/special vocabulary and episode encoding
  wm       autoregressive next-token / next-scene transformer
  harness  synthetic worlds, captions/QA, evaluation, pipeline, CLI
"""

__version__ = "0.1.0"
