"""WiFi-CSI human-interaction recognition pipeline.

Submodules:
  csi_data  -- raw CSI data model, binary format, synthetic generator
  dsp       -- normalization, Butterworth filtering, Haar DWT downsampling
  augment   -- dropout / sample-mixing dataset augmentation
  tensor    -- dense float64 arrays with reverse-mode gradients
  model     -- causal dilated temporal conv net with masked attention
  train     -- AdamW training loop, k-fold evaluation, ablation sweeps
  cli       -- command-line surface (synth | preprocess | augment | train |
               eval | gradcheck | ablate)
"""

__version__ = "0.1.0"
