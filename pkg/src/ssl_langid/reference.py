"""Published full-scale results for the 18-layer, 512-wide encoder.

These come from 6628 h of labelled audio and 400k-update pre-training and are
kept for comparison only; desk-scale runs are not expected to approach them.
"""

# model size in millions of parameters when keeping the bottom L blocks
LAYER_SIZES_M = {7: 52.2, 8: 58.5, 9: 64.8, 10: 71.1, 18: 121.0}

# evaluation error (%) by encoder depth after fine-tuning
LAYER_EVAL_ERROR = {7: 7.27, 8: 6.90, 9: 5.41, 10: 6.46, 18: 6.71}

# best validation error (%) during the layer sweep
LAYER_VAL_ERROR = {7: 5.16, 10: 4.86, 18: 3.2}

# best model (L=9) evaluation error (%) by utterance duration
DURATION_EVAL_ERROR = {"0-5s": 8.7, "5-20s": 4.79, "overall": 5.41}

# language partition sizes
PARTITION_SIZES = {"seen": 23, "unseen": 14, "rest": 84}
