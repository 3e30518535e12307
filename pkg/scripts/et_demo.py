"""Run a randomly initialised model on noise with early termination off and on.

Prints both emission logs so the extra PeakET lines and their earlier
timestamps are visible side by side.

    python scripts/et_demo.py --seconds 3 --seed 7
"""

import argparse

import numpy as np

from uma_stream import Model, ModelConfig, init_random, stream_recognize
from uma_stream.engine import format_emission_log
from uma_stream.frontend import AudioBuffer, fbank


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seconds", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = ModelConfig(model_dim=32, expansion=2, state_size=8, num_encoder_blocks=1,
                      lookahead_kernel=3, num_decoder_blocks=1, decoder_heads=2,
                      decoder_ff_dim=64, vocab_size=8, subsample_channels=8,
                      max_decoder_len=512)
    model = Model.from_bundle(cfg, init_random(cfg, args.seed))
    rng = np.random.default_rng(args.seed)
    feats = fbank(AudioBuffer(rng.standard_normal(int(16000 * args.seconds)) * 0.2))
    for et in (False, True):
        out = stream_recognize(feats, model, et_enabled=et)
        print(f"# et={'on' if et else 'off'}: {len(out)} emissions")
        print(format_emission_log("demo", out), end="")


if __name__ == "__main__":
    main()
