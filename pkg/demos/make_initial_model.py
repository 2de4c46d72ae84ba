"""Regenerate the initial model shipped in src/elcodec/data/.

Pretraining runs on a synthetic corpus of textured images, each coded by
the toy base layer at every CTC QP, so one model serves all four rate
points.  About 12 minutes on a single CPU core.

    python demos/make_initial_model.py [corpus_dir] [out_path]
"""

import json
import sys
import time
from pathlib import Path

from elcodec.pipeline import PretrainConfig, pretrain_initial
from elcodec.synthetic import write_corpus

corpus = Path(sys.argv[1] if len(sys.argv) > 1 else "corpus")
out = Path(sys.argv[2] if len(sys.argv) > 2 else Path(__file__).parents[1] / "src/elcodec/data/initial_model.elm")

write_corpus(corpus, count=24, size=128, seed=0)

cfg = PretrainConfig(iterations=2000, batch_size=8, learning_rate=1e-3, final_learning_rate=1e-4, seed=0)
t0 = time.time()


def progress(it, loss):
    if it % 250 == 0:
        print(f"{it:5d}  loss {loss:.3e}  {time.time() - t0:6.0f}s", flush=True)


ck, stats = pretrain_initial(corpus, cfg, out, progress=progress)

# probe MSE is on [0,1] samples; the trained value should sit well below the untrained one
print(json.dumps(stats, indent=2))
print("gain/offset of the first layer:", ck.params.gain[0], ck.params.offset[0])
print("wrote", out)
