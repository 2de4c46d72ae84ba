"""Why the EL codes a residue instead of the weights themselves.

Fine-tuning from a shared starting point moves only a fraction of the
quantized weights by a step or two, so the difference against the initial
model is far more compressible than W_Q. This perturbs the shipped initial
model the way a short online run does and compares the two entropies with
the coded sizes.

    python demos/residue_entropy.py
"""

import numpy as np

from elcodec.modelcodec import ModelCodec, empirical_entropy, load_reference
from elcodec.network import make_checkpoint
from elcodec.pipeline import default_initial_model

initial = load_reference(default_initial_model())
codec = ModelCodec(initial)
n = initial.config.n_weights
print(f"initial model: {n} weights, H(W_Q) = {empirical_entropy(initial.flat_w_q()):.3f} bits/weight")

rng = np.random.default_rng(0)
for moved in (0.01, 0.05, 0.2, 0.5):
    p = initial.to_params()
    for w in p.weights:
        mask = rng.random(w.shape) < moved
        w += mask * rng.choice([-1, 1], w.shape) / p.config.scale
    ck = make_checkpoint(p, 1)
    wq = ck.quantized().flat_w_q()
    h_res = empirical_entropy(wq - initial.flat_w_q())
    stream = codec.serialize(ck)
    print(
        f"{moved:4.0%} of weights moved: H(residue) {h_res:.3f}  H(W_Q) {empirical_entropy(wq):.3f}  "
        f"coded residue {stream.residue_bytes} B (ideal {h_res * n / 8:.0f} B), EL {stream.nbytes} B"
    )
