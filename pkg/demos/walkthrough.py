"""A small end-to-end run through the library API.

Codes a synthetic textured clip with the toy base layer at two QPs, trains the
enhancement model online per frame group, keeps whichever checkpoint (or none)
has the lowest Lagrangian cost, then decodes the run and writes the reports.
A few minutes on one core.

    python demos/walkthrough.py [out_dir]
"""

import sys
from pathlib import Path

from elcodec.network import TrainingConfig
from elcodec.pipeline import RunConfig, emit_reports, run_decode, run_encode

out = Path(sys.argv[1] if len(sys.argv) > 1 else "walkthrough_run")

cfg = RunConfig(
    output_dir=str(out),
    synthetic={"kind": "textured", "seed": 7, "frames": 8, "height": 256, "width": 256},
    qps=(32, 37),
    group_size=8,
    training=TrainingConfig.desk(iters_per_epoch=60, max_epochs=3),
)
run = run_encode(cfg)

# With short epochs the latent weights move less than half a quantization step,
# so W_Q and the coded size stay put while biases and affine pairs still adapt.
for (qp, g), sel in sorted(run.selections.items()):
    print(f"QP {qp} group {g}: {len(sel.table)} checkpoints, chose {sel.chosen}")
    for ev in sel.table:
        mark = "*" if ev.id == sel.chosen else " "
        print(f"  {mark} epoch {ev.epoch}  {ev.r_model:6d} bits  PSNR {ev.mean_psnr:6.2f}  J {float(ev.j):.6g}")
    b = sel.baseline
    print(f"    BL only          0 bits  PSNR {b.mean_psnr:6.2f}  J {float(b.j):.6g}")

# the decoder only sees the run directory and the shared initial model
dec = run_decode(out)
print("decoder digests match encoder:", dec.digests_match)

reports = emit_reports(out)
print("reports in", reports)
for p in sorted(reports.iterdir()):
    print("  ", p.name)
