"""Memorise one synthetic scene and watch mIoU climb.

The default here is a small scene that trains in well under a minute.
Pass --full for the 20x20, 4-slice, D=64 setting used by the acceptance
suite (around five minutes for 300 steps on one core).

Run: python demos/05_overfit_one_scene.py [--full] [--out DIR]
"""
import argparse

from sliceocc.cli import run_overfit
from sliceocc.config import RunConfig

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
ap.add_argument("--out", default=None)
args = ap.parse_args()

if args.full:
    rc = RunConfig(steps=300, eval_every=50)
else:
    rc = RunConfig(W=8, L=8, S=2, H_v=4, num_views=4, D=16, heads=2, points=2,
                   image_size=(24, 24), steps=150, eval_every=25, lr=3e-3)
rc.validate()

res = run_overfit(rc, args.out)
for step, l_ce, l_geo, l_sem, l_total, m in res.rows:
    print(f"step {int(step):4d}  loss {l_total:7.4f}  (ce {l_ce:.3f} geo {l_geo:.3f} "
          f"sem {l_sem:.3f})  mIoU {m:.3f}")
print(f"final accuracy {res.accuracy:.4f}, mIoU {res.miou:.4f}, {res.seconds:.0f}s")
if args.out:
    print("outputs written to", args.out)
