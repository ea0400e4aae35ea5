"""Finite-difference checks, per op and through the whole model.

The pipeline check takes about a minute and a half on one core.

Run: python demos/04_gradient_check.py [--ops-only]
"""
import sys

from sliceocc.gradcheck_suite import check_ops, check_pipeline

for r in check_ops():
    print(f"{'ok ' if r.passed else 'BAD'} {r.name:<22} max rel err {r.report.max_rel_err:.2e}")

if "--ops-only" not in sys.argv:
    r = check_pipeline()
    print(f"{'ok ' if r.passed else 'BAD'} full pipeline          "
          f"max rel err {r.report.max_rel_err:.2e} (tolerance {r.report.tol:g})")
