"""
One patient, five views
=======================

Build a synthetic chest volume, take the scanner bed out, and shoot the
five standard projections (-60/-30/0/+30/+60 degrees). Writes raw line
integrals and radiograph-style renders under demo_out/patient/.
"""

from pathlib import Path

import numpy as np

from dtsforge import (ProjectionGeometry, generate, jittered_spec,
                      project_all_views, strip_bed, to_display)
from dtsforge.imgio import write_pgm8, write_pgm16_scaled

out = Path("demo_out/patient")
out.mkdir(parents=True, exist_ok=True)

# a jittered anatomy with one lesion; ground truth comes along for free
spec = jittered_spec(seed=7, abnormal=True)
volume, subject_truth, lung_truth, label = generate(spec)
print(f"volume {volume.values.shape} @ {volume.spacing} mm, label={label}")

# the bed is a detached arc behind the patient; per-slice morphology drops it
stripped, mask = strip_bed(volume)
kept = mask.values.mean()
print(f"subject mask keeps {kept:.1%} of the voxels")

# cone-beam geometry: source 541 mm from the isocenter, detector 949 mm
# from the source, 500 mm square panel
geo = ProjectionGeometry(detector_px=(256, 256))
views = project_all_views(stripped, geo)

for p in views:
    tag = f"{p.view_angle_deg:+.0f}".replace("+-", "-")
    write_pgm16_scaled(out / f"proj_{tag}.pgm", p.pixels)
    # display rendering: negate + histogram equalize, like a film radiograph
    write_pgm8(out / f"display_{tag}.pgm", to_display(p))
    print(f"view {p.view_angle_deg:+5.0f} deg: integral range "
          f"0..{p.pixels.max():.2f}")

print(f"wrote {2 * len(views)} images to {out}/")
