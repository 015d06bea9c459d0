"""
Keeping saliency inside the lung
================================

An activation map highlights whatever drives a view-level score -- and on
a raw projection that includes ribs, the spine, and the detector edge.
Multiplying it by the projected lung silhouette zeroes everything that
cannot be lung. Here the "activation" is the scorer's own evidence
(attenuation excess over the in-lung median), so no network is needed.
"""

from pathlib import Path

import numpy as np

from dtsforge import (ActivationMap, ProjectionGeometry, align_mask, generate,
                      jittered_spec, project_all_views, project_thickness,
                      refine, render_overlay, save_activation, strip_bed,
                      to_display)
from dtsforge.imgio import write_ppm

out = Path("demo_out/activation")
out.mkdir(parents=True, exist_ok=True)

spec = jittered_spec(seed=3, abnormal=True)
volume, _, lung_truth, _ = generate(spec)
stripped, _ = strip_bed(volume)

geo = ProjectionGeometry(detector_px=(256, 256))
view = [p for p in project_all_views(stripped, geo) if p.view_angle_deg == 30.0][0]

# silhouette: pixels with more than a millimetre of lung along the ray
thick = project_thickness(lung_truth, geo, view.view_angle_deg)
silhouette = (thick > 1.0).astype(np.uint8)

# evidence map: how much each pixel over-attenuates vs the usual lung pixel
ref = float(np.median(view.pixels[silhouette > 0]))
evidence = np.maximum(view.pixels - ref, 0.0)[:, :, None].astype(np.float32)
act = ActivationMap(evidence, patient_id="demo", view_angle_deg=30.0)

before = float(act.values.sum())
act = refine(act, align_mask(silhouette, act.h, act.w))
after = float(act.values.sum())
print(f"activation mass: {before:.1f} -> {after:.1f} "
      f"({1 - after / before:.1%} was outside the lung)")

save_activation(out / "act_+30.bin", act)
overlay = render_overlay(act, to_display(view, out_px=geo.detector_px),
                         mask=silhouette)
write_ppm(out / "overlay_+30.ppm", overlay)
print(f"wrote {out}/act_+30.bin and {out}/overlay_+30.ppm")
