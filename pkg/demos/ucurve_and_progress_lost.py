"""
Reading a finetuning run: the U-curve bottom and progress lost
===============================================================

A synthetic finetuning trajectory descends, bottoms out, then overfits. We
locate the bottom, read the pretraining loss there, and express the damage as
the fraction of a pretraining run it undoes.
"""

import numpy as np

from scalelab.core import MODELS_BY_NAME, LossCurve
from scalelab.evaluation import progress_lost, ucurve_bottom
from scalelab.laws import Covariates
from scalelab.surrogate import CurveShape, gen_curve, spec_for_domain, ucurve_argmin

spec = spec_for_domain("github", noise_sigma=0.0, seed=3)
medium = MODELS_BY_NAME["Medium"]
cov = Covariates(medium.n_params, 3_000_000, 0.0)

# The trajectory shape is a stand-in: exponential descent toward the law's
# minimum plus a linear overfitting drift. Mild noise shows the median filter
# at work.
shape = CurveShape(tau_fit=200.0, overfit_rate=2e-4, log_every=10)
curve = gen_curve(spec, shape, cov, l_start=3.2, noise_sigma=0.002)
bottom = ucurve_bottom(curve)
i = int(np.searchsorted(curve.steps, bottom.step))
print(f"bottom at step {bottom.step:.0f} (analytic {ucurve_argmin(3.2, curve.meta['l_min'], shape):.0f}), "
      f"val_ft {bottom.loss:.4f}, pretraining loss there {curve.val_pt[i]:.4f}")

# Progress lost compares that pretraining loss with a pretraining run's own
# trajectory. Here is a made-up power-law pretraining curve for the same size,
# ending at its published terminal loss.
steps = np.arange(0, 100_001, 500)
decay = (1 + steps / 400.0) ** -0.5
pt_curve = medium.pt_loss_terminal + 8.0 * (decay - decay[-1])
pretrain = LossCurve("pretrain", steps, pt_curve, val_pt=pt_curve)

frac = progress_lost(curve.val_pt[i], pretrain)
print(f"finetuning undid {100 * frac:.1f}% of the pretraining run")

for p in (0.0, 0.01, 0.05):
    c = gen_curve(spec, shape, Covariates(medium.n_params, 3_000_000, p), l_start=3.2)
    b = ucurve_bottom(c)
    lpt = c.val_pt[int(np.searchsorted(c.steps, b.step))]
    print(f"  p={p:<5}  pretraining loss at bottom {lpt:.4f}  progress lost {100 * progress_lost(lpt, pretrain):.1f}%")
