"""Stage-1 training on eight frames: the loss should fall by an order of magnitude in 200 steps."""
import numpy as np

from hg_e2e.trainer import pretrain
from hg_e2e.trainer.presets import overfit_setup

model, frames, cfg = overfit_setup(seed=0)
res = pretrain(model, frames, cfg)
losses = np.array(res.step_losses)
for step in (0, 24, 49, 99, 149, 199):
    print(f"step {step + 1:3d}  loss {losses[step]:8.4f}")
print(f"drop {1 - losses[-1] / losses[0]:.1%}")
last = res.log[-1]
print("final epoch components:", {k: round(v, 4) for k, v in last.items() if k not in ("epoch", "lr")})
