"""Drive one expert episode through the synthetic world and look at what a frame carries."""
import numpy as np

from hg_e2e.cli import describe_frame
from hg_e2e.config import TOY
from hg_e2e.simdata import DataConfig, generate_dataset

ds = generate_dataset(seed=7, n_episodes=1, split="human", cfg=DataConfig(), model_cfg=TOY)
ep = ds.episodes[0]
print(f"route {ep.route_id}: {len(ep.frames)} frames at 2 Hz")

brake = np.array([f.brake for f in ep.frames])
eeg = np.array([f.eeg for f in ep.frames])
red = np.array([f.traffic[0] for f in ep.frames])
print(f"expert brakes in {brake.mean():.0%} of frames, red light ahead in {red.mean():.0%}")
print(f"EEG labels agree with the brake label in {np.mean(eeg == brake):.0%} of frames (emulated accuracy 0.65)")

busiest = max(range(len(ep.frames)), key=lambda k: ep.frames[k].density[..., 0].sum())
print(f"\nframe {busiest} (most vehicles in the density map):")
print(describe_frame(ep.frames[busiest]))
