"""Miniature cross-weather robustness study.

Trains the same model three ways (no augmentation, Gaussian noise,
concentrating adversarial augmentation) on an overcast-only trajectory,
then scores all three on the same route under rain and snow the models
never saw. Follows with the four-variant safeguard ablation and a small
target-weather mixing table. This is the desk-scale version of the full
experiment in tests/test_acceptance.py; expect a couple of minutes.

Run:  python3 demos/04_robustness_study.py
"""

import os

from radaug.core import WeatherTag
from radaug.evaluate import evaluate
from radaug.perturb import PerturberConfig
from radaug.synth import SceneSpec, TrajectorySpec, generate_dataset
from radaug.train import (ABLATION_VARIANTS, TrainConfig, model_for_dataset,
                          run_ablation, run_mixing_study, run_training,
                          write_mixing_csv)

out_dir = os.path.join(os.path.dirname(__file__), "out", "robustness_study")
os.makedirs(out_dir, exist_ok=True)

SEED = 0
spec = SceneSpec(seed=SEED, trajectory_len=160, image_dims=(48, 48, 3))
traj = TrajectorySpec()
train_ds = generate_dataset(spec, traj, {WeatherTag.OVERCAST: 1.0}, 3)
# Same trajectory (phase_seed=0), different sky: the error gap below is
# purely about weather the model never trained on.
test_ds = generate_dataset(spec, traj,
                           {WeatherTag.RAIN: 0.5, WeatherTag.SNOW: 0.5}, 3)
clean_ds = train_ds

def train_arm(pcfg, mix_mode="original_plus_adversarial"):
    cfg = TrainConfig(epochs=40, batch_tuples=8, lr=3e-3, perturber=pcfg,
                      mix_mode=mix_mode, seed=SEED)
    model = model_for_dataset(train_ds, SEED)
    trained, _, _ = run_training(train_ds, model, cfg)
    return trained

print("training three arms on overcast only (same init, same batches)...")
arms = {
    "baseline": train_arm(PerturberConfig(method="none"), "original_only"),
    "gaussian": train_arm(PerturberConfig(method="gaussian", gaussian_var=0.05)),
    "rada":     train_arm(PerturberConfig(method="rada", epsilon=1e4)),
}

print(f"\n{'arm':<10s} {'clean t_err':>12s} {'rain+snow t_err':>16s}")
for name, model in arms.items():
    clean = evaluate(model, clean_ds).overall.mean_t_err
    shifted = evaluate(model, test_ds).overall.mean_t_err
    print(f"{name:<10s} {clean:>12.3f} {shifted:>16.3f}")

# Ablation: retrain with the two safeguards toggled. The clamp and clip
# only matter when the raw perturbation actually exceeds them; at this
# miniature scale the ordering can go either way, so read the table as a
# wiring check and see tests/test_acceptance.py for the sized comparison.
print("\nablation (same perturber, safeguards toggled):")
cfg = TrainConfig(epochs=40, batch_tuples=8, lr=3e-3,
                  perturber=PerturberConfig(method="rada", epsilon=1e4),
                  seed=SEED)
entries = run_ablation(train_ds, cfg, test_ds)
for variant in ABLATION_VARIANTS:
    o = entries[variant].eval_result.overall
    print(f"  {variant:<22s} t_err {o.mean_t_err:.3f}  r_err {o.mean_r_err:.2f}")

# Mixing: if a slice of the target weather is allowed into training, how
# fast does the augmentation advantage close? (Small scale; treat the
# direction, not the digits.)
print("\nmixing study (fraction of rain in the overcast training set):")
mix_cfg = TrainConfig(epochs=15, batch_tuples=8, lr=3e-3,
                      perturber=PerturberConfig(method="rada", epsilon=1e4),
                      seed=SEED)
rows = run_mixing_study(SceneSpec(seed=SEED, trajectory_len=80,
                                  image_dims=(48, 48, 3)),
                        (0.0, 0.2, 0.4), mix_cfg, test_frames=30)
for r in rows:
    print(f"  fraction {r.fraction:.1f}: target t_err base {r.base_target_t:.3f}"
          f" vs rada {r.rada_target_t:.3f}")
csv_path = os.path.join(out_dir, "mixing.csv")
write_mixing_csv(rows, csv_path)
print(f"mixing table -> {csv_path}")
