"""
Overfitting four mixtures
=========================

A small separator trained on four fixed anechoic two-speaker mixtures should
quickly memorize them.  This mirrors the overfit check in the acceptance
suite; pass a step count on the command line for a shorter run.
"""

import sys
import time

import numpy as np

from crossnet import datagen, metrics, model, trainer

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500

utts = []
for i in range(4):
    m, refs, _ = datagen.mix(datagen.SceneSpec.sample(i, duration=0.5, anechoic=True, noise=False))
    utts.append(datagen.Utterance(f"scene{i}", m.samples, refs[:, 0]))

# inference never sees more than these 61 frames, so T_max is set to match
cfg = model.ModelConfig(F=65, H=32, H_prime=8, H_dprime=64, B=2, L=4, T_max=61)
net = model.CrossNet(cfg, seed=0)


def score():
    return np.mean([metrics.evaluate(net(u.mixture).waveforms, u.refs, u.mixture[0]).mean("si_sdr_i")
                    for u in utts])


print(f"{model.count_params(cfg)} parameters, SI-SDRi before training {score():.1f} dB")

# the scale-invariant numerator; the literal one rewards shrinking outputs
tc = trainer.TrainConfig(max_epochs=10**6, max_steps=steps, batch_size=1, crop_seconds=None, loss="sisdr",
                         sisdr_numerator="projection", fixed_lr=2e-2, grad_clip=5.0, early_stop_patience=10**6)
t0 = time.perf_counter()
res = trainer.fit(net, utts, None, tc)
print(f"{res.log[-1]['step']} steps in {time.perf_counter() - t0:.0f} s, "
      f"final train loss {res.log[-1]['train_loss']:.2f}, SI-SDRi {score():.1f} dB")
