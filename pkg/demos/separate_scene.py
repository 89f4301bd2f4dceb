"""
Separating a synthetic reverberant scene
========================================

Generate a two-speaker, six-microphone scene, run an (untrained) separator on
it and score the output.  The scores of an untrained model are poor; the point
is the data flow and the shapes.
"""

import numpy as np

from crossnet import datagen, dsp, metrics, model

spec = datagen.SceneSpec.sample(seed=7, C=2, M=6, duration=1.0)
mixture, refs, meta = datagen.mix(spec)
print("mixture", mixture.samples.shape, "references", refs.shape)
print(f"T60 {meta['t60']:.2f} s, SNR {meta['snr_db']:.1f} dB, levels {np.round(meta['levels_db'], 1)}")

# the input features: stacked real and imaginary parts of every microphone
normed, state = dsp.normalize(mixture)
spec_ = dsp.stft(normed, 128, 64)
x = dsp.stack_ri(spec_)
print("network input [2M, F, T] =", x.shape)

cfg = model.ModelConfig(M=6, F=65, H=32, H_prime=8, H_dprime=64, B=2, L=4, T_max=256)
net = model.CrossNet(cfg, seed=0)
out = net(mixture)
print("estimates", out.waveforms.shape)

# score against the direct-plus-reverberant image at the reference microphone
report = metrics.evaluate(out.waveforms, refs[:, 0], mixture.samples[0], "scene7")
print(report.record())

# where each frame of the first block looks, averaged over heads
from crossnet import tensor as T

with T.no_grad():
    h = model.encoder_forward(T.Tensor(x), net.params, cfg)
attn = model.gmhsa_attention(h, model.sub_params(net.params, "blocks.0.gmhsa"), cfg)
print("attention", attn.shape, "row sums", np.round(attn.sum(-1)[0, :4], 6))
