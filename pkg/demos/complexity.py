"""
Model size and compute
======================

Parameter counts per module and forward FLOPs for the full-size separator,
with and without the ablated components.
"""

from crossnet import model

# the single-microphone default configuration
cfg = model.ModelConfig()
print(f"default: {model.count_params(cfg) / 1e6:.2f} M parameters")
for name, n in model.module_census(cfg).items():
    if not name.startswith("blocks.") or name.startswith("blocks.0."):
        print(f"  {name:<24}{n:>10}")
print(f"  ... {cfg.B} blocks in total")

# compute for four seconds of 8 kHz audio, reported per second of audio
for mics in (1, 6):
    c = model.ModelConfig(M=mics)
    mm = model.gflops_per_second(c, convention="matmul")
    full = model.gflops_per_second(c, convention="full")
    print(f"{mics} mic(s): {mm:.1f} GFLOPs/s counting products only, {full:.1f} with elementwise ops")

# removing the positional encoding costs no parameters; removing GMHSA does
for flags in ({"use_rcpe": False}, {"use_gmhsa": False}, {"use_rcpe": False, "use_gmhsa": False}):
    c = model.ModelConfig(**flags)
    print(flags, model.topology(c), f"{model.count_params(c) / 1e6:.2f} M")
