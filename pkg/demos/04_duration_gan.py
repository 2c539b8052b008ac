"""Adversarial duration modeling on a toy corpus.

The generator maps (per-token text features, Gaussian noise) to log-scale
durations; the time-step-wise discriminator scores every token position of
(features, durations) pairs as real or fake. Training alternates one critic
step with one generator step (least-squares adversarial loss plus an MSE
anchor), and the noise input keeps the trained generator stochastic: one
sentence, many timings.
"""

import numpy as np

from alignflow.duration import (
    DurationBatch,
    DurationDiscriminator,
    DurationGenerator,
    generate,
    train_duration,
)
from alignflow.numerics import AdamWConfig, Rng

rng = Rng(3)
H = 8

# A small corpus whose target durations depend on the features.
batches = []
for _ in range(6):
    n = rng.integers(3, 7)
    h = rng.normal((1, n, H))
    d = np.log(2.0 + (h[0, :, 0] > 0) * 2.0)[None, :]  # 2 or 4 frames per token
    batches.append(DurationBatch(h_text=h, d=d, mask=np.ones((1, n), bool)))

gen = DurationGenerator(h_dim=H, z_dim=2, hidden=16, rng=rng.child(1))
disc = DurationDiscriminator(h_dim=H, hidden=16, rng=rng.child(2))

history = train_duration(
    gen, disc, batches, steps=800,
    opt_cfg=AdamWConfig(lr=0.003),
    rng=rng.child(3),
    verify_isolation=True,
)

print("step    loss_d  loss_g_adv  loss_g_mse")
for row in history[:: len(history) // 8]:
    print(f"{row['step']:5d}  {row['loss_d']:8.4f}  {row['loss_g_adv']:9.4f}"
          f"  {row['loss_g_mse']:9.4f}")
print(f"final   {history[-1]['loss_d']:8.4f}  {history[-1]['loss_g_adv']:9.4f}"
      f"  {history[-1]['loss_g_mse']:9.4f}")

# At the least-squares equilibrium the critic cannot separate real from fake
# and settles near 0.5 on both, giving loss_d near (0.5-1)^2 + 0.5^2 = 0.5.

# Stochasticity: same text, different noise draws, different timings.
batch = batches[0]
noise_rng = rng.child(4)
print("\nthree sampled durations (frames) for the same token sequence:")
for _ in range(3):
    z = noise_rng.normal((1, batch.mask.shape[1], gen.z_dim))
    d_hat = generate(gen, batch.h_text, z, batch.mask)[0]
    print(" ", np.round(np.exp(d_hat.data), 2))
print("targets:", np.round(np.exp(batch.d[0]), 2))
