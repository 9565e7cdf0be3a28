"""Dev-only dry run of the criterion-6 protocol (not shipped)."""
import sys
import time

import numpy as np

import ghostkit as gk
from ghostkit.datapipe import synthetic_scene, speckle_pair
from ghostkit.forward import measure
from ghostkit.metrics import psnr
from ghostkit.neural import NetworkSpec, TrainConfig, train, denoise
from ghostkit.recon import bc_reconstruct, omp_reconstruct, normalize_for_display

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 96
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 100
batch = int(sys.argv[3]) if len(sys.argv) > 3 else 8
lr = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-3
mode = sys.argv[5] if len(sys.argv) > 5 else "plain"

t0 = time.time()
stack = gk.gen_random_patterns(101, 1024, 32, 32, "binary")
train_scenes = [synthetic_scene(s, 32, 32) for s in range(n_train)]
test_scenes = [synthetic_scene(1000 + s, 32, 32) for s in range(6)]

pairs = [speckle_pair(stack, sc, recon_mode=mode) for sc in train_scenes]

spec = NetworkSpec(depth=7, channels=32)
cfg = TrainConfig(epochs=epochs, batch_size=batch, learning_rate=lr, shuffle_seed=7,
                  checkpoint_epochs=tuple(int(epochs * f) for f in (0.25, 0.5, 0.75, 1.0)),
                  lr_decay_epochs=(int(epochs * 0.6), int(epochs * 0.85)))
res = train(spec, pairs, cfg, init_seed=7)
print("trained %.0fs, loss %.3f -> %.3f" % (time.time() - t0, res.loss_curve[0], res.loss_curve[-1]))

test_data = []
for sc in test_scenes:
    b = measure(stack, sc)
    bc_n = normalize_for_display(bc_reconstruct(stack, b, mode=mode))
    omp_n = normalize_for_display(omp_reconstruct(stack, b))
    test_data.append((sc, bc_n, omp_n))

print("BC  mean %.2f" % np.mean([psnr(sc, bc_n) for sc, bc_n, _ in test_data]))
print("OMP mean %.2f" % np.mean([psnr(sc, omp_n) for sc, _, omp_n in test_data]))
for epoch in sorted(res.checkpoints):
    params = res.checkpoints[epoch]
    vals = [psnr(sc, denoise(params, bc_n)) for sc, bc_n, _ in test_data]
    print("NN@%-4d mean %.2f  %s" % (epoch, np.mean(vals), np.round(vals, 2)))
print("total %.0fs" % (time.time() - t0))
