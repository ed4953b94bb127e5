"""Why uncertainty needs test vectors that repeat well.

Trains a small MC-Dropout binary network, shows that the same input gives a
different uncertainty on every Bayesian inference, then ranks training
inputs by how much that uncertainty wanders and fits the fault-free bounds.

    python3 demos/repeatability_and_test_vectors.py
"""

import numpy as np

from spinbayes import (
    DropoutBank,
    DropoutConfig,
    GenState,
    RngStream,
    TrainConfig,
    evaluate_accuracy,
    fit_profile,
    generate_test_vectors,
    predict,
    synth_dataset,
    train,
)

data = synth_dataset(300, seed=1)
net = train([32, 64, 64, 4], DropoutConfig(p=0.25), data, TrainConfig(epochs=30, seed=2))
acc = evaluate_accuracy(net, data.X_eval, data.y_eval, 20, RngStream(3))
print(f"Bayesian accuracy (T=20) on {len(data.y_eval)} eval inputs: {acc:.3f}")

# one input, fifty inferences: the uncertainty changes every time
x = data.X_eval[0]
u = [predict(net, x, 20, stream=RngStream(4).derive(k)).uncertainty for k in range(50)]
print(f"uncertainty over 50 inferences: mean {np.mean(u):.2e}, var {np.var(u):.2e}")

# with every dropout generator stuck in pass mode the network is deterministic
stuck = DropoutBank.healthy(net).all_stuck(GenState.STUCK_PASS)
u0 = [predict(net, x, 20, stuck, stream=RngStream(5).derive(k)).uncertainty for k in range(50)]
print(f"stuck-pass generators: every uncertainty is {set(u0)}")

# rank training inputs by repeatability and keep the steadiest ones
tvs = generate_test_vectors(net, None, data.X_train, R=100, T=20, N=50, stream=RngStream(6))
print(f"{len(tvs)} test vectors from {len(data.X_train)} training inputs, "
      f"scores {tvs.scores[0]:.2e} .. {tvs.scores[-1]:.2e}")

prof = fit_profile(net, None, tvs, R_fit=20, T=20, stream=RngStream(7))
print(f"fault-free bounds ({prof.domain} fit): [{prof.b_lower:.2e}, {prof.b_upper:.2e}]")
