"""Catching a stuck shared dropout generator.

When one generator drives every column, a stuck-at fault freezes all masks
and the network becomes deterministic: uncertainty drops to exactly zero.
Accuracy may barely move, but a profile with a positive lower bound flags
the first L queries.

    python3 demos/zero_uncertainty.py
"""

from spinbayes import (
    DropoutBank,
    DropoutConfig,
    FaultSpec,
    Kind,
    Location,
    RngStream,
    TrainConfig,
    evaluate_accuracy,
    fit_profile,
    generate_test_vectors,
    inject,
    run_test_session,
    synth_dataset,
    train,
)

data = synth_dataset(300, seed=21)
net = train([32, 64, 64, 4], DropoutConfig(sharing="global_shared"), data,
            TrainConfig(epochs=30, seed=22))
bank = DropoutBank.healthy(net)
print(f"{bank.n_generators} dropout generator for {sum(net.hidden_widths)} hidden columns")

tvs = generate_test_vectors(net, bank, data.X_train, R=50, T=20, N=50, stream=RngStream(23))
prof = fit_profile(net, bank, tvs, R_fit=20, T=20, stream=RngStream(24))
print(f"bounds [{prof.b_lower:.2e}, {prof.b_upper:.2e}]")

healthy = run_test_session(net, bank, tvs, prof, L=4, stream=RngStream(25))
print(f"healthy device: {healthy.decision} after {healthy.queries_used} queries")

for kind in (Kind.STUCK_AT_0, Kind.STUCK_AT_1):
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, kind, rate=1.0), RngStream(26))
    acc = evaluate_accuracy(net, data.X_eval, data.y_eval, 20, RngStream(27), bank, ctx)
    v = run_test_session(net, bank, tvs, prof, L=4, stream=RngStream(28), ctx=ctx)
    print(f"{kind.value}: accuracy {acc:.3f}, uncertainties {set(v.uncertainties)}, "
          f"{v.decision} after {v.queries_used} queries")
