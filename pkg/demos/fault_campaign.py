"""A small fault-injection campaign with accuracy, coverage and ROC tables.

Weight bit-flips and multiplicative MAC variation are injected at a few
rates. Each injection is scored as benign or critical by its accuracy drop
and tested by one recorded test session, so the vote threshold L can be
swept afterwards without re-simulating.

    python3 demos/fault_campaign.py
"""

from spinbayes import (
    CampaignConfig,
    DropoutConfig,
    FaultSpec,
    Kind,
    Location,
    RngStream,
    Sweep,
    TrainConfig,
    fit_profile,
    generate_test_vectors,
    run_campaign,
    synth_dataset,
    train,
)

data = synth_dataset(300, seed=11)
net = train([32, 64, 64, 4], DropoutConfig(), data, TrainConfig(epochs=30, seed=12))
tvs = generate_test_vectors(net, None, data.X_train, R=100, T=20, N=50, stream=RngStream(13))
prof = fit_profile(net, None, tvs, R_fit=20, T=20, stream=RngStream(14))

cfg = CampaignConfig(
    sweeps=(
        Sweep("weight_bit_flip", FaultSpec(Location.WEIGHT_CELLS, Kind.BIT_FLIP), (0.0, 0.1, 0.3)),
        Sweep("mac_multiplicative",
              FaultSpec(Location.MAC_CONDUCTANCE, Kind.MULTIPLICATIVE_GAUSSIAN), (0.1, 0.3)),
    ),
    injections=30, eval_size=200, control_sessions=100, seed=15,
)
res = run_campaign(net, data.X_eval, data.y_eval, tvs, prof, cfg)

print(f"clean accuracy {res.clean_accuracy:.3f}")
print(f"{'sweep':<20}{'value':>6}{'accuracy':>10}{'critical':>10}{'coverage':>10}")
for p in res.points:
    cov = "-" if p.n_critical == 0 else f"{p.coverage_critical:.2f}"
    print(f"{p.sweep:<20}{p.value:>6}{p.mean_accuracy:>10.3f}"
          f"{p.n_critical:>7}/{p.n_critical + p.n_benign:<2}{cov:>10}")

print("\nL   tpr_critical  fpr")
for r in res.roc(range(1, 7)):
    print(f"{r.L:<4}{r.tpr_critical:>12.2f}{r.fpr:>6.2f}")
