"""
Ablations: depth, shortcuts and classifier count
================================================

Switch off one ingredient at a time and compare held-out vote accuracy on
the synthetic task. Shorter runs than the acceptance suite by default; pass
``--epochs 200`` for the full schedule.
"""

import argparse

from dreamnet import ModelConfig, OptimState, SynthSpec, build, evaluate, fit, split, synth_generate

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=60)
parser.add_argument("--seeds", type=int, nargs="+", default=[42, 43])
parser.add_argument("--separation", type=float, default=0.5, help="harder task makes differences visible")
args = parser.parse_args()

train, test = split(synth_generate(SynthSpec(separation=args.separation, seed=42)), 0.7, seed=42)

variants = {
    "E=3 (default)": {},
    "E=5": dict(num_rae=5),
    "no shortcuts": dict(shortcuts=False),
    "final head only": dict(heads="final"),
    "RT on every stage": dict(rt_mode="all"),
    "lambda_rt = 0": dict(lambda_rt=0.0),
}

print(f"{'variant':<20} " + " ".join(f"seed {s:>3}" for s in args.seeds) + "   mean")
for name, overrides in variants.items():
    accs = []
    for seed in args.seeds:
        model = build(ModelConfig(seed=seed, **overrides))
        model, _ = fit(model, train, args.epochs, state=OptimState(), seed=seed, track_train=False)
        accs.append(evaluate(model, test)["vote_acc"])
    print(f"{name:<20} " + " ".join(f"{a:8.3f}" for a in accs) + f"  {sum(accs) / len(accs):.3f}")
