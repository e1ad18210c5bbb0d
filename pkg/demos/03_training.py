# %% [markdown]
# # Training and evaluation
#
# The trainer resamples the augmented graphs once per epoch, runs one
# forward per batch for both losses, and keeps the parameters with the
# best validation Recall@20.

# %%
from simkgcl import TrainConfig, evaluate, generate_synthetic_dataset, train

bundle = generate_synthetic_dataset(seed=0)
config = TrainConfig(batch_size=512, tau=0.8, lambda1=0.1, epochs_max=40, patience=5)
params, history = train(config, bundle)
for row in history.rows(with_time=False)[:5]:
    print({k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()})
print("best epoch", history.best_epoch, "validation recall", round(history.best_recall, 4))

# %% [markdown]
# Test metrics use the un-augmented graphs and rank every item the user
# has not trained on.

# %%
report = evaluate(params, bundle, "test", 20, config.model_config())
print(report)
