import sys
import numpy as np
from edgeprompt.data import CSBMParams, csbm_node_dataset, kshot_sample
from edgeprompt.pretrain import GraphCLPretrainer
from edgeprompt.tuning import PromptTuner

D, sep, hidden = 8, 1.0, 2
pre_epochs = int(sys.argv[1]); pre_lr = float(sys.argv[2])
mu1 = np.zeros(D); mu2 = np.zeros(D)
mu1[0], mu2[0] = sep/2, -sep/2
ds = csbm_node_dataset(CSBMParams(mu1, mu2, .8, .2, 500), seed=100)
for preseed in (0, 1, 2, 3):
    pre = GraphCLPretrainer(model_kind="gcn", num_layers=2, hidden_dim=hidden,
                            epochs=pre_epochs, node_batch=64, lr=pre_lr,
                            seed=preseed).fit(ds)
    accs = []
    for seed in range(5):
        split = kshot_sample(ds, 5, seed=seed)
        t = PromptTuner(pre.checkpoint_, method="classifier-only", epochs=200,
                        lr=0.01, seed=seed).fit(ds, split)
        accs.append(t.score(ds, split.test_ids))
    print(f"preseed={preseed} loss {pre.history_[0]:.3f}->{pre.history_[-1]:.3f} "
          f"clf mean={np.mean(accs):.4f} accs={[round(a,3) for a in accs]}", flush=True)
