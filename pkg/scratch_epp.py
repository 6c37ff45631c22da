import sys
import numpy as np
from edgeprompt.data import CSBMParams, csbm_node_dataset, kshot_sample
from edgeprompt.pretrain import GraphCLPretrainer
from edgeprompt.tuning import PromptTuner

hidden, preseed, epochs, lr, anchors = (int(sys.argv[1]), int(sys.argv[2]),
                                        int(sys.argv[3]), float(sys.argv[4]),
                                        int(sys.argv[5]))
D, sep = 8, 1.0
mu1 = np.zeros(D); mu2 = np.zeros(D); mu1[0], mu2[0] = sep/2, -sep/2
ds = csbm_node_dataset(CSBMParams(mu1, mu2, .8, .2, 500), seed=100)
pre = GraphCLPretrainer(model_kind="gcn", num_layers=2, hidden_dim=hidden,
                        epochs=20, node_batch=256, lr=5e-3, seed=preseed).fit(ds)
accs = []
for seed in range(5):
    split = kshot_sample(ds, 5, seed=seed)
    t = PromptTuner(pre.checkpoint_, method="edgeprompt+", epochs=epochs, lr=lr,
                    anchors=anchors, seed=seed).fit(ds, split)
    accs.append(t.score(ds, split.test_ids))
    print(f"  seed {seed}: {accs[-1]:.4f}", flush=True)
print(f"h={hidden} pre={preseed} edgeprompt+ mean={np.mean(accs):.4f} "
      f"accs={[round(a,3) for a in accs]}", flush=True)
