import logging
import numpy as np
from censurv.dataio import SyntheticConfig, generate_synthetic
from censurv.pipeline import TrainConfig, plug_and_play_run

logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

# 自定义超参数
seeds = [0, 1, 2, 3, 4]
num_patients = 200


if __name__ == "__main__":
    deltas = []
    for seed in seeds:
        cohort = generate_synthetic(SyntheticConfig(num_patients=num_patients, seed=seed))
        with_ecmc, without_ecmc, delta = plug_and_play_run(
            cohort, TrainConfig.desk(seed=seed, verbose=False))
        deltas.append(delta)
        print(
            u'seed=%d with_ecmc=%.4f without_ecmc=%.4f delta=%+.4f' %
            (seed, with_ecmc.mean_cindex, without_ecmc.mean_cindex, delta)
        )
    print(u'mean delta=%+.4f' % np.mean(deltas))
