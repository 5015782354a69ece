import logging
import numpy as np
from censurv.dataio import SyntheticConfig
from censurv.pipeline import TrainConfig, censoring_study

logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

# 自定义超参数
seeds = [0, 1, 2, 3, 4]
num_patients = 500
censor_rate = 0.4

# 合成队列: 删失样本的观察时间在(0, 真实时间)内随机截断, 真实时间保留用来评估替代时间
synthetic_config = SyntheticConfig(
    num_patients=num_patients,
    censor_rate=censor_rate,
    grid_size=2,
)

# 小规模训练配置, 所有删失样本都参与更新
train_config = TrainConfig.desk(select_fraction=1.0, verbose=False)


def summarize(rows):
    """每个种子的原删失时间MAE与替代时间MAE, 以及平均相对下降.
    """
    reductions = []
    for row in rows:
        if not row['count']:
            print(u'seed=%d 没有被更新的删失样本' % row['seed'])
            continue
        reduction = 1. - row['updated_mae'] / row['raw_mae']
        reductions.append(reduction)
        print(
            u'seed=%d relabeled=%d raw_mae=%.2f updated_mae=%.2f reduction=%.1f%%' %
            (row['seed'], row['count'], row['raw_mae'], row['updated_mae'], 100 * reduction)
        )
    if reductions:
        print(u'mean reduction=%.1f%%' % (100 * np.mean(reductions)))


if __name__ == "__main__":
    summarize(censoring_study(train_config, seeds, synthetic_config=synthetic_config))
