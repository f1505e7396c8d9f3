import numpy as np


def run_trial(seed):
    rng = np.random.default_rng(seed)
    return float(rng.normal())


if __name__ == "__main__":
    print(run_trial(0))
