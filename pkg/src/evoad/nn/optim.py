import numpy as np


class SGD:
    def __init__(self, params: np.ndarray, lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: np.ndarray) -> None:
        self.params -= self.lr * grads


class Adam:
    def __init__(self, params: np.ndarray, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros_like(params)
        self.v = np.zeros_like(params)
        self.t = 0

    def step(self, grads: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grads * grads
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        self.params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, params: np.ndarray, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
