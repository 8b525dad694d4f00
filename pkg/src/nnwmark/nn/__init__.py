"""Minimal numpy CNN engine: layers, losses, SGD and the training loop."""

from .layers import Conv2D, Dense, Flatten, GlobalAvgPool, MaxPool, ReLU, ResidualAdd
from .losses import cross_entropy_loss, soft_target_loss, softmax
from .model import HostModel, build_host, initialize
from .optim import OptimizerState, lr_schedule, sgd_nesterov_step
from .training import RegularizerHook, TrainConfig, backward, evaluate, forward, train
