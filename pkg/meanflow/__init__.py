import os
import sys

# XLA reads its flags once, on first import of jax.
if 'jax' not in sys.modules:
    _threads = int(os.environ.get('MF_THREADS', '1'))
    if _threads <= 1:
        _flags = os.environ.get('XLA_FLAGS', '')
        os.environ['XLA_FLAGS'] = (
            _flags + ' --xla_cpu_multi_thread_eigen=false').strip()

import jax  # noqa: E402
jax.config.update('jax_enable_x64', True)

from .api import Trainer, train, sweep, render_field  # noqa: F401,E402
from .algorithms.mlp import make_algorithm, u_theta, ema_update  # noqa: F401,E402
from .flows import (interpolate, conditional_velocity, one_step_sample,  # noqa: F401,E402
                    multi_step_sample, euler_fm_sample)
from .config import NetworkConfig, TrainConfig, RunConfig  # noqa: F401,E402
from .oracle import GmmSpec  # noqa: F401,E402
