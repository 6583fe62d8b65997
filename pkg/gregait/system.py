# -*- coding: utf-8 -*-
# SPDX-License-Identifier: EUPL-1.2
#  
#  Copyright (c) 2024-2026  The gregait developers
#  
#  This file is part of the gregait Python package:
#  gait representations from frozen large-vision-model features.
#  
#  This is free software: you can redistribute it and/or modify it under the terms of the European Union
#  Public Licence 1.2 (EUPL 1.2).  This software is distributed in the hope that it will be useful, but
#  WITHOUT ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR
#  PURPOSE.  See the EU Public Licence for more details.  You should have received a copy of the European
#  Union Public Licence along with this code.  If not, see <https://www.eupl.eu/1.2/en/>.


"""System functions for the gregait package: host information, seeding and deterministic execution."""


from pathlib import Path as _Path
import random as _random
import socket as _socket

import numpy as _np
import torch as _torch


def host():
    """Return the current host name.
    
    Returns:  
      (str):  The current host name.
    """
    
    return _socket.gethostname()


def homedir():
    """Return the home directory as a string without trailing slash.
    
    Returns:  
      (str):  The home directory as a string without trailing slash.
    """
    
    return str(_Path.home())


def seed_all(seed):
    """Seed the Python, NumPy and PyTorch random-number generators.
    
    Parameters:
      seed (int):  Seed value.
    """
    
    _random.seed(seed)
    _np.random.seed(seed % 2**32)
    _torch.manual_seed(seed)
    
    return


def deterministic_mode(enabled=True, num_threads=1):
    """Switch PyTorch to (or away from) bitwise-reproducible execution.
    
    In deterministic mode only deterministic kernels are used and all reductions run on a fixed number of
    threads, so that two runs with equal seeds produce identical floating-point results.
    
    Parameters:
      enabled (bool):     Enable deterministic mode (optional, defaults to True).
      num_threads (int):  Number of intra-op threads in deterministic mode (optional, defaults to 1).
    """
    
    _torch.use_deterministic_algorithms(enabled)
    _torch.backends.cudnn.deterministic = enabled
    _torch.backends.cudnn.benchmark = not enabled
    if enabled: _torch.set_num_threads(num_threads)
    
    return
