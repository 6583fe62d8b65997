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


"""Numerics stuff for the gregait package"""


import numpy as _np


def ceil_div(num, den):
    """Integer division rounded up, exact for arbitrary-size integers.
    
    Parameters:
      num (int):  Numerator.
      den (int):  Denominator (>0).
    
    Returns:
      (int):  ceil(num/den).
    """
    
    return -(-num // den)


def gaussian_weights(height, width):
    """Return a centred 2D Gaussian weight grid with peak 1 and sigma equal to a quarter of each extent.
    
    Parameters:
      height (int):  Number of rows.
      width (int):   Number of columns.
    
    Returns:
      (float):  Array (height x width) of weights.
    """
    
    yy = _np.arange(height, dtype=_np.float64) - (height-1)/2  # Offsets from the grid centre
    xx = _np.arange(width,  dtype=_np.float64) - (width-1)/2
    sig_y = height/4
    sig_x = width/4
    
    return _np.exp(-0.5*(yy[:,None]/sig_y)**2 - 0.5*(xx[None,:]/sig_x)**2)
