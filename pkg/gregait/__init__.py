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


"""Gait representations from frozen large-vision-model features.

The gregait package turns the intermediate feature maps of a frozen vision transformer into gait
representations with an unsupervised three-branch Gait Representation Extractor (mask, appearance and
denoising branches), trains a two-stream GaitBase-style metric-learning head on top, and evaluates rank-1
identification under multi-view, cross-condition and cross-domain protocols.  A synthetic feature provider
and a synthetic walking-figure benchmark allow the whole pipeline to run on a desk computer.  The package
can be used under the conditions of the EUPL 1.2 licence.
"""

name = 'gregait'
__version__ = '0.1.0'
__author__ = 'The gregait developers'
