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


"""Environment functions for the gregait package."""


from dataclasses import dataclass as _dataclass
import os as _os

from gregait import system as _gsys


@_dataclass
class Environment:
    host:      str  = '';     """Host name"""
    home:      str  = '';     """Home directory"""
    cache_dir: str  = '';     """Root directory of the frozen-feature cache"""
    
    
def environment(cfg_file='.gregait.cfg'):
    """Return the computing environment of the current process.
    
    The feature-cache directory is taken from the environment variable GREGAIT_CACHE_DIR if set, otherwise
    from the option cache_dir in the section [Paths] of the configuration file, otherwise it defaults to
    ~/.cache/gregait.
    
    Parameters:
      cfg_file (str):  Configuration file to read the environment from (relative to home directory).
    
    Returns:
      (Environment):  Dataclass containing the environment settings.
    """
    
    env = Environment()
    env.host = _gsys.host()
    env.home = _gsys.homedir()
    env.cache_dir = env.home+'/.cache/gregait'
    
    # Read system config file:
    import configparser
    config = configparser.ConfigParser(inline_comment_prefixes=('#'))
    config.read(env.home+'/'+cfg_file)
    
    # Section Paths:
    env.cache_dir = config.get('Paths', 'cache_dir', fallback=env.cache_dir).replace('~', env.home)  # Feature cache
    
    # The environment variable overrules the config file:
    env.cache_dir = _os.environ.get('GREGAIT_CACHE_DIR', env.cache_dir)
    
    return env


if __name__ == '__main__':
    print(environment())
