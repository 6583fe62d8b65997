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


"""Command-line diagnostics for the gregait package: coloured errors, warnings and notes on stderr."""

import sys as _sys
from termcolor import colored as _clr


def error(message, exit_program=True, exit_code=1):
    """Print a coloured error message to stderr and exit.
    
    Parameters:
      message (str):        Message to print.
      exit_program (bool):  Exit the program or not, defaults to True.
      exit_code (int):      Exit code to exit the program with, defaults to 1.
    """
    
    _sys.stderr.write('\n'+_clr('ERROR: '+str(message), 'white', 'on_red', attrs=['bold'])+'\n\n')
    
    if exit_program: _sys.exit(exit_code)
    return


def warn(message, exit_program=False, exit_code=1):
    """Print a coloured warning message to stderr and optionally exit.
    
    Parameters:
      message (str):        Message to print.
      exit_program (bool):  Exit the program or not, defaults to False.
      exit_code (int):      Exit code to exit the program with, defaults to 1.
    """
    
    _sys.stderr.write(_clr('Warning: '+str(message), 'yellow', attrs=['bold'])+'\n')
    
    if exit_program: _sys.exit(exit_code)
    return


def note(message, verbosity=1, level=1):
    """Print a progress note to stdout if the verbosity is high enough.
    
    Parameters:
      message (str):    Message to print.
      verbosity (int):  Current verbosity of the caller.
      level (int):      Minimum verbosity needed to print the message (optional, defaults to 1).
    """
    
    if verbosity >= level: print(_clr(str(message), 'cyan'))
    return
