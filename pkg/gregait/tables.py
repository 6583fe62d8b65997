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


"""Aligned text tables from pandas DataFrames, written next to a machine-readable JSON copy."""

import json as _json
import re as _re
from pathlib import Path as _Path

import numpy as _np


def header_format(fmt):
    """Derive the header format string from a C-style value format string (all conversions become %s).
    
    Parameters:
      fmt (str):  Value format, e.g. '%-10s %7.1f %7.1f'.
    
    Returns:
      (str):  Header format with the same field widths, e.g. '%-10s %7s %7s'.
    """
    
    hdr_fmt = fmt
    hdr_fmt = _re.sub(r'\.[0-9]*[ifegIFEG]', r's', hdr_fmt)  # Dot + number(s) + ifeg/IFEG
    hdr_fmt = _re.sub(r'[dicfegDICFEG]', r's', hdr_fmt)      # Any remaining letters w/o numbers
    hdr_fmt = _re.sub(r'%0*', r'%', hdr_fmt)                 # Leading zeros
    return hdr_fmt


def row_format(df, label_width=None, width=8, decimals=1):
    """Default row format for a table with a text index and numeric columns."""
    
    if label_width is None: label_width = max([len(str(idx)) for idx in df.index] + [len(str(df.index.name or '')), 4])
    return '%%-%is' % label_width + (' %%%i.%if' % (width, decimals))*len(df.columns)


def formatted_table(df, fmt=None):
    """Format a DataFrame (text index, numeric columns) as an aligned text table; missing values show as '-'.
    
    Parameters:
      df (pd.DataFrame):  Table to format.
      fmt (str):          C-style format of one row including the index column (optional, defaults to
                          row_format(df)).
    
    Returns:
      (str):  The table, one line per row plus a header line.
    """
    
    if fmt is None: fmt = row_format(df)
    hdr_fmt = header_format(fmt)
    
    lines = [hdr_fmt % tuple([df.index.name or ''] + [str(col) for col in df.columns])]
    for idx,ser in df.iterrows():  # Makes (index, Series) pairs out of rows
        vals = tuple(ser.values)
        if any(val is None or (isinstance(val, float) and _np.isnan(val)) for val in vals):
            # Format field by field so that missing values can be shown as a dash:
            fields = _re.findall(r'%[-0-9.]*[a-zA-Z]', fmt)
            cells = [fields[0] % str(idx)]
            for fld,val in zip(fields[1:], vals):
                missing = val is None or (isinstance(val, float) and _np.isnan(val))
                cells.append(header_format(fld) % '-' if missing else fld % val)
            lines.append(' '.join(cells))
        else:
            lines.append(fmt % ((str(idx),) + vals))
            
    return '\n'.join(lines)+'\n'


def write_table(df, file_name, fmt=None, title=None):
    """Write a DataFrame as an aligned text table (file_name) and as JSON (same name, suffix .json).
    
    Parameters:
      df (pd.DataFrame):  Table to write.
      file_name (str):    Text output file.
      fmt (str):          Row format (optional, see formatted_table()).
      title (str):        Title line above the table (optional).
    """
    
    file_name = _Path(file_name)
    text = formatted_table(df, fmt)
    if title: text = title+'\n'+text
    file_name.write_text(text)
    
    rows = {str(idx): {str(col): (None if _np.isnan(val) else float(val)) for col,val in ser.items()}
            for idx,ser in df.astype(float).iterrows()}
    file_name.with_suffix('.json').write_text(_json.dumps(rows, indent=2)+'\n')
    
    return
