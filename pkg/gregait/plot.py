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


"""Plot functions for the gregait package: training-loss curves and CMC curves."""

import json as _json

import matplotlib as _mpl               # Get matplotlib
import matplotlib.pyplot as _plt        # Get matplotlib.pyplot
import numpy as _np                     # Get NumPy

from gregait.cli import error as _error


LOSS_KEYS = ('L_tri', 'L_ce', 'L_rec', 'L_smo', 'L_div', 'L_total')


def start_plot(ptype='file', hsize=None,vsize=None, title='gregait plot', fz=None,lw=None, cblind=True):
    """Start a matplotlib.pyplot plot.
    
    Parameters:
      ptype (str):        Plot type: 'file' (default), 'both' or 'square'.
      hsize (float):      Horizontal size of the figure (pixels if >50, hectopixels otherwise); can overrule setting by ptype.
      vsize (float):      Vertical size of the figure (pixels if >50, hectopixels otherwise); can overrule setting by ptype.
      title (str):        Window title (optional, defaults to 'gregait plot').
      fz (int):           Font size (optional, defaults to None -> 14 or 16).
      lw (int):           Line width (optional, defaults to None -> 2).
      cblind (bool):      Choose a colour-blindness-aware colour palette (optional, defaults to True).
    
    Returns:
      (tuple):  Tuple (fig,ax) containing the figure and axis objects.
    
    Defaults:
      - file:   size 1250x700,  font 14 - aimed for file -> report;
      - both:   size 1580x850,  font 16 - a compromise between screen and file;
      - square: size 850x850,   font 16 - a square plot.
    """
    
    if cblind is True: _plt.style.use('tableau-colorblind10')
    
    # If size>50, assume pixels/"dots" are specified; convert to "inches":
    if hsize is not None and hsize>50: hsize /= 100  # default: 100 dpi
    if vsize is not None and vsize>50: vsize /= 100  # default: 100 dpi
    
    sizes = {'file': (12.5, 7.0, 14), 'both': (15.8, 8.5, 16), 'square': (8.5, 8.5, 16)}
    if ptype not in sizes: _error('Unknown plot type: '+ptype+', aborting.')
    
    if hsize is None: hsize = sizes[ptype][0]
    if vsize is None: vsize = sizes[ptype][1]
    _mpl.rcParams.update({'font.size': sizes[ptype][2] if fz is None else fz})
    _mpl.rcParams.update({'lines.linewidth': 2 if lw is None else lw})
    
    # Find unique plot title ("number") - doublets cause mixed plots!
    titlel = title
    plotnum = 2
    while _plt.fignum_exists(titlel):
        titlel = title + ' ' + str(plotnum)
        plotnum += 1
        
    fig = _plt.figure(figsize=(hsize,vsize), num=titlel)
    ax = fig.add_subplot(111)
    
    return fig, ax


def finish_plot(fig,ax, file_name=None, title=None, xlbl=None,ylbl=None, legend=False, grid=True,
                logy=False, tight=1):
    """Save the current figure to disc (or show it on screen) and close it.
    
    Parameters:
      fig (pyplot.figure):  Current Pyplot figure object.
      ax (pyplot axes):     Current Pyplot axes object.
      file_name (str):      Name for the output file (optional, defaults to None -> screen).
    
      title (str):          Text to use as plot title (optional, defaults to None).
      xlbl (str):           Text to use as label for the horizontal axis (optional, defaults to None).
      ylbl (str):           Text to use as label for the vertical axis (optional, defaults to None).
    
      legend (bool):        Show a legend (optional, defaults to False).
      grid (bool):          Show a grid (optional, defaults to True).
      logy (bool):          Make the vertical axis logarithmic (optional, defaults to False -> linear).
      tight (int):          Tightness of the margins: 0: not at all, 1: some (default), 2: very.
    """
    
    if title is not None: ax.set_title(title)
    if xlbl is not None:  ax.set_xlabel(xlbl)
    if ylbl is not None:  ax.set_ylabel(ylbl)
    
    if legend: ax.legend(loc='best')
    if logy:   ax.set_yscale('log')
    if grid:   ax.grid(grid)
    
    if tight>0: fig.tight_layout()
    
    if file_name is None:
        _plt.show()
    else:
        if tight>1:
            fig.savefig(file_name, bbox_inches='tight')
        else:
            fig.savefig(file_name)
            
    _plt.close(fig=fig)
    return


def read_training_log(log_file):
    """Read a JSON-lines training log into a dict of arrays, keyed by 'iter', 'lr' and the loss names."""
    
    with open(log_file) as fh:
        rows = [_json.loads(line) for line in fh if line.strip()]
        
    return {key: _np.array([row[key] for row in rows]) for key in ('iter', 'lr')+LOSS_KEYS if rows and key in rows[0]}


def plot_training_log(log_file, file_name=None, logy=True):
    """Plot the loss components of a training log against iteration.
    
    Parameters:
      log_file (str):   JSON-lines training log.
      file_name (str):  Output PNG (optional, defaults to None -> screen).
      logy (bool):      Logarithmic loss axis (optional, defaults to True).
    """
    
    log = read_training_log(log_file)
    if 'iter' not in log: _error('Empty training log: '+str(log_file))
    
    fig, ax = start_plot(title='training loss')
    for key in LOSS_KEYS:
        vals = log.get(key)
        if vals is None: continue
        if logy and not (vals > 0).any(): continue  # A log axis cannot show an all-zero component
        ax.plot(log['iter'], _np.where(vals > 0, vals, _np.nan) if logy else vals, label=key)
        
    finish_plot(fig, ax, file_name, xlbl='iteration', ylbl='loss', legend=True, logy=logy)
    return


def plot_cmc(cmc, file_name=None, labels=None):
    """Plot one or more cumulative match curves.
    
    Parameters:
      cmc (float):      Array (n_ranks) or list of such arrays, in percent.
      file_name (str):  Output PNG (optional, defaults to None -> screen).
      labels (list):    Curve labels (optional).
    """
    
    curves = [cmc] if _np.ndim(cmc[0]) == 0 else list(cmc)
    fig, ax = start_plot(ptype='square', title='CMC')
    for icur,curve in enumerate(curves):
        ax.plot(_np.arange(1, len(curve)+1), curve, 'o-', label=None if labels is None else labels[icur])
        
    ax.set_ylim(0, 100)
    finish_plot(fig, ax, file_name, xlbl='rank', ylbl='identification rate (%)', legend=labels is not None)
    return
