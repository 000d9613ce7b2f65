#!/usr/bin/env python
#
# difftime documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

sys.path.insert(0, os.path.abspath('../src'))

import xarray

xarray.DataArray.__module__ = "xarray"
xarray.Dataset.__module__ = "xarray"

import difftime


# -- General configuration ---------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosectionlabel',
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",
    'sphinx.ext.todo',
    'sphinx.ext.viewcode',
    'sphinx_codeautolink',
    'sphinx_copybutton',
]

autosectionlabel_prefix_document = True
autosectionlabel_maxdepth = 2

autodoc_default_options = {
    "members": True,
    "undoc-members": True,
    "private-members": False,
    "special-members": False,
}

intersphinx_mapping = {
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "pandas": ("https://pandas.pydata.org/docs/", None),
    "xarray": ("https://docs.xarray.dev/en/stable/", None),
}

templates_path = ['_templates']
source_suffix = {'.rst': 'restructuredtext'}
root_doc = "index"

# General information about the project.
project = 'difftime'
copyright = "2026, difftime developers"
author = "difftime developers"

# The short X.Y version.
version = difftime.__version__.split('-')[0]
# The full version, including alpha/beta/rc tags.
release = difftime.__version__

language = "en"
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False


# -- Options for HTML output -------------------------------------------

html_theme = "furo"
htmlhelp_basename = 'difftimedoc'
