#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# kinetiq documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

from kinetiq.version import __version__


# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',  # Reference documentation of other projects
    'sphinx.ext.todo',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',  # Google-style docstrings
    'sphinx.ext.autosummary',  # Create easy autodoc summaries
    'sphinx_autodoc_typehints']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'kinetiq'
copyright = '2026, kinetiq developers'
author = 'kinetiq developers'

version = '.'.join(__version__.split('.')[:2])
release = __version__

language = None
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = True

autosummary_generate = True


# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_static_path = ['_static']
htmlhelp_basename = 'kinetiqdoc'


# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    (master_doc, 'kinetiq.tex', 'kinetiq Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'kinetiq', 'kinetiq Documentation', [author], 1)
]


intersphinx_mapping = {'python': ('https://docs.python.org/3/', None),
                       'numpy': ('https://numpy.org/doc/stable/', None),
                       'scipy': ('https://docs.scipy.org/doc/scipy/', None),
                       'h5py': ('https://docs.h5py.org/en/stable/', None)}

default_role = 'any'
