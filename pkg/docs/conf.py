# Sphinx configuration of the temporalot documentation.
from pathlib import Path
import sys

ROOT = Path(__file__).parents[1].resolve()
sys.path.insert(0, ROOT.as_posix())

# -- Project -----------------------------------------------------------------

project = 'temporalot'
copyright = '2026, temporalot developers'
author = 'temporalot developers'
release = '1.0.0'
version = '.'.join(release.split('.')[:2])

# -- Extensions ----------------------------------------------------------------

extensions = ['sphinx.ext.autodoc',
              'sphinx.ext.viewcode',
              'sphinx.ext.intersphinx',
              'sphinx.ext.autosectionlabel',
              'sphinx.ext.doctest',
              'sphinx.ext.mathjax',
              ]

exclude_patterns = ['_build']
autodoc_member_order = 'bysource'
autodoc_default_options = {
    'members': True,
    'show-inheritance': True,
    'exclude-members': '__weakref__',
}
autosectionlabel_prefix_document = True

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'scipy': ('https://docs.scipy.org/doc/scipy', None),
}

# docstring examples print rounded floats and lists
doctest_global_setup = '''
import numpy as np
from temporalot import *
'''

# -- HTML ------------------------------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_theme_options = {
    'collapse_navigation': True,
    'navigation_depth': 3,
}
