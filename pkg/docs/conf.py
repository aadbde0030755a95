# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# swampkit/docs/conf.py

import os
import sys
from datetime import datetime

# -- Path setup --------------------------------------------------------------

sys.path.insert(0, os.path.abspath('..'))  # repo root, so autodoc can import swampkit

# -- Project information -----------------------------------------------------

project = 'swampkit'
author = 'swampkit developers'
copyright = f'{datetime.now().year}, {author}'

try:
    from swampkit import __version__ as release
except ImportError:
    release = '0.1.0'

version = '.'.join(release.split('.')[:2])

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.napoleon',        # Google and NumPy style docstrings
    'sphinx.ext.viewcode',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',         # formulas in the guides
    'myst_nb',                    # MyST Markdown pages
    'sphinx_copybutton',
    'sphinx_autodoc_typehints',
]

myst_enable_extensions = [
    "amsmath",
    "colon_fence",
    "deflist",
    "dollarmath",
    "replacements",
    "smartquotes",
]
myst_heading_anchors = 3

# the guides contain no executable notebooks
nb_execution_mode = "off"

napoleon_google_docstring = True
napoleon_numpy_docstring = True
napoleon_include_init_with_doc = True
napoleon_use_ivar = True
napoleon_attr_annotations = True

autodoc_member_order = 'bysource'
autodoc_default_options = {
    'members': True,
    'member-order': 'bysource',
    'undoc-members': False,
    'show-inheritance': True,
}

set_type_checking_flag = True
always_document_param_types = True
typehints_fully_qualified = False

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
    'pandas': ('https://pandas.pydata.org/pandas-docs/stable/', None),
    'mlflow': ('https://mlflow.org/docs/latest/', None),
    'hydra_zen': ('https://mit-ll-responsible-ai.github.io/hydra-zen/', None),
}

source_suffix = {
    '.rst': 'restructuredtext',
    '.md': 'myst-nb',
}

master_doc = 'index'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_theme_options = {
    'display_version': True,
    'prev_next_buttons_location': 'bottom',
    'collapse_navigation': True,
    'sticky_navigation': True,
    'navigation_depth': 4,
}
html_show_sourcelink = True
