# -*- coding: utf-8 -*-
#
# Sphinx configuration for the hand documentation.

import os
import re
import sys

# Markdown pages (README.md) are parsed by recommonmark.
import recommonmark  # noqa

sys.path.insert(0, os.path.abspath('..'))

project = u'hand'
author = u'hand developers'
copyright = u'2026, ' + author

# Version comes from the nearest git tag, "v" prefix dropped.
release = re.sub(
    '^v', '', os.popen('git describe --tags 2>/dev/null').read().strip()
) or '0.0.0'
version = '.'.join(release.split('.')[:2])

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
    'sphinx_markdown_tables',
]

source_suffix = ['.rst', '.md']
source_parsers = {
    '.md': 'recommonmark.parser.CommonMarkParser',
}
master_doc = 'index'
exclude_patterns = ['_build', 'env']

autodoc_member_order = 'bysource'
autodoc_mock_imports = ['tqdm']
napoleon_numpy_docstring = True
napoleon_google_docstring = False
doctest_global_setup = 'import numpy as np'

html_theme = 'sphinx_materialdesign_theme'
html_theme_options = {
    'header_links': [
        ('Home', 'index', False, 'home'),
        ('Modules', 'modules', False, 'view_module'),
    ],
    'primary_color': 'blue_grey',
    'accent_color': 'amber',
    'fixed_drawer': True,
    'show_header_title': True,
    'show_drawer_title': False,
}
html_sidebars = {'**': ['localtoc.html', 'searchbox.html']}
htmlhelp_basename = 'hand-doc'

man_pages = [
    ('index', 'hand', u'handwritten page recognition', [author], 1),
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
}
