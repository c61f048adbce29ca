# This file makes the 'icl' directory a Python package.
