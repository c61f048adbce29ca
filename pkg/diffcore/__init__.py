# This file makes the 'diffcore' directory a Python package.
